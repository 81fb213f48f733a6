#pragma once

#include <stdexcept>
#include <string>

namespace earl {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a sampler cannot produce more distinct records.
class SampleExhausted : public Error {
 public:
  explicit SampleExhausted(const std::string& what) : Error(what) {}
};

}  // namespace earl
