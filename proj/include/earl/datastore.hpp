#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "earl/error.hpp"
#include "earl/record.hpp"

namespace earl {

inline constexpr std::uint64_t kDefaultBlockSize = 1u << 20;  // 1 MiB

struct Split {
  std::size_t split_id = 0;
  std::uint64_t start = 0;
  std::uint64_t length = 0;
};

// Block-partitioned, newline-delimited record file. The content is loaded once
// and shared; readers are thread-safe.
class BlockFile {
 public:
  BlockFile() = default;

  static BlockFile open(const std::string& path, std::uint64_t block_size = kDefaultBlockSize) {
    if (block_size == 0) throw Error("block size must be positive");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset: " + path);
    auto data = std::make_shared<std::string>(std::istreambuf_iterator<char>(in),
                                              std::istreambuf_iterator<char>());
    if (in.bad()) throw Error("failed reading dataset: " + path);
    if (data->empty()) throw Error("empty dataset: " + path);
    BlockFile bf;
    bf.path_ = path;
    bf.data_ = std::move(data);
    bf.block_size_ = block_size;
    return bf;
  }

  const std::string& path() const { return path_; }
  std::uint64_t total_bytes() const { return data_ ? data_->size() : 0; }
  std::uint64_t block_size() const { return block_size_; }
  const std::string& data() const { return *data_; }

  std::optional<std::uint64_t> record_count_estimate() const { return record_count_estimate_; }
  void set_record_count_estimate(std::uint64_t n) { record_count_estimate_ = n; }

  std::vector<Split> logical_splits() const {
    std::vector<Split> splits;
    std::uint64_t total = total_bytes();
    for (std::uint64_t off = 0, id = 0; off < total; off += block_size_, ++id) {
      splits.push_back(Split{static_cast<std::size_t>(id), off,
                             std::min<std::uint64_t>(block_size_, total - off)});
    }
    return splits;
  }

  std::size_t split_id_of(std::uint64_t byte) const {
    return static_cast<std::size_t>(byte / block_size_);
  }

  // Resolves a byte position to a record. A position at a line start yields
  // that line; anywhere inside a line skips forward past the next newline and
  // yields the following line (reading across split boundaries as needed).
  // Returns nullopt when no complete line follows the position.
  std::optional<Record> read_line_at(const Split& split, std::uint64_t pos) const {
    if (pos < split.start || pos >= split.start + split.length)
      throw Error("position outside split");
    return resolve(pos);
  }

  std::optional<Record> resolve(std::uint64_t pos) const {
    const std::string& d = *data_;
    std::uint64_t line_start = pos;
    if (pos != 0 && d[pos - 1] != '\n') {
      std::size_t nl = d.find('\n', pos);
      if (nl == std::string::npos) return std::nullopt;
      line_start = nl + 1;
      if (line_start >= d.size()) return std::nullopt;
    }
    std::size_t end = d.find('\n', line_start);
    if (end == std::string::npos) return std::nullopt;  // unterminated trailing bytes
    std::string_view line(d.data() + line_start, end - line_start);
    return parse_record(line, RecordOrigin{static_cast<std::uint32_t>(split_id_of(line_start)),
                                           line_start});
  }

 private:
  std::string path_;
  std::shared_ptr<const std::string> data_;
  std::uint64_t block_size_ = kDefaultBlockSize;
  std::optional<std::uint64_t> record_count_estimate_;
};

inline BlockFile open_dataset(const std::string& path,
                              std::uint64_t block_size = kDefaultBlockSize) {
  return BlockFile::open(path, block_size);
}

inline std::vector<Split> logical_splits(const BlockFile& bf) { return bf.logical_splits(); }

inline std::optional<Record> read_line_at(const BlockFile& bf, const Split& split,
                                          std::uint64_t pos) {
  return bf.read_line_at(split, pos);
}

// Sequential scan over every complete line of the file.
class RecordScanner {
 public:
  explicit RecordScanner(const BlockFile& bf) : bf_(&bf) {}

  std::optional<Record> next() {
    const std::string& d = bf_->data();
    if (pos_ >= d.size()) return std::nullopt;
    std::size_t end = d.find('\n', pos_);
    if (end == std::string::npos) {
      pos_ = d.size();
      return std::nullopt;
    }
    std::string_view line(d.data() + pos_, end - pos_);
    Record r = parse_record(
        line, RecordOrigin{static_cast<std::uint32_t>(bf_->split_id_of(pos_)), pos_});
    pos_ = end + 1;
    return r;
  }

  void reset() { pos_ = 0; }

 private:
  const BlockFile* bf_;
  std::uint64_t pos_ = 0;
};

inline std::vector<Record> scan_all(const BlockFile& bf) {
  std::vector<Record> out;
  RecordScanner sc(bf);
  while (auto r = sc.next()) out.push_back(std::move(*r));
  return out;
}

}  // namespace earl
