#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "earl/error.hpp"
#include "earl/rng.hpp"

namespace earl {

enum class DatasetKind { uniform, normal, clustered, categorical };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::uniform: return "uniform";
    case DatasetKind::normal: return "normal";
    case DatasetKind::clustered: return "clustered";
    case DatasetKind::categorical: return "categorical";
  }
  return "?";
}

inline DatasetKind dataset_kind_from(const std::string& s) {
  if (s == "uniform") return DatasetKind::uniform;
  if (s == "normal") return DatasetKind::normal;
  if (s == "clustered") return DatasetKind::clustered;
  if (s == "categorical") return DatasetKind::categorical;
  throw Error("unknown dataset kind: " + s);
}

struct GenSpec {
  DatasetKind kind = DatasetKind::normal;
  std::uint64_t rows = 0;
  std::uint64_t seed = 0;
  // scalar distributions
  double mu = 0.2;
  double sd = 1.0;
  double lo = 0.0;
  double hi = 1.0;
  // clustered 2-D points, grouped on disk by cluster
  std::size_t clusters = 4;
  double cluster_sd = 1.0;
  double cluster_radius = 10.0;
  // categorical
  double p_success = 0.3;
  std::string success_label = "yes";
  std::string failure_label = "no";
};

struct Manifest {
  GenSpec spec;
  double true_mean = 0;
  double true_median = 0;
  double true_sum = 0;
  double true_proportion = 0;
  std::vector<std::vector<double>> centroids;
  double cluster_gap = 0;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j{{"kind", to_string(m.spec.kind)},
                   {"rows", m.spec.rows},
                   {"seed", m.spec.seed},
                   {"true_mean", m.true_mean},
                   {"true_median", m.true_median},
                   {"true_sum", m.true_sum},
                   {"true_proportion", m.true_proportion},
                   {"cluster_gap", m.cluster_gap},
                   {"centroids", m.centroids}};
  return j;
}

namespace detail {

// Values are rounded to the 6 decimals that reach the file, so manifest
// truths match a re-parse of the emitted bytes exactly.
inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

// Fixed-width scalar formatting keeps every line the same length (values are
// kept well inside +/-10).
inline void append_scalar_line(std::string& out, std::uint64_t row, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "k%08llu\t%+9.6f\n",
                static_cast<unsigned long long>(row), v);
  out += buf;
}

}  // namespace detail

// Writes the dataset and a JSON manifest (path + ".manifest.json") recording
// the exact truths of the emitted rows.
inline Manifest generate_dataset(const std::string& path, const GenSpec& spec) {
  if (spec.rows == 0) throw Error("rows must be positive");
  Rng rng = make_rng(spec.seed, Stream::generator);
  Manifest m;
  m.spec = spec;

  std::string chunk;
  chunk.reserve(1 << 22);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write dataset: " + path);
  auto flush_chunk = [&] {
    out.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    chunk.clear();
  };

  switch (spec.kind) {
    case DatasetKind::uniform:
    case DatasetKind::normal: {
      std::normal_distribution<double> gauss(spec.mu, spec.sd);
      std::uniform_real_distribution<double> unif(spec.lo, spec.hi);
      std::vector<double> values;
      values.reserve(spec.rows);
      double sum = 0;
      for (std::uint64_t i = 0; i < spec.rows; ++i) {
        double v = spec.kind == DatasetKind::normal ? gauss(rng) : unif(rng);
        v = detail::round6(std::clamp(v, -9.999999, 9.999999));
        detail::append_scalar_line(chunk, i, v);
        values.push_back(v);
        sum += v;
        if (chunk.size() > (1 << 22) - 64) flush_chunk();
      }
      flush_chunk();
      m.true_sum = sum;
      m.true_mean = sum / static_cast<double>(spec.rows);
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      std::size_t n = sorted.size();
      m.true_median =
          n % 2 == 1 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
      break;
    }
    case DatasetKind::clustered: {
      if (spec.clusters == 0) throw Error("clusters must be positive");
      std::normal_distribution<double> noise(0.0, spec.cluster_sd);
      std::vector<std::vector<double>> centers;
      for (std::size_t c = 0; c < spec.clusters; ++c) {
        double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(spec.clusters);
        centers.push_back({spec.cluster_radius * std::cos(angle),
                           spec.cluster_radius * std::sin(angle)});
      }
      std::vector<std::vector<double>> sums(spec.clusters, {0.0, 0.0});
      std::vector<std::uint64_t> sizes(spec.clusters, 0);
      for (std::uint64_t i = 0; i < spec.rows; ++i) {
        std::size_t c = static_cast<std::size_t>(i * spec.clusters / spec.rows);
        double x = detail::round6(centers[c][0] + noise(rng));
        double y = detail::round6(centers[c][1] + noise(rng));
        char buf[64];
        std::snprintf(buf, sizeof(buf), "k%08llu\t%+.6f,%+.6f\n",
                      static_cast<unsigned long long>(i), x, y);
        chunk += buf;
        sums[c][0] += x;
        sums[c][1] += y;
        ++sizes[c];
        if (chunk.size() > (1 << 22) - 64) flush_chunk();
      }
      flush_chunk();
      for (std::size_t c = 0; c < spec.clusters; ++c) {
        if (sizes[c] == 0) throw Error("empty cluster; use more rows");
        m.centroids.push_back(
            {sums[c][0] / static_cast<double>(sizes[c]),
             sums[c][1] / static_cast<double>(sizes[c])});
      }
      std::sort(m.centroids.begin(), m.centroids.end());
      double gap = INFINITY;
      for (std::size_t a = 0; a < m.centroids.size(); ++a)
        for (std::size_t b = a + 1; b < m.centroids.size(); ++b) {
          double dx = m.centroids[a][0] - m.centroids[b][0];
          double dy = m.centroids[a][1] - m.centroids[b][1];
          gap = std::min(gap, std::sqrt(dx * dx + dy * dy));
        }
      m.cluster_gap = gap;
      break;
    }
    case DatasetKind::categorical: {
      std::bernoulli_distribution bern(spec.p_success);
      std::uint64_t successes = 0;
      for (std::uint64_t i = 0; i < spec.rows; ++i) {
        bool hit = bern(rng);
        successes += hit ? 1 : 0;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "k%08llu\t%s\n", static_cast<unsigned long long>(i),
                      hit ? spec.success_label.c_str() : spec.failure_label.c_str());
        chunk += buf;
        if (chunk.size() > (1 << 22) - 64) flush_chunk();
      }
      flush_chunk();
      m.true_proportion =
          static_cast<double>(successes) / static_cast<double>(spec.rows);
      break;
    }
  }
  if (!out) throw Error("failed writing dataset: " + path);
  out.close();

  std::ofstream mf(path + ".manifest.json", std::ios::trunc);
  if (!mf) throw Error("cannot write manifest for: " + path);
  mf << to_json(m).dump(2) << "\n";
  return m;
}

inline Manifest load_manifest(const std::string& dataset_path) {
  std::ifstream in(dataset_path + ".manifest.json");
  if (!in) throw Error("missing manifest for: " + dataset_path);
  nlohmann::json j = nlohmann::json::parse(in);
  Manifest m;
  m.spec.kind = dataset_kind_from(j.at("kind").get<std::string>());
  m.spec.rows = j.at("rows").get<std::uint64_t>();
  m.spec.seed = j.at("seed").get<std::uint64_t>();
  m.true_mean = j.at("true_mean").get<double>();
  m.true_median = j.at("true_median").get<double>();
  m.true_sum = j.at("true_sum").get<double>();
  m.true_proportion = j.at("true_proportion").get<double>();
  m.cluster_gap = j.at("cluster_gap").get<double>();
  m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  return m;
}

}  // namespace earl
