#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_set>
#include <vector>

#include "earl/datastore.hpp"
#include "earl/error.hpp"
#include "earl/record.hpp"
#include "earl/rng.hpp"

namespace earl {

enum class SampleMode { pre_map, post_map, reservoir };

inline const char* to_string(SampleMode m) {
  switch (m) {
    case SampleMode::pre_map: return "pre";
    case SampleMode::post_map: return "post";
    case SampleMode::reservoir: return "reservoir";
  }
  return "?";
}

struct Batch {
  std::size_t index = 0;  // 1-based delta index
  std::size_t size = 0;
};

// The current uniform sample, partitioned into the delta batches that built it.
struct Sample {
  std::vector<Record> items;
  std::vector<Batch> batches;
  SampleMode mode = SampleMode::pre_map;
  double kv_count_estimate = 0;
  bool saturated = false;

  std::size_t size() const { return items.size(); }

  std::vector<std::size_t> batch_offsets() const {
    std::vector<std::size_t> offs(batches.size() + 1, 0);
    for (std::size_t k = 0; k < batches.size(); ++k) offs[k + 1] = offs[k] + batches[k].size;
    return offs;
  }

  void append_batch(std::vector<Record> fresh) {
    batches.push_back(Batch{batches.size() + 1, fresh.size()});
    for (auto& r : fresh) items.push_back(std::move(r));
  }

  bool check_invariants() const {
    std::size_t total = 0;
    for (const auto& b : batches) total += b.size;
    if (total != items.size()) return false;
    std::unordered_set<std::uint64_t> seen;
    for (const auto& r : items)
      if (!seen.insert(r.origin.line_start).second) return false;
    return true;
  }
};

// Per-split sets of line starts already included in the sample.
class InclusionBitmap {
 public:
  InclusionBitmap() = default;
  explicit InclusionBitmap(std::size_t split_count) : per_split_(split_count) {}

  bool contains(const RecordOrigin& o) const {
    if (o.split_id >= per_split_.size()) return false;
    return per_split_[o.split_id].contains(o.line_start);
  }
  void insert(const RecordOrigin& o) {
    if (o.split_id >= per_split_.size()) per_split_.resize(o.split_id + 1);
    per_split_[o.split_id].insert(o.line_start);
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& s : per_split_) n += s.size();
    return n;
  }

 private:
  std::vector<std::unordered_set<std::uint64_t>> per_split_;
};

namespace detail {

// Retry budget before a sampler declares the dataset exhausted.
inline constexpr std::size_t kAttemptFactor = 50;

struct PremapDraw {
  std::vector<Record> records;
  double line_bytes = 0;  // total bytes of the included lines, newline included
  bool exhausted = false;
};

// Uniform split, uniform byte within the split, resolved to a line. An
// end-of-file resolution wraps to the first line so byte-uniform draws are
// line-uniform on equal-length lines.
inline PremapDraw premap_draw(const BlockFile& bf, const std::vector<Split>& splits,
                              std::size_t want, InclusionBitmap& bitmap, Rng& rng) {
  PremapDraw out;
  std::uniform_int_distribution<std::size_t> pick_split(0, splits.size() - 1);
  std::size_t attempts_left = kAttemptFactor * std::max<std::size_t>(want, 1);
  while (out.records.size() < want) {
    if (attempts_left-- == 0) {
      out.exhausted = true;
      return out;
    }
    const Split& sp = splits[pick_split(rng)];
    std::uniform_int_distribution<std::uint64_t> pick_pos(sp.start, sp.start + sp.length - 1);
    std::optional<Record> rec = bf.read_line_at(sp, pick_pos(rng));
    if (!rec) rec = bf.resolve(0);  // cyclic completion
    if (!rec) {
      out.exhausted = true;  // no complete line anywhere
      return out;
    }
    if (bitmap.contains(rec->origin)) continue;
    bitmap.insert(rec->origin);
    const std::string& d = bf.data();
    std::size_t end = d.find('\n', rec->origin.line_start);
    out.line_bytes += static_cast<double>(end - rec->origin.line_start + 1);
    out.records.push_back(std::move(*rec));
  }
  return out;
}

}  // namespace detail

// Draws target_n fresh records by random byte offsets, updating the bitmap.
inline Sample premap_sample(const BlockFile& bf, std::size_t target_n, InclusionBitmap& bitmap,
                            Rng& rng) {
  if (target_n == 0) throw Error("target sample size must be positive");
  auto splits = bf.logical_splits();
  if (splits.empty()) throw Error("empty dataset: " + bf.path());
  auto draw = detail::premap_draw(bf, splits, target_n, bitmap, rng);
  if (draw.exhausted) throw SampleExhausted("pre-map sample exhausts dataset");
  Sample s;
  s.mode = SampleMode::pre_map;
  s.append_batch(std::move(draw.records));
  s.kv_count_estimate =
      static_cast<double>(bf.total_bytes()) / (draw.line_bytes / static_cast<double>(target_n));
  return s;
}

// Keyed in-memory store filled from a full read; draws remove records.
class RecordStore {
 public:
  explicit RecordStore(std::vector<Record> records) : records_(std::move(records)) {}

  std::size_t remaining() const { return records_.size(); }

  std::vector<Record> draw_without_replacement(std::size_t n, Rng& rng) {
    if (n > records_.size()) throw Error("store holds fewer records than requested");
    std::vector<Record> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, records_.size() - 1);
      std::size_t j = pick(rng);
      out.push_back(std::move(records_[j]));
      records_[j] = std::move(records_.back());
      records_.pop_back();
    }
    return out;
  }

 private:
  std::vector<Record> records_;
};

// Reads and parses the whole stream, then draws without replacement.
inline Sample postmap_sample(std::vector<Record> records, std::size_t target_n, Rng& rng) {
  if (target_n == 0) throw Error("target sample size must be positive");
  if (records.size() < target_n) throw Error("full-data mode: stream shorter than sample size");
  double total = static_cast<double>(records.size());
  RecordStore store(std::move(records));
  Sample s;
  s.mode = SampleMode::post_map;
  s.append_batch(store.draw_without_replacement(target_n, rng));
  s.kv_count_estimate = total;
  return s;
}

// Classic single-pass reservoir; the uniformity oracle for the other samplers.
template <typename NextFn>
std::vector<Record> reservoir_draw(NextFn&& next, std::size_t n, Rng& rng) {
  std::vector<Record> reservoir;
  reservoir.reserve(n);
  std::size_t seen = 0;
  while (auto r = next()) {
    ++seen;
    if (reservoir.size() < n) {
      reservoir.push_back(std::move(*r));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, seen - 1);
      std::size_t j = pick(rng);
      if (j < n) reservoir[j] = std::move(*r);
    }
  }
  return reservoir;
}

inline Sample reservoir_sample(const std::vector<Record>& records, std::size_t n, Rng& rng) {
  if (n == 0) throw Error("target sample size must be positive");
  std::size_t i = 0;
  auto next = [&]() -> std::optional<Record> {
    if (i >= records.size()) return std::nullopt;
    return records[i++];
  };
  Sample s;
  s.mode = SampleMode::reservoir;
  s.append_batch(reservoir_draw(next, n, rng));
  s.kv_count_estimate = static_cast<double>(records.size());
  if (records.size() < n) s.saturated = true;
  return s;
}

// A sampler owns the duplicate bookkeeping so a sample can keep growing
// without replacement across its whole lifetime.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual Sample initial(std::size_t target_n) = 0;
  // Appends a batch of up to delta_n fresh records; returns false (and sets
  // the saturated flag) when the dataset ran out first.
  virtual bool expand(Sample& s, std::size_t delta_n) = 0;
  virtual SampleMode mode() const = 0;
};

class PremapSampler final : public Sampler {
 public:
  PremapSampler(BlockFile bf, Rng rng)
      : bf_(std::move(bf)), splits_(bf_.logical_splits()), bitmap_(splits_.size()),
        rng_(std::move(rng)) {}

  Sample initial(std::size_t target_n) override {
    auto draw = detail::premap_draw(bf_, splits_, target_n, bitmap_, rng_);
    if (draw.exhausted && draw.records.empty())
      throw SampleExhausted("pre-map sample exhausts dataset");
    included_ += draw.records.size();
    line_bytes_ += draw.line_bytes;
    Sample s;
    s.mode = SampleMode::pre_map;
    s.saturated = draw.exhausted;
    s.append_batch(std::move(draw.records));
    s.kv_count_estimate = kv_estimate();
    return s;
  }

  bool expand(Sample& s, std::size_t delta_n) override {
    auto draw = detail::premap_draw(bf_, splits_, delta_n, bitmap_, rng_);
    included_ += draw.records.size();
    line_bytes_ += draw.line_bytes;
    s.append_batch(std::move(draw.records));
    s.kv_count_estimate = kv_estimate();
    if (draw.exhausted) s.saturated = true;
    return !draw.exhausted;
  }

  SampleMode mode() const override { return SampleMode::pre_map; }

 private:
  double kv_estimate() const {
    if (included_ == 0) return 0;
    return static_cast<double>(bf_.total_bytes()) /
           (line_bytes_ / static_cast<double>(included_));
  }

  BlockFile bf_;
  std::vector<Split> splits_;
  InclusionBitmap bitmap_;
  Rng rng_;
  double line_bytes_ = 0;
  std::size_t included_ = 0;
};

class PostmapSampler final : public Sampler {
 public:
  PostmapSampler(std::vector<Record> records, Rng rng)
      : total_(records.size()), store_(std::move(records)), rng_(std::move(rng)) {}

  PostmapSampler(const BlockFile& bf, Rng rng) : PostmapSampler(scan_all(bf), std::move(rng)) {}

  Sample initial(std::size_t target_n) override {
    if (store_.remaining() < target_n)
      throw Error("full-data mode: stream shorter than sample size");
    Sample s;
    s.mode = SampleMode::post_map;
    s.append_batch(store_.draw_without_replacement(target_n, rng_));
    s.kv_count_estimate = static_cast<double>(total_);
    return s;
  }

  bool expand(Sample& s, std::size_t delta_n) override {
    std::size_t got = std::min(delta_n, store_.remaining());
    s.append_batch(store_.draw_without_replacement(got, rng_));
    if (got < delta_n) s.saturated = true;
    return got == delta_n;
  }

  SampleMode mode() const override { return SampleMode::post_map; }

 private:
  std::size_t total_;
  RecordStore store_;
  Rng rng_;
};

class ReservoirSampler final : public Sampler {
 public:
  ReservoirSampler(BlockFile bf, Rng rng) : bf_(std::move(bf)), rng_(std::move(rng)) {}

  Sample initial(std::size_t target_n) override {
    RecordScanner sc(bf_);
    std::size_t seen_total = 0;
    auto next = [&]() -> std::optional<Record> {
      auto r = sc.next();
      if (r) ++seen_total;
      return r;
    };
    Sample s;
    s.mode = SampleMode::reservoir;
    auto picked = reservoir_draw(next, target_n, rng_);
    if (picked.size() < target_n) s.saturated = true;
    for (const auto& r : picked) taken_.insert(r.origin.line_start);
    s.append_batch(std::move(picked));
    s.kv_count_estimate = static_cast<double>(seen_total);
    return s;
  }

  bool expand(Sample& s, std::size_t delta_n) override {
    RecordScanner sc(bf_);
    auto next = [&]() -> std::optional<Record> {
      while (auto r = sc.next()) {
        if (!taken_.contains(r->origin.line_start)) return r;
      }
      return std::nullopt;
    };
    auto picked = reservoir_draw(next, delta_n, rng_);
    bool full = picked.size() == delta_n;
    for (const auto& r : picked) taken_.insert(r.origin.line_start);
    s.append_batch(std::move(picked));
    if (!full) s.saturated = true;
    return full;
  }

  SampleMode mode() const override { return SampleMode::reservoir; }

 private:
  BlockFile bf_;
  Rng rng_;
  std::unordered_set<std::uint64_t> taken_;
};

inline std::unique_ptr<Sampler> make_sampler(SampleMode mode, const BlockFile& bf, Rng rng) {
  switch (mode) {
    case SampleMode::pre_map: return std::make_unique<PremapSampler>(bf, std::move(rng));
    case SampleMode::post_map: return std::make_unique<PostmapSampler>(bf, std::move(rng));
    case SampleMode::reservoir: return std::make_unique<ReservoirSampler>(bf, std::move(rng));
  }
  throw Error("unknown sampler mode");
}

// Grows s by one delta batch of delta_n fresh records.
inline Sample expand_sample(Sample s, std::size_t delta_n, Sampler& sampler) {
  if (delta_n == 0) throw Error("delta size must be positive");
  sampler.expand(s, delta_n);
  return s;
}

}  // namespace earl
