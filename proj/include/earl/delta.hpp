#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "earl/bootstrap.hpp"
#include "earl/error.hpp"
#include "earl/rng.hpp"
#include "earl/sampling.hpp"

namespace earl {

enum class SizeMode { exact_binomial, gaussian_approx };

struct SizeModel {
  std::size_t n = 0;        // old sample size
  std::size_t n_prime = 0;  // new sample size
  SizeMode mode = SizeMode::exact_binomial;
};

// The Gaussian approximation is used only when the distribution is wide enough
// that a clamped tail carries less than ~1e-6 mass (5-sigma headroom on both
// sides) and the sizes are large.
inline SizeMode choose_size_mode(std::size_t n, std::size_t n_prime) {
  if (n_prime < 10000) return SizeMode::exact_binomial;
  double dn = static_cast<double>(n), dnp = static_cast<double>(n_prime);
  double sigma0 = std::sqrt(dn * (1.0 - dn / dnp));
  if (sigma0 <= 0) return SizeMode::exact_binomial;
  if (dn / sigma0 < 5.0 || (dnp - dn) / sigma0 < 5.0) return SizeMode::exact_binomial;
  return SizeMode::gaussian_approx;
}

// |b'_s| — how many of the n' new draws land in the old region.
inline std::size_t sample_new_old_part_size(const SizeModel& m, Rng& rng) {
  if (m.n > m.n_prime || m.n_prime == 0) throw Error("invalid size model");
  if (m.n == m.n_prime) return m.n_prime;
  double p = static_cast<double>(m.n) / static_cast<double>(m.n_prime);
  if (m.mode == SizeMode::exact_binomial) {
    std::binomial_distribution<std::size_t> bin(m.n_prime, p);
    return bin(rng);
  }
  double sigma0 = std::sqrt(static_cast<double>(m.n) * (1.0 - p));
  std::normal_distribution<double> gauss(static_cast<double>(m.n), sigma0);
  double draw = std::round(gauss(rng));
  draw = std::clamp(draw, 0.0, static_cast<double>(m.n_prime));
  return static_cast<std::size_t>(draw);
}

// Positions removed from / added to a resample during one maintenance step,
// with multiplicity. Lets callers maintain retractable job states in lock-step.
struct ResampleEdits {
  std::vector<std::uint32_t> deleted;
  std::vector<std::uint32_t> added;
};

namespace detail {

inline void validate_expansion(const Resample& b, const Sample& expanded) {
  auto offs = expanded.batch_offsets();
  if (offs.size() != b.batch_offsets.size() + 1)
    throw Error("expanded sample must add exactly one batch");
  for (std::size_t i = 0; i < b.batch_offsets.size(); ++i)
    if (offs[i] != b.batch_offsets[i]) throw Error("batch layout changed under the resample");
  if (offs[offs.size() - 2] != b.positions())
    throw Error("resample was not drawn from the pre-expansion sample");
}

// n_del distinct instances, multiplicity-weighted, via a partial shuffle of
// the instance list.
inline std::vector<std::uint32_t> pick_deletions(const std::vector<std::uint32_t>& counts,
                                                 std::size_t n_del, Rng& rng) {
  std::vector<std::uint32_t> instances;
  for (std::uint32_t pos = 0; pos < counts.size(); ++pos)
    for (std::uint32_t c = 0; c < counts[pos]; ++c) instances.push_back(pos);
  if (n_del > instances.size()) throw Error("cannot delete more instances than exist");
  for (std::size_t i = 0; i < n_del; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, instances.size() - 1);
    std::swap(instances[i], instances[pick(rng)]);
  }
  instances.resize(n_del);
  return instances;
}

}  // namespace detail

// Three-step maintenance: draw |b'_s| by the size law, delete or add within
// the old region, then fill the remainder from the delta batch.
inline Resample update_resample_naive(const Resample& b, const Sample& expanded, Rng& rng,
                                      ResampleEdits* edits = nullptr) {
  detail::validate_expansion(b, expanded);
  std::size_t n = b.positions();
  std::size_t n_prime = expanded.size();
  Resample out;
  out.counts = b.counts;
  out.counts.resize(n_prime, 0);
  out.batch_offsets = expanded.batch_offsets();
  if (n == n_prime) return out;

  SizeModel model{n, n_prime, choose_size_mode(n, n_prime)};
  std::size_t k = sample_new_old_part_size(model, rng);

  if (k < n) {
    for (std::uint32_t pos : detail::pick_deletions(b.counts, n - k, rng)) {
      --out.counts[pos];
      if (edits) edits->deleted.push_back(pos);
    }
  } else if (k > n) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < k - n; ++i) {
      auto pos = static_cast<std::uint32_t>(pick(rng));
      ++out.counts[pos];
      if (edits) edits->added.push_back(pos);
    }
  }
  std::uniform_int_distribution<std::size_t> pick_delta(n, n_prime - 1);
  for (std::size_t i = 0; i < n_prime - k; ++i) {
    auto pos = static_cast<std::uint32_t>(pick_delta(rng));
    ++out.counts[pos];
    if (edits) edits->added.push_back(pos);
  }
  if (out.size() != n_prime) throw Error("maintained resample has wrong size");
  return out;
}

// c*sqrt(n) entries drawn without replacement from a backing set, consumed
// sequentially; used entries form a prefix.
class Sketch {
 public:
  Sketch() = default;

  static Sketch draw(std::span<const std::uint64_t> backing, std::size_t capacity, Rng& rng) {
    Sketch sk;
    sk.capacity_ = capacity;
    sk.entries_.assign(backing.begin(), backing.end());
    std::size_t take = std::min(capacity, sk.entries_.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, sk.entries_.size() - 1);
      std::swap(sk.entries_[i], sk.entries_[pick(rng)]);
    }
    sk.entries_.resize(take);
    sk.seen_ = backing.size();
    return sk;
  }

  static std::size_t capacity_for(std::size_t backing_size, double c) {
    return static_cast<std::size_t>(
        std::ceil(c * std::sqrt(static_cast<double>(backing_size))));
  }

  bool exhausted() const { return used_ == entries_.size(); }
  std::size_t unused() const { return entries_.size() - used_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }

  std::uint64_t take() {
    if (exhausted()) throw Error("sketch exhausted");
    return entries_[used_++];
  }

  // Drops consumed entries; keeps the unused tail.
  void compact() {
    entries_.erase(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(used_));
    used_ = 0;
  }

  // Reservoir substitution for instances appended to the backing set.
  void mix_appended(std::uint64_t value, Rng& rng) {
    ++seen_;
    if (entries_.size() < capacity_) {
      entries_.push_back(value);
      return;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    std::uint64_t j = pick(rng);
    if (used_ + j < entries_.size()) entries_[used_ + j] = value;
  }

  // Restores a uniformly random consumption order over the unused entries.
  void shuffle_unused(Rng& rng) {
    for (std::size_t i = used_; i < entries_.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, entries_.size() - 1);
      std::swap(entries_[i], entries_[pick(rng)]);
    }
  }

  std::span<const std::uint64_t> entries() const { return entries_; }
  std::size_t used_count() const { return used_; }

 private:
  std::vector<std::uint64_t> entries_;
  std::size_t used_ = 0;
  std::size_t capacity_ = 0;
  std::uint64_t seen_ = 0;
};

// Fresh uniform without-replacement subset of the backing set; used flags cleared.
inline Sketch sketch_refresh(const Sketch& sk, std::span<const std::uint64_t> backing, Rng& rng) {
  if (backing.empty()) throw Error("sketch refresh from empty backing set");
  return Sketch::draw(backing, sk.capacity(), rng);
}

inline constexpr char kSpillMagic[8] = {'E', 'A', 'R', 'L', 'S', 'P', 'L', '1'};

// Pair store standing in for the resample's persisted copy. Reads and writes
// are counted per pair; save/load round-trip the on-disk format (8-byte magic,
// then little-endian u64 position / u32 multiplicity pairs).
class SpillStore {
 public:
  using Pair = std::pair<std::uint64_t, std::uint32_t>;

  void write_all(std::vector<Pair> pairs) {
    writes_ += pairs.size();
    pairs_ = std::move(pairs);
  }

  const std::vector<Pair>& read_all() const {
    reads_ += pairs_.size();
    return pairs_;
  }

  std::vector<Pair> read_range(std::uint64_t lo, std::uint64_t hi) const {
    std::vector<Pair> out;
    for (const auto& pr : pairs_)
      if (pr.first >= lo && pr.first < hi) out.push_back(pr);
    reads_ += out.size();
    return out;
  }

  std::size_t pair_count() const { return pairs_.size(); }
  std::uint64_t reads() const { return reads_; }
  std::uint64_t writes() const { return writes_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write spill file: " + path);
    out.write(kSpillMagic, sizeof(kSpillMagic));
    for (const auto& [pos, mult] : pairs_) {
      char buf[12];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((pos >> (8 * i)) & 0xff);
      for (int i = 0; i < 4; ++i) buf[8 + i] = static_cast<char>((mult >> (8 * i)) & 0xff);
      out.write(buf, sizeof(buf));
    }
    if (!out) throw Error("failed writing spill file: " + path);
  }

  static SpillStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open spill file: " + path);
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kSpillMagic))
      throw Error("bad spill file magic: " + path);
    SpillStore st;
    char buf[12];
    while (in.read(buf, sizeof(buf))) {
      std::uint64_t pos = 0;
      std::uint32_t mult = 0;
      for (int i = 0; i < 8; ++i)
        pos |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
      for (int i = 0; i < 4; ++i)
        mult |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[8 + i])) << (8 * i);
      st.pairs_.emplace_back(pos, mult);
    }
    if (in.gcount() != 0) throw Error("truncated spill file: " + path);
    return st;
  }

 private:
  std::vector<Pair> pairs_;
  mutable std::uint64_t reads_ = 0;
  std::uint64_t writes_ = 0;
};

// Two-layer resample: per-batch sketches in memory absorb the random edit
// traffic; the spill store holds the persisted copy and is touched only when a
// sketch exhausts or on commit.
class LayeredResample {
 public:
  static LayeredResample from_resample(const Resample& b, Rng& rng, double c = 4.0) {
    LayeredResample lr;
    lr.c_ = c;
    lr.counts_ = b.counts;
    lr.batch_offsets_ = b.batch_offsets;
    lr.rebuild_part_sizes();
    lr.spill_.write_all(lr.snapshot_pairs());
    lr.part_sketches_.resize(lr.batch_count());
    lr.batch_sketches_.resize(lr.batch_count());
    for (std::size_t k = 0; k < lr.batch_count(); ++k) {
      lr.refresh_part_sketch_from_spill(k, rng);
      lr.batch_sketches_[k] = lr.draw_batch_sketch(k, rng);
    }
    return lr;
  }

  std::size_t batch_count() const { return batch_offsets_.size() - 1; }
  std::size_t positions() const { return counts_.size(); }
  std::uint64_t disk_accesses() const { return spill_.reads() + spill_.writes(); }
  const SpillStore& spill() const { return spill_; }
  const Sketch& part_sketch(std::size_t k) const { return part_sketches_[k]; }
  const Sketch& batch_sketch(std::size_t k) const { return batch_sketches_[k]; }
  std::size_t part_size(std::size_t k) const { return part_sizes_[k]; }

  Resample materialize() const {
    Resample b;
    b.counts = counts_;
    b.batch_offsets = batch_offsets_;
    return b;
  }

  // Same distribution contract as update_resample_naive. Deletion targets are
  // consumed from the per-batch sketches; addition draws are fresh positions.
  void update(const Sample& expanded, Rng& rng, ResampleEdits* edits = nullptr) {
    Resample view = materialize();
    detail::validate_expansion(view, expanded);
    std::size_t n = positions();
    std::size_t n_prime = expanded.size();

    batch_offsets_.push_back(n_prime);
    counts_.resize(n_prime, 0);
    part_sizes_.push_back(0);

    SizeModel model{n, n_prime, choose_size_mode(n, n_prime)};
    std::size_t k = sample_new_old_part_size(model, rng);
    std::vector<std::vector<std::uint64_t>> appended(batch_count());

    if (k < n) {
      std::size_t old_batches = batch_count() - 1;
      for (std::size_t i = 0; i < n - k; ++i) {
        std::size_t batch = pick_batch_weighted(old_batches, rng);
        if (part_sketches_[batch].exhausted()) {
          commit_journal();
          refresh_part_sketch_from_spill(batch, rng);
        }
        auto pos = part_sketches_[batch].take();
        if (counts_[pos] == 0) throw Error("sketch entry no longer backed");
        --counts_[pos];
        --part_sizes_[batch];
        if (edits) edits->deleted.push_back(static_cast<std::uint32_t>(pos));
      }
    } else if (k > n) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < k - n; ++i) {
        std::size_t pos = pick(rng);
        ++counts_[pos];
        std::size_t batch = batch_of(pos);
        ++part_sizes_[batch];
        appended[batch].push_back(pos);
        if (edits) edits->added.push_back(static_cast<std::uint32_t>(pos));
      }
    }
    std::size_t delta_batch = batch_count() - 1;
    if (n_prime > n) {
      std::uniform_int_distribution<std::size_t> pick_delta(n, n_prime - 1);
      for (std::size_t i = 0; i < n_prime - k; ++i) {
        std::size_t pos = pick_delta(rng);
        ++counts_[pos];
        ++part_sizes_[delta_batch];
        appended[delta_batch].push_back(pos);
        if (edits) edits->added.push_back(static_cast<std::uint32_t>(pos));
      }
    }

    // End-of-iteration sketch upkeep: drop consumed entries, fold appended
    // instances in reservoir-style, and sketch the new parts from memory.
    for (std::size_t b = 0; b + 1 < batch_count(); ++b) {
      part_sketches_[b].compact();
      for (std::uint64_t pos : appended[b]) part_sketches_[b].mix_appended(pos, rng);
      if (!appended[b].empty()) part_sketches_[b].shuffle_unused(rng);
    }
    part_sketches_.push_back(draw_part_sketch_from_memory(delta_batch, rng));
    batch_sketches_.push_back(draw_batch_sketch(delta_batch, rng));
    dirty_ = true;

    std::size_t total = 0;
    for (auto cnt : counts_) total += cnt;
    if (total != n_prime) throw Error("maintained resample has wrong size");
  }

  // Persists the current state and redraws every part sketch from the spill
  // layer, restoring exact random subsets.
  void commit(Rng& rng) {
    commit_journal();
    for (std::size_t k = 0; k < batch_count(); ++k) refresh_part_sketch_from_spill(k, rng);
  }

  bool dirty() const { return dirty_; }

  bool sketches_valid() const {
    for (std::size_t k = 0; k < batch_count(); ++k) {
      std::vector<std::uint64_t> per_pos(counts_.size(), 0);
      const Sketch& sk = part_sketches_[k];
      for (std::size_t i = sk.used_count(); i < sk.size(); ++i) {
        std::uint64_t pos = sk.entries()[i];
        if (pos < batch_offsets_[k] || pos >= batch_offsets_[k + 1]) return false;
        if (++per_pos[pos] > counts_[pos]) return false;
      }
      std::vector<bool> seen(counts_.size(), false);
      for (std::size_t i = batch_sketches_[k].used_count(); i < batch_sketches_[k].size(); ++i) {
        std::uint64_t pos = batch_sketches_[k].entries()[i];
        if (pos < batch_offsets_[k] || pos >= batch_offsets_[k + 1]) return false;
        if (seen[pos]) return false;
        seen[pos] = true;
      }
    }
    return true;
  }

 private:
  void rebuild_part_sizes() {
    part_sizes_.assign(batch_count(), 0);
    for (std::size_t k = 0; k < batch_count(); ++k)
      for (std::size_t i = batch_offsets_[k]; i < batch_offsets_[k + 1]; ++i)
        part_sizes_[k] += counts_[i];
  }

  std::size_t batch_of(std::size_t pos) const {
    auto it = std::upper_bound(batch_offsets_.begin(), batch_offsets_.end(), pos);
    return static_cast<std::size_t>(it - batch_offsets_.begin()) - 1;
  }

  std::size_t pick_batch_weighted(std::size_t batch_limit, Rng& rng) {
    std::uint64_t total = 0;
    for (std::size_t b = 0; b < batch_limit; ++b) total += part_sizes_[b];
    if (total == 0) throw Error("no instances left to delete");
    std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
    std::uint64_t r = pick(rng);
    for (std::size_t b = 0; b < batch_limit; ++b) {
      if (r < part_sizes_[b]) return b;
      r -= part_sizes_[b];
    }
    return batch_limit - 1;
  }

  std::vector<SpillStore::Pair> snapshot_pairs() const {
    std::vector<SpillStore::Pair> pairs;
    for (std::uint64_t pos = 0; pos < counts_.size(); ++pos)
      if (counts_[pos] > 0) pairs.emplace_back(pos, counts_[pos]);
    return pairs;
  }

  void commit_journal() {
    spill_.write_all(snapshot_pairs());
    dirty_ = false;
  }

  std::vector<std::uint64_t> instances_from_pairs(const std::vector<SpillStore::Pair>& pairs) const {
    std::vector<std::uint64_t> inst;
    for (const auto& [pos, mult] : pairs)
      for (std::uint32_t c = 0; c < mult; ++c) inst.push_back(pos);
    return inst;
  }

  void refresh_part_sketch_from_spill(std::size_t k, Rng& rng) {
    auto pairs = spill_.read_range(batch_offsets_[k], batch_offsets_[k + 1]);
    auto inst = instances_from_pairs(pairs);
    if (part_sketches_.size() <= k) part_sketches_.resize(k + 1);
    part_sketches_[k] = Sketch::draw(inst, Sketch::capacity_for(inst.size(), c_), rng);
  }

  Sketch draw_part_sketch_from_memory(std::size_t k, Rng& rng) {
    std::vector<std::uint64_t> inst;
    for (std::size_t pos = batch_offsets_[k]; pos < batch_offsets_[k + 1]; ++pos)
      for (std::uint32_t c = 0; c < counts_[pos]; ++c) inst.push_back(pos);
    return Sketch::draw(inst, Sketch::capacity_for(inst.size(), c_), rng);
  }

  Sketch draw_batch_sketch(std::size_t k, Rng& rng) {
    std::vector<std::uint64_t> positions;
    for (std::size_t pos = batch_offsets_[k]; pos < batch_offsets_[k + 1]; ++pos)
      positions.push_back(pos);
    return Sketch::draw(positions, Sketch::capacity_for(positions.size(), c_), rng);
  }

  double c_ = 4.0;
  std::vector<std::uint32_t> counts_;
  std::vector<std::size_t> batch_offsets_;
  std::vector<std::uint64_t> part_sizes_;
  std::vector<Sketch> part_sketches_;
  std::vector<Sketch> batch_sketches_;
  SpillStore spill_;
  bool dirty_ = false;
};

inline LayeredResample update_resample_sketched(LayeredResample lr, const Sample& expanded,
                                                Rng& rng, ResampleEdits* edits = nullptr) {
  lr.update(expanded, rng, edits);
  return lr;
}

}  // namespace earl
