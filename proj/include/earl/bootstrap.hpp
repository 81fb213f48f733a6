#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "earl/error.hpp"
#include "earl/jobs.hpp"
#include "earl/rng.hpp"
#include "earl/sampling.hpp"
#include "earl/stats.hpp"

namespace earl {

// One with-replacement draw of n items from the sample, as a multiset over
// sample positions, partitioned by the sample's delta batches.
struct Resample {
  std::vector<std::uint32_t> counts;       // multiplicity per sample position
  std::vector<std::size_t> batch_offsets;  // prefix offsets, size = batches + 1

  std::size_t positions() const { return counts.size(); }

  std::size_t size() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  std::size_t batch_count() const { return batch_offsets.size() - 1; }

  std::size_t part_size(std::size_t k) const {
    std::size_t s = 0;
    for (std::size_t i = batch_offsets[k]; i < batch_offsets[k + 1]; ++i) s += counts[i];
    return s;
  }
};

inline Resample draw_resample(const Sample& s, Rng& rng) {
  if (s.size() == 0) throw Error("resample of an empty sample");
  Resample b;
  b.counts.assign(s.size(), 0);
  b.batch_offsets = s.batch_offsets();
  std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
  for (std::size_t i = 0; i < s.size(); ++i) ++b.counts[pick(rng)];
  return b;
}

struct ReplicateSet {
  std::vector<double> estimates;
  std::size_t B() const { return estimates.size(); }
};

struct ErrorEstimate {
  double cv = 0;             // absolute standard deviation when absolute=true
  double mean_estimate = 0;
  double var_b = 0;          // 1/B-denominator replicate variance
  bool absolute = false;     // zero-mean fallback engaged
};

inline ErrorEstimate error_from_moments(double mean, double var_b) {
  ErrorEstimate e;
  e.mean_estimate = mean;
  e.var_b = var_b;
  double sd = std::sqrt(std::max(0.0, var_b));
  if (std::abs(mean) <= 1e-12 * sd || (mean == 0 && sd == 0)) {
    e.absolute = true;
    e.cv = sd;
  } else {
    e.cv = sd / std::abs(mean);
  }
  return e;
}

inline ErrorEstimate error_estimate(const ReplicateSet& r) {
  if (r.B() < 2) throw Error("error estimate needs at least two replicates");
  stats::RunningMoments m;
  for (double v : r.estimates) m.add(v);
  return error_from_moments(m.mean(), m.variance_over_n());
}

// Runs the job over the resample's records (each position repeated by its
// multiplicity, ascending position order).
inline double evaluate_on_resample(const Sample& s, const Resample& b, const JobDefinition& job,
                                   std::uint64_t state_seed, std::uint64_t* update_calls = nullptr) {
  auto state = job.make_state(state_seed);
  for (std::size_t pos = 0; pos < b.counts.size(); ++pos) {
    for (std::uint32_t c = 0; c < b.counts[pos]; ++c) {
      job.update(*state, s.items[pos]);
      if (update_calls) ++*update_calls;
    }
  }
  return job.finalize(*state);
}

// Probability that a floor(y*n)-sized fraction of one resample is identical to
// another's, via the numerically stable product form.
inline double prob_identical_count(std::size_t n, std::size_t k) {
  if (n == 0) throw Error("n must be positive");
  if (k > n) return 0;
  double p = 1;
  for (std::size_t j = 0; j < k; ++j)
    p *= static_cast<double>(n - j) / static_cast<double>(n);
  return p;
}

inline double prob_identical_fraction(std::size_t n, double y) {
  if (n == 0) throw Error("n must be positive");
  if (y < 0 || y > 1) throw Error("fraction must lie in [0, 1]");
  auto k = static_cast<std::size_t>(std::floor(y * static_cast<double>(n) + 1e-9));
  return prob_identical_count(n, k);
}

struct ShareOptimum {
  std::size_t k = 0;   // shared draw count
  double y = 0;        // shared fraction k/n
  double saved = 0;    // expected work saved, P(X=y) * y
};

// The objective P(X=k/n) * (k/n) increases while k(k+1) < n and decreases
// after, so the smallest maximizer is the first k with k(k+1) >= n.
inline ShareOptimum optimal_share_fraction(std::size_t n) {
  if (n == 0) throw Error("n must be positive");
  std::size_t lo = 1, hi = n;
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo) / 2;
    if (mid * (mid + 1) >= n)
      hi = mid;
    else
      lo = mid + 1;
  }
  ShareOptimum opt;
  opt.k = lo;
  opt.y = static_cast<double>(lo) / static_cast<double>(n);
  opt.saved = prob_identical_count(n, lo) * opt.y;
  return opt;
}

struct ShareCounters {
  std::uint64_t update_calls = 0;
  std::uint64_t saved_update_calls = 0;
  std::uint64_t shared_events = 0;
};

// Draws and evaluates resamples one at a time. With sharing enabled (and a
// mergeable job), consecutive resamples reuse the previous resample's first
// k* draws together with the cached partial state, with probability P(X=y*).
class ReplicateEvaluator {
 public:
  ReplicateEvaluator(const Sample& s, const JobDefinition& job, bool sharing)
      : s_(&s), job_(&job), sharing_(sharing && job.mergeable() && s.size() > 1),
        opt_(optimal_share_fraction(s.size())) {}

  double evaluate(Rng& rng, std::uint64_t state_seed, Resample* out = nullptr) {
    const std::size_t n = s_->size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::uint32_t> counts(n, 0);

    std::unique_ptr<ReduceState> state;
    std::size_t start = 0;
    bool reuse = false;
    if (sharing_ && cached_state_) {
      std::uniform_real_distribution<double> u(0, 1);
      reuse = u(rng) < prob_identical_count(n, opt_.k);
    }
    if (reuse) {
      state = cached_state_->clone();
      for (std::size_t i = 0; i < opt_.k; ++i) ++counts[prefix_[i]];
      start = opt_.k;
      counters_.saved_update_calls += opt_.k;
      ++counters_.shared_events;
    } else {
      state = job_->make_state(state_seed);
      if (sharing_) prefix_.resize(opt_.k);
      for (std::size_t i = 0; i < std::min(sharing_ ? opt_.k : std::size_t{0}, n); ++i) {
        std::size_t pos = pick(rng);
        prefix_[i] = pos;
        ++counts[pos];
        job_->update(*state, s_->items[pos]);
        ++counters_.update_calls;
      }
      if (sharing_) {
        cached_state_ = state->clone();
        start = opt_.k;
      }
    }
    for (std::size_t i = start; i < n; ++i) {
      std::size_t pos = pick(rng);
      ++counts[pos];
      job_->update(*state, s_->items[pos]);
      ++counters_.update_calls;
    }
    if (out) {
      out->counts = std::move(counts);
      out->batch_offsets = s_->batch_offsets();
    }
    return job_->finalize(*state);
  }

  const ShareCounters& counters() const { return counters_; }
  const ShareOptimum& share_optimum() const { return opt_; }

 private:
  const Sample* s_;
  const JobDefinition* job_;
  bool sharing_;
  ShareOptimum opt_;
  std::vector<std::size_t> prefix_;
  std::unique_ptr<ReduceState> cached_state_;
  ShareCounters counters_;
};

struct ReplicateOptions {
  bool sharing = false;
  std::uint64_t state_seed = 0;
  std::vector<Resample>* resamples_out = nullptr;
  ShareCounters* counters_out = nullptr;
};

inline ReplicateSet replicate_estimates(const Sample& s, std::size_t B, const JobDefinition& job,
                                        Rng& rng, const ReplicateOptions& opts = {}) {
  if (B < 2) throw Error("at least two bootstrap replicates are required");
  ReplicateSet r;
  r.estimates.reserve(B);
  ReplicateEvaluator ev(s, job, opts.sharing);
  for (std::size_t b = 0; b < B; ++b) {
    Resample rs;
    double est = ev.evaluate(rng, derive_seed(opts.state_seed, Stream::job_state, b),
                             opts.resamples_out ? &rs : nullptr);
    if (opts.resamples_out) opts.resamples_out->push_back(std::move(rs));
    r.estimates.push_back(est);
  }
  if (opts.counters_out) *opts.counters_out = ev.counters();
  return r;
}

// Closed-form variance of the sample mean: (unbiased sample variance) / n.
inline double closed_form_mean_variance(const Sample& s) {
  if (s.size() < 2) throw Error("need at least two records");
  std::vector<double> xs;
  xs.reserve(s.size());
  for (const auto& r : s.items) xs.push_back(scalar_value(r));
  return stats::sample_variance(xs) / static_cast<double>(xs.size());
}

}  // namespace earl
