#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "earl/bootstrap.hpp"
#include "earl/delta.hpp"
#include "earl/error.hpp"
#include "earl/jobs.hpp"
#include "earl/rng.hpp"
#include "earl/sampling.hpp"
#include "earl/stats.hpp"

namespace earl {

struct EstimatorConfig {
  double sigma = 0.05;    // target error bound on c_v
  double tau = 0.01;      // stability threshold for the B sweep
  double p_init = 0.01;   // initial sample fraction
  std::size_t ladder_depth = 5;
  std::size_t min_rung = 30;

  // Candidate sweep {2..1/tau}, bounded by a practical ceiling so extreme tau
  // still terminates (an unstabilized sweep falls through to the gate anyway).
  static constexpr std::size_t sweep_ceiling = 2048;

  std::size_t b_cap() const {
    double cap = std::ceil(1.0 / tau);
    if (cap > static_cast<double>(sweep_ceiling)) return sweep_ceiling;
    return static_cast<std::size_t>(cap);
  }

  void validate() const {
    if (!(sigma > 0 && sigma < 1)) throw Error("sigma must lie in (0, 1)");
    if (!(tau > 0 && tau < sigma)) throw Error("tau must lie in (0, sigma)");
    if (!(p_init > 0 && p_init < 1)) throw Error("p-init must lie in (0, 1)");
    if (ladder_depth < 2) throw Error("ladder depth must be at least 2");
  }
};

struct CvPoint {
  std::size_t n = 0;
  double cv = 0;
};

// c_v(n) = a * n^{-1/2} + b, least squares in the regressor n^{-1/2}.
// Both coefficients are constrained non-negative (c_v cannot be negative at
// any sample size): a negative intercept refits slope-only, a negative slope
// falls back to the flat mean.
struct CvCurve {
  std::vector<CvPoint> points;
  double a = 0;
  double b = 0;
  double residual = 0;

  double eval(double n) const { return a / std::sqrt(n) + b; }

  static CvCurve fit(std::vector<CvPoint> pts) {
    if (pts.empty()) throw Error("curve fit needs points");
    CvCurve c;
    c.points = std::move(pts);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    double m = static_cast<double>(c.points.size());
    for (const auto& p : c.points) {
      double x = 1.0 / std::sqrt(static_cast<double>(p.n));
      sx += x;
      sy += p.cv;
      sxx += x * x;
      sxy += x * p.cv;
    }
    double det = m * sxx - sx * sx;
    if (det > 1e-30) {
      c.a = (m * sxy - sx * sy) / det;
      c.b = (sxx * sy - sx * sxy) / det;
    } else {
      c.a = 0;
      c.b = sy / m;
    }
    if (c.b < 0) {
      c.b = 0;
      c.a = sxx > 0 ? sxy / sxx : 0;
    }
    if (c.a < 0) {
      c.a = 0;
      c.b = sy / m;
    }
    for (const auto& p : c.points) {
      double r = p.cv - c.eval(static_cast<double>(p.n));
      c.residual += r * r;
    }
    return c;
  }

  // Smallest integer n with fitted c_v(n) <= sigma, clamped to [floor_n, cap_n].
  std::size_t solve_n(double sigma, std::size_t floor_n, std::size_t cap_n) const {
    if (b >= sigma) return cap_n;
    if (a <= 0) return floor_n;
    double root = a / (sigma - b);
    double need = std::ceil(root * root);
    if (need >= static_cast<double>(cap_n)) return cap_n;
    auto n = static_cast<std::size_t>(need);
    return std::max(floor_n, std::min(n, cap_n));
  }
};

// Per-replicate material kept for reuse: the resample, its job state (for
// retractable jobs), and the replicate estimate.
struct ReplicateCache {
  std::vector<Resample> resamples;
  std::vector<std::unique_ptr<ReduceState>> states;
  std::vector<double> estimates;
  bool has_states = false;
};

struct BEstimate {
  std::size_t B = 0;
  bool stabilized = true;
  double cv = 0;
  std::uint64_t update_calls = 0;
  std::uint64_t saved_update_calls = 0;
};

namespace detail {

// Appends one replicate drawn from s, optionally sharing a prefix with the
// previous replicate (probability P(X=y*), mergeable jobs only).
class CachingEvaluator {
 public:
  CachingEvaluator(const Sample& s, const JobDefinition& job, bool sharing, std::uint64_t seed)
      : s_(&s), job_(&job), seed_(seed),
        sharing_(sharing && job.mergeable() && s.size() > 1),
        opt_(optimal_share_fraction(s.size())) {}

  void add_replicate(Rng& rng, ReplicateCache& cache, bool keep_state) {
    const std::size_t n = s_->size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    Resample rs;
    rs.counts.assign(n, 0);
    rs.batch_offsets = s_->batch_offsets();

    std::unique_ptr<ReduceState> state;
    std::size_t start = 0;
    bool reuse = false;
    if (sharing_ && partial_) {
      std::uniform_real_distribution<double> u(0, 1);
      reuse = u(rng) < prob_identical_count(n, opt_.k);
    }
    if (reuse) {
      state = partial_->clone();
      for (std::size_t i = 0; i < opt_.k; ++i) ++rs.counts[prefix_[i]];
      start = opt_.k;
      saved_ += opt_.k;
    } else {
      state = job_->make_state(derive_seed(seed_, Stream::job_state, cache.estimates.size()));
      if (sharing_) {
        prefix_.resize(opt_.k);
        for (std::size_t i = 0; i < opt_.k; ++i) {
          std::size_t pos = pick(rng);
          prefix_[i] = pos;
          ++rs.counts[pos];
          job_->update(*state, s_->items[pos]);
          ++calls_;
        }
        partial_ = state->clone();
        start = opt_.k;
      }
    }
    for (std::size_t i = start; i < n; ++i) {
      std::size_t pos = pick(rng);
      ++rs.counts[pos];
      job_->update(*state, s_->items[pos]);
      ++calls_;
    }
    cache.estimates.push_back(job_->finalize(*state));
    cache.resamples.push_back(std::move(rs));
    if (keep_state) {
      cache.states.push_back(std::move(state));
      cache.has_states = true;
    }
  }

  std::uint64_t calls() const { return calls_; }
  std::uint64_t saved() const { return saved_; }

 private:
  const Sample* s_;
  const JobDefinition* job_;
  std::uint64_t seed_;
  bool sharing_;
  ShareOptimum opt_;
  std::vector<std::size_t> prefix_;
  std::unique_ptr<ReduceState> partial_;
  std::uint64_t calls_ = 0;
  std::uint64_t saved_ = 0;
};

}  // namespace detail

// Phase 1: sweep candidate B in {2..1/tau}, growing one replicate per step,
// until consecutive c_v values differ by less than tau. A single replicate has
// zero spread, so the sweep can already settle at B=2 on degenerate data.
inline BEstimate estimate_B(const Sample& s_init, const JobDefinition& job,
                            const EstimatorConfig& cfg, Rng& rng, bool sharing = true,
                            ReplicateCache* cache_out = nullptr) {
  cfg.validate();
  if (s_init.size() == 0) throw Error("estimator needs a non-empty sample");
  ReplicateCache local;
  ReplicateCache& cache = cache_out ? *cache_out : local;
  bool keep_states = cache_out != nullptr && job.retractable();
  detail::CachingEvaluator ev(s_init, job, sharing, derive_seed(0x5eed, Stream::estimator));

  stats::RunningMoments moments;
  BEstimate out;
  double prev_cv = 0;
  std::size_t cap = cfg.b_cap();
  for (std::size_t b = 1; b <= cap; ++b) {
    ev.add_replicate(rng, cache, keep_states);
    moments.add(cache.estimates.back());
    double cv = error_from_moments(moments.mean(), moments.variance_over_n()).cv;
    if (b >= 2 && std::abs(cv - prev_cv) < cfg.tau) {
      out.B = b;
      out.cv = cv;
      out.stabilized = true;
      out.update_calls = ev.calls();
      out.saved_update_calls = ev.saved();
      return out;
    }
    prev_cv = cv;
  }
  out.B = cap;
  out.cv = prev_cv;
  out.stabilized = false;
  out.update_calls = ev.calls();
  out.saved_update_calls = ev.saved();
  return out;
}

struct NEstimate {
  std::size_t n = 0;
  CvCurve curve;
  std::uint64_t update_calls = 0;          // ladder total
  std::uint64_t largest_rung_calls = 0;    // cost of the largest computed rung alone
  ReplicateCache top_cache;                // replicates at the top rung, for reuse
};

// Phase 2: subsample ladder n_i = n/2^{l-i}, c_v at each rung with B
// replicates (smaller rungs are grown into larger ones by delta maintenance
// for retractable jobs), then the fitted curve picks the smallest n meeting
// sigma. When phase-1 material is supplied, the top rung reuses it outright.
inline NEstimate estimate_n(const Sample& s_init, std::size_t B, const JobDefinition& job,
                            const EstimatorConfig& cfg, Rng& rng, std::size_t dataset_cap,
                            ReplicateCache* phase1 = nullptr, bool sharing = true) {
  cfg.validate();
  if (B < 2) throw Error("need at least two bootstrap replicates");
  const std::size_t l = cfg.ladder_depth;
  const std::size_t n0 = s_init.size();
  if (n0 < (std::size_t{1} << (l - 1))) throw Error("initial sample smaller than the ladder");

  std::vector<std::size_t> rungs;
  for (std::size_t i = 1; i <= l; ++i) {
    std::size_t ni = std::max(n0 >> (l - i), cfg.min_rung);
    ni = std::min(ni, n0);
    if (rungs.empty() || ni > rungs.back()) rungs.push_back(ni);
  }

  NEstimate out;
  std::vector<CvPoint> points;
  const bool reuse_top = phase1 != nullptr && !phase1->estimates.empty();
  const std::size_t computed = reuse_top ? rungs.size() - 1 : rungs.size();

  Sample rung_sample;
  rung_sample.mode = s_init.mode;
  rung_sample.kv_count_estimate = s_init.kv_count_estimate;
  std::vector<Resample> resamples;
  std::vector<std::unique_ptr<ReduceState>> states;
  std::vector<double> estimates(B, 0.0);

  for (std::size_t r = 0; r < computed; ++r) {
    std::size_t target = rungs[r];
    std::vector<Record> fresh(s_init.items.begin() +
                                  static_cast<std::ptrdiff_t>(rung_sample.size()),
                              s_init.items.begin() + static_cast<std::ptrdiff_t>(target));
    rung_sample.append_batch(std::move(fresh));

    std::uint64_t rung_calls = 0;
    if (r == 0) {
      detail::CachingEvaluator ev(rung_sample, job, sharing,
                                  derive_seed(0x1add3e, Stream::estimator));
      ReplicateCache rc;
      for (std::size_t b = 0; b < B; ++b) ev.add_replicate(rng, rc, job.retractable());
      resamples = std::move(rc.resamples);
      states = std::move(rc.states);
      estimates = std::move(rc.estimates);
      rung_calls = ev.calls();
    } else if (job.retractable()) {
      for (std::size_t b = 0; b < B; ++b) {
        ResampleEdits edits;
        resamples[b] = update_resample_naive(resamples[b], rung_sample, rng, &edits);
        for (auto pos : edits.deleted) job.retract(*states[b], rung_sample.items[pos]);
        for (auto pos : edits.added) job.update(*states[b], rung_sample.items[pos]);
        rung_calls += edits.deleted.size() + edits.added.size();
        estimates[b] = job.finalize(*states[b]);
      }
    } else {
      for (std::size_t b = 0; b < B; ++b) {
        resamples[b] = update_resample_naive(resamples[b], rung_sample, rng, nullptr);
        estimates[b] = evaluate_on_resample(
            rung_sample, resamples[b], job,
            derive_seed(0x1add3e, Stream::job_state, r, b), &rung_calls);
      }
    }
    out.update_calls += rung_calls;
    out.largest_rung_calls = static_cast<std::uint64_t>(B) * target;

    stats::RunningMoments m;
    for (double e : estimates) m.add(e);
    points.push_back(CvPoint{target, error_from_moments(m.mean(), m.variance_over_n()).cv});
  }

  if (reuse_top) {
    stats::RunningMoments m;
    for (double e : phase1->estimates) m.add(e);
    points.push_back(
        CvPoint{rungs.back(), error_from_moments(m.mean(), m.variance_over_n()).cv});
    out.top_cache = std::move(*phase1);
  } else {
    // The ladder's internal prefix batching differs from the caller's sample;
    // relabel so the resamples can be maintained against it directly.
    for (auto& rs : resamples) rs.batch_offsets = s_init.batch_offsets();
    out.top_cache.resamples = std::move(resamples);
    out.top_cache.states = std::move(states);
    out.top_cache.estimates = estimates;
    out.top_cache.has_states = job.retractable();
  }

  out.curve = CvCurve::fit(points);
  out.n = out.curve.solve_n(cfg.sigma, rungs.front(), dataset_cap);
  return out;
}

enum class Feasibility { early, full };

// Early estimation only pays off when B*n < N.
inline Feasibility feasibility_gate(std::size_t B, std::size_t n, double dataset_size) {
  double planned = static_cast<double>(B) * static_cast<double>(n);
  return planned >= dataset_size ? Feasibility::full : Feasibility::early;
}

// ceil((1/2) * eps0^-2): the theoretical replicate count for a desired
// Monte-Carlo error, kept for comparison against the empirical sweep.
inline std::size_t theoretical_B(double epsilon0) {
  if (epsilon0 <= 0) throw Error("epsilon must be positive");
  return static_cast<std::size_t>(std::ceil(0.5 / (epsilon0 * epsilon0)));
}

}  // namespace earl
