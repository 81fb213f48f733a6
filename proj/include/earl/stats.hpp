#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "earl/error.hpp"

namespace earl::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw Error("mean of empty range");
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Unbiased sample variance, 1/(n-1) denominator.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw Error("sample variance needs at least two values");
  double m = mean(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

// Streaming mean / sum of squared deviations (Welford).
class RunningMoments {
 public:
  void add(double x) {
    ++n_;
    double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  // Population-style variance with 1/n denominator.
  double variance_over_n() const { return n_ == 0 ? 0.0 : m2_ / static_cast<double>(n_); }

 private:
  std::size_t n_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

inline double chi_square_pvalue(double stat, double dof) {
  if (dof <= 0) throw Error("chi-square dof must be positive");
  if (stat <= 0) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

struct GofResult {
  double stat = 0;
  double dof = 0;
  double p_value = 1;
};

// Goodness of fit of observed counts against cell probabilities.
// Cells are merged greedily until every expected count is >= min_expected.
inline GofResult chi_square_gof(std::span<const std::uint64_t> observed,
                                std::span<const double> probs, double min_expected = 5.0) {
  if (observed.size() != probs.size() || observed.empty())
    throw Error("chi-square inputs must be equal-sized and non-empty");
  std::uint64_t total = 0;
  for (auto c : observed) total += c;
  if (total == 0) throw Error("chi-square needs observations");

  std::vector<double> exp_merged;
  std::vector<double> obs_merged;
  double e_acc = 0, o_acc = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    e_acc += probs[i] * static_cast<double>(total);
    o_acc += static_cast<double>(observed[i]);
    if (e_acc >= min_expected) {
      exp_merged.push_back(e_acc);
      obs_merged.push_back(o_acc);
      e_acc = o_acc = 0;
    }
  }
  if (e_acc > 0 || o_acc > 0) {
    if (exp_merged.empty()) throw Error("chi-square: expected counts too small to bin");
    exp_merged.back() += e_acc;
    obs_merged.back() += o_acc;
  }
  if (exp_merged.size() < 2) throw Error("chi-square: fewer than two cells after merging");

  GofResult r;
  for (std::size_t i = 0; i < exp_merged.size(); ++i) {
    double d = obs_merged[i] - exp_merged[i];
    r.stat += d * d / exp_merged[i];
  }
  r.dof = static_cast<double>(exp_merged.size() - 1);
  r.p_value = chi_square_pvalue(r.stat, r.dof);
  return r;
}

// Uniform-cell special case (no merging; callers ensure large expected counts).
inline GofResult chi_square_uniform(std::span<const std::uint64_t> observed) {
  if (observed.size() < 2) throw Error("chi-square needs at least two cells");
  std::uint64_t total = 0;
  for (auto c : observed) total += c;
  double expected = static_cast<double>(total) / static_cast<double>(observed.size());
  GofResult r;
  for (auto c : observed) {
    double d = static_cast<double>(c) - expected;
    r.stat += d * d / expected;
  }
  r.dof = static_cast<double>(observed.size() - 1);
  r.p_value = chi_square_pvalue(r.stat, r.dof);
  return r;
}

// Kolmogorov distance between the empirical distribution of integer draws and
// an exact CDF evaluated at those integers.
inline double ks_distance(std::span<const std::int64_t> draws,
                          const std::function<double(std::int64_t)>& cdf) {
  if (draws.empty()) throw Error("ks distance of empty sample");
  std::vector<std::int64_t> xs(draws.begin(), draws.end());
  std::sort(xs.begin(), xs.end());
  double n = static_cast<double>(xs.size());
  double worst = 0;
  std::size_t i = 0;
  while (i < xs.size()) {
    std::size_t j = i;
    while (j < xs.size() && xs[j] == xs[i]) ++j;
    double f_lo = static_cast<double>(i) / n;
    double f_hi = static_cast<double>(j) / n;
    double c = cdf(xs[i]);
    worst = std::max({worst, std::abs(c - f_lo), std::abs(c - f_hi)});
    i = j;
  }
  return worst;
}

inline double binomial_log_pmf(std::uint64_t n, double p, std::uint64_t k) {
  if (p <= 0) return k == 0 ? 0.0 : -INFINITY;
  if (p >= 1) return k == n ? 0.0 : -INFINITY;
  double dn = static_cast<double>(n), dk = static_cast<double>(k);
  return std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1) +
         dk * std::log(p) + (dn - dk) * std::log1p(-p);
}

inline double binomial_pmf(std::uint64_t n, double p, std::uint64_t k) {
  return std::exp(binomial_log_pmf(n, p, k));
}

// Total-variation distance between an empirical count map and exact probabilities.
template <typename Key>
double total_variation(const std::map<Key, std::uint64_t>& counts, std::uint64_t trials,
                       const std::map<Key, double>& exact) {
  double tv = 0;
  for (const auto& [k, p] : exact) {
    auto it = counts.find(k);
    double emp = it == counts.end()
                     ? 0.0
                     : static_cast<double>(it->second) / static_cast<double>(trials);
    tv += std::abs(emp - p);
  }
  for (const auto& [k, c] : counts) {
    if (!exact.contains(k)) tv += static_cast<double>(c) / static_cast<double>(trials);
  }
  return tv / 2.0;
}

}  // namespace earl::stats
