#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "earl/error.hpp"
#include "earl/record.hpp"
#include "earl/rng.hpp"

namespace earl {

class ReduceState {
 public:
  virtual ~ReduceState() = default;
  virtual std::unique_ptr<ReduceState> clone() const = 0;
};

// Incremental reduce API: a state is built with update(), optionally merged
// from other states or shrunk with retract(), finalized into a scalar
// estimate, and corrected to full-data scale with the sampled fraction p.
struct JobDefinition {
  std::string name;
  std::function<std::unique_ptr<ReduceState>(std::uint64_t state_seed)> make_state;
  std::function<void(ReduceState&, const Record&)> update;
  std::function<void(ReduceState&, const ReduceState&)> merge;    // set iff mergeable
  std::function<void(ReduceState&, const Record&)> retract;       // set iff retractable
  std::function<double(const ReduceState&)> finalize;
  std::function<double(double estimate, double p)> correct;
  std::function<nlohmann::json(const ReduceState&)> describe;     // optional

  bool mergeable() const { return static_cast<bool>(merge); }
  bool retractable() const { return static_cast<bool>(retract); }
};

namespace detail {

template <typename T>
T& as(ReduceState& s) {
  return static_cast<T&>(s);
}
template <typename T>
const T& as(const ReduceState& s) {
  return static_cast<const T&>(s);
}

struct ScalarState final : ReduceState {
  std::size_t count = 0;
  double sum = 0;
  std::unique_ptr<ReduceState> clone() const override {
    return std::make_unique<ScalarState>(*this);
  }
};

struct MedianState final : ReduceState {
  std::multiset<double> values;
  std::unique_ptr<ReduceState> clone() const override {
    return std::make_unique<MedianState>(*this);
  }
};

struct ProportionState final : ReduceState {
  std::size_t successes = 0;
  std::size_t trials = 0;
  std::unique_ptr<ReduceState> clone() const override {
    return std::make_unique<ProportionState>(*this);
  }
};

struct KMeansState final : ReduceState {
  std::vector<std::vector<double>> points;
  std::uint64_t seed = 0;
  std::unique_ptr<ReduceState> clone() const override {
    return std::make_unique<KMeansState>(*this);
  }
};

inline double median_of(const std::multiset<double>& values) {
  if (values.empty()) throw Error("median of empty state");
  std::size_t n = values.size();
  auto it = values.begin();
  std::advance(it, (n - 1) / 2);
  if (n % 2 == 1) return *it;
  double lo = *it;
  ++it;
  return (lo + *it) / 2.0;
}

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  double wcss = 0;
};

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// k-means++ seeding followed by Lloyd iterations; centroids are canonicalized
// by sorting on the first coordinate.
inline KMeansResult lloyd_kmeans_once(const std::vector<std::vector<double>>& pts, std::size_t k,
                                      std::size_t max_iters, double tol, Rng& rng) {
  std::vector<std::vector<double>> centers;
  std::set<std::vector<double>> distinct(pts.begin(), pts.end());
  {
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    centers.push_back(pts[pick(rng)]);
    std::vector<double> d2(pts.size());
    while (centers.size() < k) {
      double total = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = std::numeric_limits<double>::max();
        for (const auto& c : centers) best = std::min(best, sq_dist(pts[i], c));
        d2[i] = best;
        total += best;
      }
      if (total <= 0) {
        // all remaining mass sits on existing centers; take any unused point
        for (const auto& p : distinct) {
          if (std::find(centers.begin(), centers.end(), p) == centers.end()) {
            centers.push_back(p);
            break;
          }
        }
        continue;
      }
      std::uniform_real_distribution<double> u(0, total);
      double r = u(rng), acc = 0;
      std::size_t chosen = pts.size() - 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        acc += d2[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
      centers.push_back(pts[chosen]);
    }
  }

  std::vector<std::size_t> assign(pts.size(), 0);
  double prev_wcss = std::numeric_limits<double>::max();
  double wcss = 0;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    wcss = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        double d = sq_dist(pts[i], centers[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
      wcss += best;
    }
    if (wcss > prev_wcss * (1 + 1e-9))
      throw Error("k-means objective increased across an iteration");
    bool converged = prev_wcss - wcss <= tol * std::max(1.0, prev_wcss);
    prev_wcss = wcss;

    std::vector<std::vector<double>> next(k, std::vector<double>(pts[0].size(), 0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++sizes[assign[i]];
      for (std::size_t d = 0; d < pts[i].size(); ++d) next[assign[i]][d] += pts[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) {
        next[c] = centers[c];  // keep an empty cluster's center in place
        continue;
      }
      for (double& v : next[c]) v /= static_cast<double>(sizes[c]);
    }
    centers = std::move(next);
    if (converged && iter > 0) break;
  }

  std::sort(centers.begin(), centers.end());
  return KMeansResult{std::move(centers), wcss};
}

// Several seedings, keeping the best objective.
inline KMeansResult lloyd_kmeans(const std::vector<std::vector<double>>& pts, std::size_t k,
                                 std::size_t max_iters, double tol, std::uint64_t seed,
                                 std::size_t restarts = 8) {
  if (pts.empty()) throw Error("k-means on empty state");
  std::set<std::vector<double>> distinct(pts.begin(), pts.end());
  if (distinct.size() < k) throw Error("k-means requires at least k distinct points");
  Rng rng = make_rng(seed, Stream::job_state);
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::max();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    KMeansResult got = lloyd_kmeans_once(pts, k, max_iters, tol, rng);
    if (got.wcss < best.wcss) best = std::move(got);
  }
  return best;
}

}  // namespace detail

inline JobDefinition mean_job() {
  using detail::ScalarState;
  JobDefinition j;
  j.name = "mean";
  j.make_state = [](std::uint64_t) { return std::make_unique<ScalarState>(); };
  j.update = [](ReduceState& s, const Record& r) {
    auto& st = detail::as<ScalarState>(s);
    ++st.count;
    st.sum += scalar_value(r);
  };
  j.retract = [](ReduceState& s, const Record& r) {
    auto& st = detail::as<ScalarState>(s);
    if (st.count == 0) throw Error("retract from empty state");
    --st.count;
    st.sum -= scalar_value(r);
  };
  j.merge = [](ReduceState& s, const ReduceState& o) {
    auto& st = detail::as<ScalarState>(s);
    const auto& ot = detail::as<ScalarState>(o);
    st.count += ot.count;
    st.sum += ot.sum;
  };
  j.finalize = [](const ReduceState& s) {
    const auto& st = detail::as<ScalarState>(s);
    if (st.count == 0) throw Error("finalize on empty state");
    return st.sum / static_cast<double>(st.count);
  };
  j.correct = [](double est, double) { return est; };
  return j;
}

inline JobDefinition sum_job() {
  using detail::ScalarState;
  JobDefinition j = mean_job();
  j.name = "sum";
  j.finalize = [](const ReduceState& s) {
    const auto& st = detail::as<ScalarState>(s);
    if (st.count == 0) throw Error("finalize on empty state");
    return st.sum;
  };
  j.correct = [](double est, double p) {
    if (p <= 0) throw Error("correction requires p > 0");
    return est / p;
  };
  return j;
}

inline JobDefinition median_job() {
  using detail::MedianState;
  JobDefinition j;
  j.name = "median";
  j.make_state = [](std::uint64_t) { return std::make_unique<MedianState>(); };
  j.update = [](ReduceState& s, const Record& r) {
    detail::as<MedianState>(s).values.insert(scalar_value(r));
  };
  j.retract = [](ReduceState& s, const Record& r) {
    auto& st = detail::as<MedianState>(s);
    auto it = st.values.find(scalar_value(r));
    if (it == st.values.end()) throw Error("retract of a value not in state");
    st.values.erase(it);
  };
  j.merge = [](ReduceState& s, const ReduceState& o) {
    auto& st = detail::as<MedianState>(s);
    const auto& ot = detail::as<MedianState>(o);
    st.values.insert(ot.values.begin(), ot.values.end());
  };
  j.finalize = [](const ReduceState& s) {
    return detail::median_of(detail::as<MedianState>(s).values);
  };
  j.correct = [](double est, double) { return est; };
  return j;
}

inline JobDefinition proportion_job(std::string success_label) {
  using detail::ProportionState;
  JobDefinition j;
  j.name = "proportion:" + success_label;
  auto is_success = [label = std::move(success_label)](const Record& r) {
    const std::string* tok = token_value(r);
    return tok != nullptr && *tok == label;
  };
  j.make_state = [](std::uint64_t) { return std::make_unique<ProportionState>(); };
  j.update = [is_success](ReduceState& s, const Record& r) {
    auto& st = detail::as<ProportionState>(s);
    ++st.trials;
    if (is_success(r)) ++st.successes;
  };
  j.retract = [is_success](ReduceState& s, const Record& r) {
    auto& st = detail::as<ProportionState>(s);
    if (st.trials == 0) throw Error("retract from empty state");
    --st.trials;
    if (is_success(r)) --st.successes;
  };
  j.merge = [](ReduceState& s, const ReduceState& o) {
    auto& st = detail::as<ProportionState>(s);
    const auto& ot = detail::as<ProportionState>(o);
    st.successes += ot.successes;
    st.trials += ot.trials;
  };
  j.finalize = [](const ReduceState& s) {
    const auto& st = detail::as<ProportionState>(s);
    if (st.trials == 0) throw Error("finalize on empty state");
    return static_cast<double>(st.successes) / static_cast<double>(st.trials);
  };
  j.correct = [](double est, double) { return est; };
  j.describe = [](const ReduceState& s) {
    const auto& st = detail::as<ProportionState>(s);
    if (st.trials == 0) throw Error("finalize on empty state");
    double n = static_cast<double>(st.trials);
    double p = static_cast<double>(st.successes) / n;
    double var = p * (1 - p) / n;
    double half = 1.96 * std::sqrt(var);
    return nlohmann::json{{"proportion", p},
                          {"variance", var},
                          {"ci95", {std::max(0.0, p - half), std::min(1.0, p + half)}},
                          {"successes", st.successes},
                          {"trials", st.trials}};
  };
  return j;
}

// The replicate statistic is the within-cluster sum of squares; centroids are
// exposed through describe().
inline JobDefinition kmeans_job(std::size_t k, std::size_t max_iters = 50, double tol = 1e-9) {
  using detail::KMeansState;
  if (k == 0) throw Error("k must be positive");
  JobDefinition j;
  j.name = "kmeans:" + std::to_string(k);
  j.make_state = [](std::uint64_t seed) {
    auto st = std::make_unique<KMeansState>();
    st->seed = seed;
    return st;
  };
  j.update = [](ReduceState& s, const Record& r) {
    detail::as<KMeansState>(s).points.push_back(point_value(r));
  };
  j.finalize = [k, max_iters, tol](const ReduceState& s) {
    const auto& st = detail::as<KMeansState>(s);
    return detail::lloyd_kmeans(st.points, k, max_iters, tol, st.seed).wcss;
  };
  j.correct = [](double est, double) { return est; };
  j.describe = [k, max_iters, tol](const ReduceState& s) {
    const auto& st = detail::as<KMeansState>(s);
    auto res = detail::lloyd_kmeans(st.points, k, max_iters, tol, st.seed);
    return nlohmann::json{{"wcss", res.wcss}, {"centroids", res.centroids}};
  };
  return j;
}

// Selector syntax: mean | sum | median | proportion:<label> | kmeans:<k>
inline JobDefinition make_job(const std::string& selector) {
  if (selector == "mean") return mean_job();
  if (selector == "sum") return sum_job();
  if (selector == "median") return median_job();
  if (selector.rfind("proportion:", 0) == 0) {
    std::string label = selector.substr(std::string("proportion:").size());
    if (label.empty()) throw Error("proportion job needs a success label");
    return proportion_job(label);
  }
  if (selector.rfind("kmeans:", 0) == 0) {
    std::string arg = selector.substr(std::string("kmeans:").size());
    std::size_t k = 0;
    try {
      k = std::stoul(arg);
    } catch (const std::exception&) {
      throw Error("invalid cluster count: " + arg);
    }
    return kmeans_job(k);
  }
  throw Error("unknown job selector: " + selector);
}

}  // namespace earl
