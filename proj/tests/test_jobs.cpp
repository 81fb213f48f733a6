#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "earl/jobs.hpp"
#include "test_support.hpp"

using namespace earl;
using testsupport::sample_of;
using testsupport::token_sample;

namespace {

double run_full(const JobDefinition& job, const Sample& s, std::uint64_t seed = 0) {
  auto state = job.make_state(seed);
  for (const auto& r : s.items) job.update(*state, r);
  return job.finalize(*state);
}

}  // namespace

TEST_CASE("mean job") {
  auto job = mean_job();
  CHECK(run_full(job, sample_of({1, 2, 3})) == Catch::Approx(2.0));
  CHECK(run_full(job, sample_of({7, 7, 7})) == Catch::Approx(7.0));
  CHECK(job.correct(4.2, 0.3) == 4.2);
  CHECK(job.mergeable());
  CHECK(job.retractable());

  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> vs(10000);
  for (auto& v : vs) v = gauss(rng);
  CHECK(std::abs(run_full(job, sample_of(vs))) < 0.05);

  auto empty = job.make_state(0);
  CHECK_THROWS_WITH(job.finalize(*empty), Catch::Matchers::ContainsSubstring("empty state"));
}

TEST_CASE("sum job and its correction") {
  auto job = sum_job();
  CHECK(run_full(job, sample_of({1, 2, 3, 4})) == Catch::Approx(10.0));
  CHECK(job.correct(10.0, 1.0) == Catch::Approx(10.0));
  CHECK(job.correct(4.0, 0.5) == Catch::Approx(8.0));
  CHECK_THROWS_WITH(job.correct(4.0, 0.0), Catch::Matchers::ContainsSubstring("p > 0"));
  CHECK_THROWS(job.correct(4.0, -1.0));
}

TEST_CASE("median job") {
  auto job = median_job();
  CHECK(run_full(job, sample_of({5})) == Catch::Approx(5.0));
  CHECK(run_full(job, sample_of({1, 2, 3, 4})) == Catch::Approx(2.5));
  CHECK(run_full(job, sample_of({3, 1, 2})) == Catch::Approx(2.0));
  CHECK(job.correct(3.3, 0.1) == 3.3);

  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, 1000)(rng);
    std::vector<double> vs(n);
    for (auto& v : vs)
      v = std::uniform_real_distribution<double>(-5, 5)(rng);
    CHECK(run_full(job, sample_of(vs)) == Catch::Approx(testsupport::oracle_median(vs)));
  }
}

TEST_CASE("median retraction matches recomputation") {
  auto job = median_job();
  auto s = sample_of({4, 8, 15, 16, 23, 42});
  auto state = job.make_state(0);
  for (const auto& r : s.items) job.update(*state, r);
  job.retract(*state, s.items[1]);  // drop 8
  job.retract(*state, s.items[4]);  // drop 23
  CHECK(job.finalize(*state) ==
        Catch::Approx(testsupport::oracle_median({4, 15, 16, 42})));
  Record ghost{"g", 999.0, RecordOrigin{0, 9999}};
  CHECK_THROWS(job.retract(*state, ghost));
}

TEST_CASE("proportion job matches the closed-form variance") {
  auto job = proportion_job("yes");
  std::vector<std::string> toks;
  for (int i = 0; i < 100; ++i) toks.push_back(i < 30 ? "yes" : "no");
  auto s = token_sample(toks);
  CHECK(run_full(job, s) == Catch::Approx(0.3));
  auto state = job.make_state(0);
  for (const auto& r : s.items) job.update(*state, r);
  auto d = job.describe(*state);
  CHECK(d["variance"].get<double>() == Catch::Approx(0.3 * 0.7 / 100).epsilon(1e-12));

  // variance formula on a grid
  for (std::size_t trials : {10u, 50u, 250u}) {
    for (std::size_t succ = 0; succ <= trials; succ += trials / 5) {
      std::vector<std::string> g;
      for (std::size_t i = 0; i < trials; ++i) g.push_back(i < succ ? "yes" : "no");
      auto st = job.make_state(0);
      for (const auto& r : token_sample(g).items) job.update(*st, r);
      double p = static_cast<double>(succ) / static_cast<double>(trials);
      auto dd = job.describe(*st);
      CHECK(dd["proportion"].get<double>() == Catch::Approx(p).margin(1e-12));
      CHECK(dd["variance"].get<double>() ==
            Catch::Approx(p * (1 - p) / static_cast<double>(trials)).margin(1e-12));
    }
  }

  // degenerate interval at zero successes
  std::vector<std::string> zero(100, "no");
  auto st0 = job.make_state(0);
  for (const auto& r : token_sample(zero).items) job.update(*st0, r);
  auto d0 = job.describe(*st0);
  CHECK(d0["proportion"].get<double>() == 0.0);
  CHECK(d0["ci95"][0].get<double>() == 0.0);
  CHECK(d0["ci95"][1].get<double>() == 0.0);

  std::vector<std::string> ones(40, "yes");
  auto st1 = job.make_state(0);
  for (const auto& r : token_sample(ones).items) job.update(*st1, r);
  CHECK(job.finalize(*st1) == Catch::Approx(1.0));

  auto stempty = job.make_state(0);
  CHECK_THROWS(job.finalize(*stempty));
}

TEST_CASE("kmeans job on separated 1-D points") {
  auto job = kmeans_job(2);
  Sample s = sample_of({0.0, 0.1, 10.0, 10.1});
  auto state = job.make_state(99);
  for (const auto& r : s.items) job.update(*state, r);
  auto d = job.describe(*state);
  auto cents = d["centroids"].get<std::vector<std::vector<double>>>();
  REQUIRE(cents.size() == 2);
  CHECK(cents[0][0] == Catch::Approx(0.05));
  CHECK(cents[1][0] == Catch::Approx(10.05));

  // exhaustive check: no 2-partition beats the reported objective
  std::vector<double> pts{0.0, 0.1, 10.0, 10.1};
  double best = 1e300;
  for (unsigned mask = 1; mask < 15; ++mask) {
    std::vector<double> a, b;
    for (int i = 0; i < 4; ++i) (mask >> i & 1 ? a : b).push_back(pts[i]);
    if (a.empty() || b.empty()) continue;
    auto wcss = [](const std::vector<double>& g) {
      double m = testsupport::oracle_mean(g), w = 0;
      for (double v : g) w += (v - m) * (v - m);
      return w;
    };
    best = std::min(best, wcss(a) + wcss(b));
  }
  CHECK(d["wcss"].get<double>() == Catch::Approx(best));
}

TEST_CASE("kmeans edge cases") {
  auto k1 = kmeans_job(1);
  Sample s = sample_of({1.0, 2.0, 6.0});
  auto st = k1.make_state(5);
  for (const auto& r : s.items) k1.update(*st, r);
  auto d = k1.describe(*st);
  CHECK(d["centroids"][0][0].get<double>() == Catch::Approx(3.0));  // reduces to the mean

  auto k5 = kmeans_job(5);
  auto st5 = k5.make_state(5);
  for (const auto& r : s.items) k5.update(*st5, r);
  CHECK_THROWS_WITH(k5.finalize(*st5),
                    Catch::Matchers::ContainsSubstring("k distinct points"));

  // fixed seed => deterministic output
  auto k2 = kmeans_job(2);
  auto run = [&](std::uint64_t seed) {
    auto state = k2.make_state(seed);
    for (const auto& r : s.items) k2.update(*state, r);
    return k2.finalize(*state);
  };
  CHECK(run(7) == run(7));
}

TEST_CASE("every builtin satisfies correct(x, 1) = x") {
  for (const auto* sel : {"mean", "sum", "median", "proportion:yes", "kmeans:2"}) {
    auto job = make_job(sel);
    for (double x : {-3.0, 0.0, 2.5, 1e6}) {
      CHECK(job.correct(x, 1.0) == x);
    }
  }
}

TEST_CASE("mergeable jobs are order independent") {
  std::mt19937_64 rng(555);
  std::vector<double> vs(200);
  for (auto& v : vs) v = std::normal_distribution<double>(0, 3)(rng);
  auto s = sample_of(vs);
  for (const auto* sel : {"mean", "sum", "median"}) {
    auto job = make_job(sel);
    REQUIRE(job.mergeable());
    auto forward = job.make_state(0);
    for (const auto& r : s.items) job.update(*forward, r);
    std::vector<std::size_t> order(s.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    auto shuffled = job.make_state(0);
    for (std::size_t i : order) job.update(*shuffled, s.items[i]);
    CHECK(job.finalize(*forward) == Catch::Approx(job.finalize(*shuffled)).epsilon(1e-12));
  }
}

TEST_CASE("merge equals combined updates") {
  auto s = sample_of({1, 2, 3, 4, 5, 6});
  for (const auto* sel : {"mean", "sum", "median"}) {
    auto job = make_job(sel);
    auto left = job.make_state(0);
    auto right = job.make_state(0);
    for (std::size_t i = 0; i < 3; ++i) job.update(*left, s.items[i]);
    for (std::size_t i = 3; i < 6; ++i) job.update(*right, s.items[i]);
    job.merge(*left, *right);
    auto whole = job.make_state(0);
    for (const auto& r : s.items) job.update(*whole, r);
    CHECK(job.finalize(*left) == Catch::Approx(job.finalize(*whole)));
  }
}

TEST_CASE("job selector parsing") {
  CHECK(make_job("mean").name == "mean");
  CHECK(make_job("proportion:hit").name == "proportion:hit");
  CHECK(make_job("kmeans:3").name == "kmeans:3");
  CHECK_THROWS_WITH(make_job("mode"), Catch::Matchers::ContainsSubstring("unknown job"));
  CHECK_THROWS(make_job("proportion:"));
  CHECK_THROWS(make_job("kmeans:x"));
}
