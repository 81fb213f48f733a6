#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "earl/audit.hpp"
#include "earl/delta.hpp"
#include "test_support.hpp"

using namespace earl;
using testsupport::TempFile;

namespace {

Sample positions_sample(std::vector<std::size_t> batch_sizes) {
  Sample s;
  std::size_t pos = 0;
  for (std::size_t bs : batch_sizes) {
    std::vector<Record> recs;
    for (std::size_t i = 0; i < bs; ++i, ++pos)
      recs.push_back(Record{"k", double(pos), RecordOrigin{0, pos}});
    s.append_batch(std::move(recs));
  }
  s.kv_count_estimate = double(pos);
  return s;
}

}  // namespace

TEST_CASE("size-law mode selection keeps 5-sigma headroom") {
  CHECK(choose_size_mode(10, 20) == SizeMode::exact_binomial);
  CHECK(choose_size_mode(5000, 9999) == SizeMode::exact_binomial);
  CHECK(choose_size_mode(10000, 20000) == SizeMode::gaussian_approx);
  CHECK(choose_size_mode(9999, 10000) == SizeMode::exact_binomial);  // too narrow

  for (std::size_t n_prime : {10000u, 50000u, 200000u}) {
    for (std::size_t n : {n_prime / 10, n_prime / 2, n_prime - n_prime / 100}) {
      if (choose_size_mode(n, n_prime) != SizeMode::gaussian_approx) continue;
      double dn = double(n), dnp = double(n_prime);
      double sigma0 = std::sqrt(dn * (1 - dn / dnp));
      double mass_out = std::erfc(dn / sigma0 / std::sqrt(2.0)) / 2 +
                        std::erfc((dnp - dn) / sigma0 / std::sqrt(2.0)) / 2;
      INFO("n=" << n << " n'=" << n_prime);
      CHECK(mass_out < 1e-6);
    }
  }
}

TEST_CASE("size law: degenerate and binomial cases") {
  Rng rng = make_rng(1, Stream::resample);
  for (int i = 0; i < 50; ++i)
    CHECK(sample_new_old_part_size({15, 15, SizeMode::exact_binomial}, rng) == 15);

  stats::RunningMoments m;
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i)
    m.add(double(sample_new_old_part_size({10, 20, SizeMode::exact_binomial}, rng)));
  CHECK(std::abs(m.mean() - 10.0) / 10.0 < 0.05);
  CHECK(std::abs(m.variance_over_n() - 5.0) / 5.0 < 0.05);

  CHECK_THROWS(sample_new_old_part_size({30, 20, SizeMode::exact_binomial}, rng));
}

TEST_CASE("gaussian approximation tracks the exact law") {
  auto rep = audit::binomial_law(10000, 20000, 40000, 11);
  INFO(rep.details.dump());
  CHECK(rep.details.contains("ks_gaussian"));
  CHECK(rep.details["ks_gaussian"].get<double>() <= 0.01);
}

TEST_CASE("naive maintenance: no-op delta and size postcondition") {
  Sample old_s = positions_sample({6});
  Sample same = positions_sample({6, 0});
  Rng rng = make_rng(2, Stream::resample);
  Resample b = draw_resample(old_s, rng);
  Resample kept = update_resample_naive(b, same, rng);
  CHECK(kept.counts == b.counts);
  CHECK(kept.batch_count() == 2);
  CHECK(kept.part_size(1) == 0);

  Sample grown = positions_sample({6, 4});
  for (int i = 0; i < 300; ++i) {
    Resample nb = update_resample_naive(b, grown, rng);
    CHECK(nb.size() == 10);
    CHECK(nb.part_size(0) + nb.part_size(1) == 10);
  }
  Sample wrong = positions_sample({7, 3});
  CHECK_THROWS(update_resample_naive(b, wrong, rng));
}

TEST_CASE("edits replay the maintenance") {
  Sample old_s = positions_sample({8});
  Sample grown = positions_sample({8, 5});
  Rng rng = make_rng(3, Stream::resample);
  for (int i = 0; i < 200; ++i) {
    Resample b = draw_resample(old_s, rng);
    ResampleEdits edits;
    Resample nb = update_resample_naive(b, grown, rng, &edits);
    std::vector<std::uint32_t> replay = b.counts;
    replay.resize(13, 0);
    for (auto pos : edits.deleted) {
      REQUIRE(replay[pos] > 0);
      --replay[pos];
    }
    for (auto pos : edits.added) ++replay[pos];
    CHECK(replay == nb.counts);
  }
}

TEST_CASE("maintained resamples match the fresh law (naive + sketched, small)") {
  auto rep = audit::delta_equivalence(2, 3, 400000, 17);
  INFO(rep.details.dump());
  CHECK(rep.pass);
  CHECK(rep.details["tv_naive"].get<double>() <= 0.01);
  CHECK(rep.details["tv_sketched"].get<double>() <= 0.01);
}

TEST_CASE("sketch drawing and refresh") {
  Rng rng = make_rng(4, Stream::resample);
  std::vector<std::uint64_t> backing(30);
  std::iota(backing.begin(), backing.end(), 100);

  Sketch full = Sketch::draw(backing, 64, rng);
  CHECK(full.size() == 30);
  std::set<std::uint64_t> got(full.entries().begin(), full.entries().end());
  CHECK(got == std::set<std::uint64_t>(backing.begin(), backing.end()));

  Sketch part = Sketch::draw(backing, 10, rng);
  CHECK(part.size() == 10);
  CHECK(part.capacity() == 10);
  std::set<std::uint64_t> seen(part.entries().begin(), part.entries().end());
  CHECK(seen.size() == 10);  // without replacement
  for (auto v : seen) CHECK((v >= 100 && v < 130));

  std::size_t takes = 0;
  while (!part.exhausted()) {
    part.take();
    ++takes;
  }
  CHECK(takes == 10);
  CHECK_THROWS(part.take());

  Sketch refreshed = sketch_refresh(part, backing, rng);
  CHECK(refreshed.size() == 10);
  CHECK_FALSE(refreshed.exhausted());
  CHECK_THROWS(sketch_refresh(part, std::span<const std::uint64_t>(), rng));
}

TEST_CASE("sketch refresh membership is uniform") {
  std::vector<std::uint64_t> backing(100);
  std::iota(backing.begin(), backing.end(), 0);
  std::vector<std::uint64_t> counts(100, 0);
  Rng rng = make_rng(5, Stream::resample);
  const std::size_t refreshes = 10000;
  Sketch proto = Sketch::draw(backing, 10, rng);
  for (std::size_t i = 0; i < refreshes; ++i) {
    Sketch sk = sketch_refresh(proto, backing, rng);
    for (auto v : sk.entries()) ++counts[v];
  }
  auto gof = stats::chi_square_uniform(counts);
  INFO("chi2=" << gof.stat << " p=" << gof.p_value);
  CHECK(gof.p_value > 0.01);
}

TEST_CASE("spill store format round-trips and validates its magic") {
  SpillStore st;
  st.write_all({{0, 3}, {7, 1}, {123456789012345ULL, 42}});
  CHECK(st.writes() == 3);
  TempFile f("spill");
  st.save(f.path());

  SpillStore back = SpillStore::load(f.path());
  CHECK(back.read_all() == st.read_all());
  CHECK(back.reads() == 3);

  TempFile bad("badspill", "NOTMAGIC plus junk");
  CHECK_THROWS_WITH(SpillStore::load(bad.path()),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("layered resample: empty delta touches nothing") {
  Sample old_s = positions_sample({6});
  Sample same = positions_sample({6, 0});
  Rng rng = make_rng(6, Stream::resample);
  Resample b = draw_resample(old_s, rng);
  LayeredResample lr = LayeredResample::from_resample(b, rng);
  auto before = lr.disk_accesses();
  lr.update(same, rng);
  CHECK(lr.disk_accesses() == before);
  CHECK(lr.materialize().counts == b.counts);
  CHECK(lr.sketches_valid());
}

TEST_CASE("layered resample keeps invariants across growth and commits") {
  Rng rng = make_rng(7, Stream::resample);
  Sample s = positions_sample({5});
  Resample b = draw_resample(s, rng);
  LayeredResample lr = LayeredResample::from_resample(b, rng, 1.0);  // tiny sketches

  std::vector<std::size_t> sizes{5};
  std::size_t total = 5;
  for (int step = 0; step < 6; ++step) {
    sizes.push_back(3 + step);
    total += 3 + step;
    Sample grown = positions_sample(sizes);
    lr.update(grown, rng);
    Resample mat = lr.materialize();
    CHECK(mat.size() == total);
    std::size_t parts = 0;
    for (std::size_t k = 0; k < mat.batch_count(); ++k) parts += mat.part_size(k);
    CHECK(parts == total);
    CHECK(lr.sketches_valid());
  }
  CHECK(lr.dirty());
  lr.commit(rng);
  CHECK_FALSE(lr.dirty());
  CHECK(lr.sketches_valid());
  // committed pairs reproduce the in-memory multiset
  std::map<std::uint64_t, std::uint32_t> from_spill;
  for (const auto& [pos, mult] : lr.spill().read_all()) from_spill[pos] = mult;
  Resample mat = lr.materialize();
  for (std::size_t pos = 0; pos < mat.counts.size(); ++pos) {
    auto it = from_spill.find(pos);
    std::uint32_t stored = it == from_spill.end() ? 0 : it->second;
    CHECK(stored == mat.counts[pos]);
  }
}

TEST_CASE("tiny sketches force the exhaustion-commit path") {
  Rng rng = make_rng(8, Stream::resample);
  Sample s = positions_sample({40});
  Resample b = draw_resample(s, rng);
  LayeredResample lr = LayeredResample::from_resample(b, rng, 0.2);
  auto writes_before = lr.spill().writes();
  bool committed = false;
  std::vector<std::size_t> sizes{40};
  for (int step = 0; step < 8 && !committed; ++step) {
    sizes.push_back(1);
    lr.update(positions_sample(sizes), rng);
    committed = lr.spill().writes() > writes_before;
  }
  CHECK(committed);  // deletions outran the small sketches at least once
  CHECK(lr.sketches_valid());
}

TEST_CASE("sketched maintenance touches a fraction of the naive traffic") {
  auto rep = audit::access_comparison(10000, 20000, 33, 4.0);
  INFO(rep.details.dump());
  CHECK(rep.pass);
}
