#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "earl/bootstrap.hpp"
#include "earl/datagen.hpp"
#include "earl/datastore.hpp"
#include "earl/delta.hpp"
#include "earl/rng.hpp"
#include "earl/sampling.hpp"
#include "earl/stats.hpp"

namespace earl::audit {

struct Report {
  std::string kind;
  bool pass = false;
  std::vector<std::string> lines;
  nlohmann::json details;
};

namespace detail {

inline Sample dummy_sample(const std::vector<std::size_t>& batch_sizes) {
  Sample s;
  std::size_t pos = 0;
  for (std::size_t bs : batch_sizes) {
    std::vector<Record> recs;
    for (std::size_t i = 0; i < bs; ++i, ++pos)
      recs.push_back(Record{"k", 0.0, RecordOrigin{0, pos}});
    s.append_batch(std::move(recs));
  }
  s.kv_count_estimate = static_cast<double>(pos);
  return s;
}

inline std::uint64_t pack_counts(const std::vector<std::uint32_t>& counts) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    key |= static_cast<std::uint64_t>(counts[i] & 0xf) << (4 * i);
  return key;
}

// Exact joint law of a fresh size-n resample over n positions: every
// multiplicity vector with its multinomial probability.
inline std::map<std::uint64_t, double> exact_resample_law(std::size_t n) {
  std::map<std::uint64_t, double> law;
  std::vector<std::uint32_t> counts(n, 0);
  double log_nfact = std::lgamma(static_cast<double>(n) + 1);
  double log_n = std::log(static_cast<double>(n));
  auto rec = [&](auto&& self, std::size_t cell, std::size_t left) -> void {
    if (cell + 1 == n) {
      counts[cell] = static_cast<std::uint32_t>(left);
      double logp = log_nfact - static_cast<double>(n) * log_n;
      for (std::size_t i = 0; i < n; ++i)
        logp -= std::lgamma(static_cast<double>(counts[i]) + 1);
      law[pack_counts(counts)] = std::exp(logp);
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[cell] = static_cast<std::uint32_t>(c);
      self(self, cell + 1, left - c);
    }
  };
  rec(rec, 0, n);
  return law;
}

}  // namespace detail

// Per-record inclusion frequencies of a sampler, chi-squared against uniform.
inline Report uniformity(SampleMode mode, std::size_t records, std::size_t trials,
                         std::size_t draw_n, std::uint64_t seed,
                         const std::string& dataset_path = "",
                         std::uint64_t block_size = kDefaultBlockSize) {
  std::string path = dataset_path;
  if (path.empty()) {
    path = (std::filesystem::temp_directory_path() /
            ("earl-audit-" + std::to_string(seed) + ".tsv"))
               .string();
    GenSpec spec;
    spec.kind = DatasetKind::normal;
    spec.rows = records;
    spec.seed = seed;
    generate_dataset(path, spec);
  }
  BlockFile bf = open_dataset(path, block_size);
  std::vector<Record> all = scan_all(bf);
  records = all.size();
  std::map<std::uint64_t, std::size_t> index;  // line start -> record index
  for (std::size_t i = 0; i < all.size(); ++i) index[all[i].origin.line_start] = i;

  std::vector<std::uint64_t> counts(records, 0);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, Stream::sampler, t);
    Sample s;
    switch (mode) {
      case SampleMode::pre_map: {
        InclusionBitmap bitmap(bf.logical_splits().size());
        s = premap_sample(bf, draw_n, bitmap, rng);
        break;
      }
      case SampleMode::post_map:
        s = postmap_sample(all, draw_n, rng);
        break;
      case SampleMode::reservoir:
        s = reservoir_sample(all, draw_n, rng);
        break;
    }
    for (const auto& r : s.items) ++counts[index.at(r.origin.line_start)];
  }

  auto gof = stats::chi_square_uniform(counts);
  Report rep;
  rep.kind = "uniformity";
  rep.pass = gof.p_value > 0.01;
  rep.details = {{"sampler", to_string(mode)}, {"records", records},  {"trials", trials},
                 {"draw_n", draw_n},           {"chi2", gof.stat},    {"dof", gof.dof},
                 {"p_value", gof.p_value}};
  rep.lines.push_back("sampler=" + std::string(to_string(mode)) +
                      " chi2=" + std::to_string(gof.stat) + " dof=" + std::to_string(gof.dof) +
                      " p=" + std::to_string(gof.p_value));
  return rep;
}

// Size law of the old part: exact draws against Binomial(n', n/n'), and the
// Gaussian approximation against the exact CDF when it is active.
inline Report binomial_law(std::size_t n, std::size_t n_prime, std::size_t draws,
                           std::uint64_t seed) {
  Report rep;
  rep.kind = "binomial";
  Rng rng = make_rng(seed, Stream::estimator);
  double p = static_cast<double>(n) / static_cast<double>(n_prime);

  std::vector<std::uint64_t> counts(n_prime + 1, 0);
  for (std::size_t i = 0; i < draws; ++i)
    ++counts[sample_new_old_part_size({n, n_prime, SizeMode::exact_binomial}, rng)];
  std::vector<double> probs(n_prime + 1, 0);
  for (std::size_t k = 0; k <= n_prime; ++k) probs[k] = stats::binomial_pmf(n_prime, p, k);
  auto gof = stats::chi_square_gof(counts, probs);

  rep.details = {{"n", n},         {"n_prime", n_prime},  {"draws", draws},
                 {"chi2", gof.stat}, {"dof", gof.dof},    {"p_value", gof.p_value}};
  rep.lines.push_back("exact-binomial chi2=" + std::to_string(gof.stat) +
                      " p=" + std::to_string(gof.p_value));
  rep.pass = gof.p_value > 0.01;

  if (choose_size_mode(n, n_prime) == SizeMode::gaussian_approx) {
    std::vector<double> cdf(n_prime + 2, 0);
    for (std::size_t k = 0; k <= n_prime; ++k) cdf[k + 1] = cdf[k] + probs[k];
    std::vector<std::int64_t> gdraws(draws);
    for (std::size_t i = 0; i < draws; ++i)
      gdraws[i] = static_cast<std::int64_t>(
          sample_new_old_part_size({n, n_prime, SizeMode::gaussian_approx}, rng));
    double ks = stats::ks_distance(gdraws, [&](std::int64_t k) {
      if (k < 0) return 0.0;
      if (k >= static_cast<std::int64_t>(n_prime)) return 1.0;
      return cdf[static_cast<std::size_t>(k) + 1];
    });
    rep.details["ks_gaussian"] = ks;
    rep.lines.push_back("gaussian-approx ks=" + std::to_string(ks));
    rep.pass = rep.pass && ks <= 0.01;
  }
  return rep;
}

// Maintained resamples (naive and sketched) against the exact fresh law of
// size n', in total-variation distance; the exact law is the brute-force
// enumeration over all multiplicity vectors. Note the empirical noise floor:
// even exact draws measure about 0.5*sqrt(2/(pi*T))*sum(sqrt(p_i)), so the
// trial count must be large enough for the tolerance to be meaningful.
inline Report delta_equivalence(std::size_t n, std::size_t n_prime, std::size_t trials,
                                std::uint64_t seed, double tolerance = 0.02) {
  if (n_prime > 12 || n >= n_prime) throw Error("use n < n' <= 12 for the exact oracle");
  Sample old_sample = detail::dummy_sample({n});
  Sample expanded = detail::dummy_sample({n, n_prime - n});
  auto exact = detail::exact_resample_law(n_prime);

  std::map<std::uint64_t, std::uint64_t> naive_counts, sketched_counts;
  Rng rng = make_rng(seed, Stream::resample);
  for (std::size_t t = 0; t < trials; ++t) {
    Resample b = draw_resample(old_sample, rng);
    Resample nv = update_resample_naive(b, expanded, rng);
    ++naive_counts[detail::pack_counts(nv.counts)];

    LayeredResample lr = LayeredResample::from_resample(b, rng);
    lr.update(expanded, rng);
    ++sketched_counts[detail::pack_counts(lr.materialize().counts)];
  }

  double tv_naive = stats::total_variation(naive_counts, trials, exact);
  double tv_sketched = stats::total_variation(sketched_counts, trials, exact);
  Report rep;
  rep.kind = "delta-equivalence";
  rep.pass = tv_naive <= tolerance && tv_sketched <= tolerance;
  rep.details = {{"n", n},
                 {"n_prime", n_prime},
                 {"trials", trials},
                 {"tv_naive", tv_naive},
                 {"tv_sketched", tv_sketched},
                 {"tolerance", tolerance}};
  rep.lines.push_back("tv_naive=" + std::to_string(tv_naive) +
                      " tv_sketched=" + std::to_string(tv_sketched));
  return rep;
}

// Work-sharing law: P(X=y) table, plus the optimizer against exhaustive search.
inline Report share_law(std::size_t n) {
  Report rep;
  rep.kind = "eq4";
  ShareOptimum opt = optimal_share_fraction(n);

  std::size_t best_k = 1;
  double best_obj = -1;
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t k = 1; k <= n; ++k) {
    double y = static_cast<double>(k) / static_cast<double>(n);
    double prob = prob_identical_count(n, k);
    double obj = prob * y;
    if (obj > best_obj + 1e-15) {
      best_obj = obj;
      best_k = k;
    }
    if (n <= 64 || k % (n / 32) == 0 || k == opt.k)
      table.push_back({{"k", k}, {"y", y}, {"prob", prob}, {"objective", obj}});
  }
  rep.pass = best_k == opt.k;
  rep.details = {{"n", n},
                 {"optimal_k", opt.k},
                 {"optimal_y", opt.y},
                 {"saved", opt.saved},
                 {"exhaustive_k", best_k},
                 {"table", table}};
  rep.lines.push_back("y*=" + std::to_string(opt.y) + " saved=" + std::to_string(opt.saved) +
                      " (exhaustive k=" + std::to_string(best_k) + ")");
  if (n == 29) {
    double anchor = prob_identical_fraction(29, 0.3);
    rep.details["anchor_p_y03"] = anchor;
    rep.pass = rep.pass && anchor >= 0.34 && anchor <= 0.36;
    rep.lines.push_back("P(y=0.3)=" + std::to_string(anchor));
  }
  return rep;
}

// Disk-touch comparison: sketched updates against a naive variant that loads
// and stores its whole resample through the same counted pair store.
inline Report access_comparison(std::size_t n, std::size_t n_prime, std::uint64_t seed,
                                double c = 4.0) {
  Sample old_sample = detail::dummy_sample({n});
  Sample expanded = detail::dummy_sample({n, n_prime - n});
  Rng rng = make_rng(seed, Stream::resample);

  Resample b = draw_resample(old_sample, rng);

  // naive: read everything, rebuild, write everything
  SpillStore naive_store;
  {
    std::vector<SpillStore::Pair> pairs;
    for (std::uint64_t pos = 0; pos < b.counts.size(); ++pos)
      if (b.counts[pos]) pairs.emplace_back(pos, b.counts[pos]);
    naive_store.write_all(std::move(pairs));
  }
  std::uint64_t naive_before = naive_store.reads() + naive_store.writes();
  {
    const auto& pairs = naive_store.read_all();
    Resample loaded;
    loaded.counts.assign(n, 0);
    loaded.batch_offsets = old_sample.batch_offsets();
    for (const auto& [pos, mult] : pairs) loaded.counts[pos] = mult;
    Resample updated = update_resample_naive(loaded, expanded, rng);
    std::vector<SpillStore::Pair> outp;
    for (std::uint64_t pos = 0; pos < updated.counts.size(); ++pos)
      if (updated.counts[pos]) outp.emplace_back(pos, updated.counts[pos]);
    naive_store.write_all(std::move(outp));
  }
  std::uint64_t naive_touches = naive_store.reads() + naive_store.writes() - naive_before;

  LayeredResample lr = LayeredResample::from_resample(b, rng, c);
  std::uint64_t before = lr.disk_accesses();
  lr.update(expanded, rng);
  std::uint64_t sketched_touches = lr.disk_accesses() - before;

  double ratio = static_cast<double>(sketched_touches) / static_cast<double>(naive_touches);
  Report rep;
  rep.kind = "access";
  rep.pass = ratio <= 0.10;
  rep.details = {{"n", n},
                 {"n_prime", n_prime},
                 {"naive_touches", naive_touches},
                 {"sketched_touches", sketched_touches},
                 {"ratio", ratio}};
  rep.lines.push_back("naive=" + std::to_string(naive_touches) +
                      " sketched=" + std::to_string(sketched_touches) +
                      " ratio=" + std::to_string(ratio));
  return rep;
}

}  // namespace earl::audit
