#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "earl/audit.hpp"
#include "earl/datagen.hpp"
#include "earl/datastore.hpp"
#include "earl/engine.hpp"
#include "earl/jobs.hpp"

namespace {

std::uint64_t materialize_seed(std::optional<std::uint64_t> seed) {
  if (seed) return *seed;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

earl::SampleMode sampler_from(const std::string& s) {
  if (s == "pre") return earl::SampleMode::pre_map;
  if (s == "post") return earl::SampleMode::post_map;
  if (s == "reservoir") return earl::SampleMode::reservoir;
  throw earl::Error("unknown sampler: " + s);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw earl::Error("cannot write: " + path);
  out << text;
}

void emit_result(const earl::FinalResult& result, const std::optional<std::string>& out_path,
                 const std::optional<std::string>& trace_path,
                 const std::optional<std::string>& curve_path) {
  std::string doc = earl::to_json(result).dump(2) + "\n";
  std::cout << doc;
  if (out_path) write_text(*out_path, doc);
  if (trace_path) {
    std::string csv = "iteration,n,B,cv,records_processed\n";
    for (const auto& row : result.trace) {
      csv += std::to_string(row.iteration) + "," + std::to_string(row.n) + "," +
             std::to_string(row.B) + "," + std::to_string(row.cv) + "," +
             std::to_string(row.records_processed) + "\n";
    }
    write_text(*trace_path, csv);
  }
  if (curve_path) {
    std::string csv = "n,cv\n";
    for (const auto& pt : result.curve_points)
      csv += std::to_string(pt.n) + "," + std::to_string(pt.cv) + "\n";
    write_text(*curve_path, csv);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early approximate analytics over block-partitioned datasets"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file ([subcommand] sections), flags win");
  app.fallthrough();

  // --- generate ---
  auto* gen = app.add_subcommand("generate", "Emit a synthetic dataset and its truth manifest");
  std::string gen_out;
  std::string gen_dist = "normal";
  earl::GenSpec spec;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--dist", gen_dist, "uniform|normal|clustered|categorical");
  gen->add_option("--rows", spec.rows, "record count")->required();
  gen->add_option("--mu", spec.mu, "normal mean");
  gen->add_option("--sd", spec.sd, "normal standard deviation");
  gen->add_option("--lo", spec.lo, "uniform lower bound");
  gen->add_option("--hi", spec.hi, "uniform upper bound");
  gen->add_option("--clusters", spec.clusters, "cluster count");
  gen->add_option("--cluster-sd", spec.cluster_sd, "per-cluster spread");
  gen->add_option("--radius", spec.cluster_radius, "cluster center ring radius");
  gen->add_option("--p-success", spec.p_success, "categorical success probability");
  gen->add_option("--success-label", spec.success_label, "categorical success token");
  gen->add_option("--failure-label", spec.failure_label, "categorical failure token");
  gen->add_option("--seed", gen_seed, "generator seed")->envname("EARL_SEED");

  // --- run ---
  auto* run = app.add_subcommand("run", "Run a job to a target error bound");
  std::string run_data, run_job_sel = "mean", run_sampler = "pre", run_mode = "early";
  earl::EstimatorConfig ecfg;
  earl::RuntimeConfig rcfg;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> run_bootstraps;
  std::optional<std::string> run_out, run_trace, run_curve, run_spill;
  std::vector<std::string> run_fail;
  std::uint64_t run_block = earl::kDefaultBlockSize;
  bool no_sharing = false;
  run->add_option("--data", run_data, "dataset path")->required();
  run->add_option("--job", run_job_sel, "mean|sum|median|proportion:<label>|kmeans:<k>");
  run->add_option("--sigma", ecfg.sigma, "target error bound (cv)");
  run->add_option("--tau", ecfg.tau, "stability threshold for the B sweep");
  run->add_option("--p-init", ecfg.p_init, "initial sample fraction");
  run->add_option("--ladder-depth", ecfg.ladder_depth, "subsample ladder depth");
  run->add_option("--sampler", run_sampler, "pre|post|reservoir");
  run->add_option("--bootstraps", run_bootstraps, "fixed replicate count (skips the sweep)");
  run->add_flag("--no-intra-sharing", no_sharing, "disable resample work sharing");
  run->add_option("--workers", rcfg.workers, "concurrent worker count");
  run->add_option("--fail", run_fail, "worker:iteration failure injection (repeatable)");
  run->add_option("--mode", run_mode, "early|full");
  run->add_option("--seed", run_seed, "run seed")->envname("EARL_SEED");
  run->add_option("--out", run_out, "result JSON path");
  run->add_option("--trace", run_trace, "per-iteration trace CSV path");
  run->add_option("--curve-out", run_curve, "fitted cv curve points CSV path");
  run->add_option("--block-size", run_block, "block size in bytes");
  run->add_option("--spill-dir", run_spill, "directory for resample spill files");

  // --- full ---
  auto* full = app.add_subcommand("full", "Exact baseline over the entire dataset");
  std::string full_data, full_job_sel = "mean";
  std::optional<std::string> full_out;
  std::uint64_t full_block = earl::kDefaultBlockSize;
  full->add_option("--data", full_data, "dataset path")->required();
  full->add_option("--job", full_job_sel, "job selector");
  full->add_option("--out", full_out, "result JSON path");
  full->add_option("--block-size", full_block, "block size in bytes");

  // --- audit ---
  auto* aud = app.add_subcommand("audit", "Statistical audits of the samplers and maintenance");
  std::string aud_kind, aud_sampler = "post", aud_data;
  std::size_t aud_records = 1000, aud_trials = 10000, aud_draw = 50;
  std::size_t aud_n = 5, aud_nprime = 8;
  double aud_c = 4.0;
  std::optional<std::uint64_t> aud_seed;
  aud->add_option("kind", aud_kind, "uniformity|delta-equivalence|eq4|binomial|access")
      ->required();
  aud->add_option("--sampler", aud_sampler, "pre|post|reservoir");
  aud->add_option("--data", aud_data, "existing dataset to audit against");
  aud->add_option("--records", aud_records, "dataset size for uniformity");
  aud->add_option("--trials", aud_trials, "trial count");
  aud->add_option("--draw-n", aud_draw, "per-trial sample size");
  aud->add_option("--n", aud_n, "old sample size");
  aud->add_option("--nprime", aud_nprime, "expanded sample size");
  aud->add_option("--c", aud_c, "sketch constant");
  aud->add_option("--seed", aud_seed, "audit seed")->envname("EARL_SEED");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      spec.kind = earl::dataset_kind_from(gen_dist);
      spec.seed = materialize_seed(gen_seed);
      earl::Manifest m = earl::generate_dataset(gen_out, spec);
      std::cout << earl::to_json(m).dump(2) << "\n";
      return 0;
    }

    if (run->parsed()) {
      rcfg.seed = materialize_seed(run_seed);
      if (ecfg.tau >= ecfg.sigma) {
        ecfg.tau = ecfg.sigma / 2;
        std::cerr << "note: tau clamped to sigma/2 = " << ecfg.tau << "\n";
      }
      rcfg.sampler = sampler_from(run_sampler);
      rcfg.bootstraps_override = run_bootstraps;
      rcfg.intra_sharing = !no_sharing;
      rcfg.spill_dir = run_spill;
      if (run_mode == "full") {
        rcfg.force_full = true;
      } else if (run_mode != "early") {
        throw earl::Error("unknown mode: " + run_mode);
      }
      for (const auto& f : run_fail) {
        auto colon = f.find(':');
        if (colon == std::string::npos)
          throw earl::Error("--fail expects worker:iteration, got " + f);
        rcfg.failures.emplace_back(std::stoull(f.substr(0, colon)),
                                   std::stoull(f.substr(colon + 1)));
      }
      earl::BlockFile bf = earl::open_dataset(run_data, run_block);
      earl::JobDefinition job = earl::make_job(run_job_sel);
      earl::FinalResult result = earl::run_job(bf, job, ecfg, rcfg);
      emit_result(result, run_out, run_trace, run_curve);
      return result.mode == "degraded" ? 2 : 0;
    }

    if (full->parsed()) {
      earl::BlockFile bf = earl::open_dataset(full_data, full_block);
      earl::JobDefinition job = earl::make_job(full_job_sel);
      std::uint64_t records = 0;
      double estimate = earl::full_scan(bf, job, &records);
      earl::FinalResult result;
      result.estimate = estimate;
      result.B = 0;
      result.n = records;
      result.p = 1.0;
      result.records_processed = records;
      result.mode = "full";
      emit_result(result, full_out, std::nullopt, std::nullopt);
      return 0;
    }

    if (aud->parsed()) {
      std::uint64_t seed = materialize_seed(aud_seed);
      earl::audit::Report rep;
      if (aud_kind == "uniformity") {
        rep = earl::audit::uniformity(sampler_from(aud_sampler), aud_records, aud_trials,
                                      aud_draw, seed, aud_data);
      } else if (aud_kind == "delta-equivalence") {
        rep = earl::audit::delta_equivalence(aud_n, aud_nprime, aud_trials, seed);
      } else if (aud_kind == "eq4") {
        rep = earl::audit::share_law(aud_n);
      } else if (aud_kind == "binomial") {
        rep = earl::audit::binomial_law(aud_n, aud_nprime, aud_trials, seed);
      } else if (aud_kind == "access") {
        rep = earl::audit::access_comparison(aud_n, aud_nprime, seed, aud_c);
      } else {
        throw earl::Error("unknown audit kind: " + aud_kind);
      }
      for (const auto& line : rep.lines) std::cout << line << "\n";
      std::cout << rep.details.dump(2) << "\n";
      std::cout << (rep.pass ? "PASS" : "FAIL") << " " << rep.kind << "\n";
      return rep.pass ? 0 : 1;
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
