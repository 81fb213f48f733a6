#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "earl/bootstrap.hpp"
#include "earl/datastore.hpp"
#include "earl/delta.hpp"
#include "earl/error.hpp"
#include "earl/jobs.hpp"
#include "earl/rng.hpp"
#include "earl/sampling.hpp"
#include "earl/ssabe.hpp"

namespace earl {

struct ErrorReport {
  std::size_t worker_id = 0;
  std::uint64_t timestamp = 0;
  double cv = 0;
};

// Append-only log of per-worker error reports; readers keep their own cursor
// and only ever see reports newer than it.
class ErrorBoard {
 public:
  std::uint64_t post(std::size_t worker_id, double cv) {
    std::lock_guard lock(m_);
    log_.push_back(ErrorReport{worker_id, ++tick_, cv});
    return tick_;
  }

  std::vector<ErrorReport> read_after(std::uint64_t cursor) const {
    std::lock_guard lock(m_);
    std::vector<ErrorReport> out;
    for (const auto& r : log_)
      if (r.timestamp > cursor) out.push_back(r);
    return out;
  }

  std::uint64_t latest() const {
    std::lock_guard lock(m_);
    return tick_;
  }

  std::size_t size() const {
    std::lock_guard lock(m_);
    return log_.size();
  }

 private:
  mutable std::mutex m_;
  std::vector<ErrorReport> log_;
  std::uint64_t tick_ = 0;
};

inline std::optional<double> average_board_error(const ErrorBoard& board, std::uint64_t cursor) {
  auto reports = board.read_after(cursor);
  if (reports.empty()) return std::nullopt;
  double s = 0;
  for (const auto& r : reports) s += r.cv;
  return s / static_cast<double>(reports.size());
}

struct RuntimeConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  SampleMode sampler = SampleMode::pre_map;
  std::optional<std::size_t> bootstraps_override;
  bool intra_sharing = true;
  bool force_full = false;
  std::size_t max_iterations = 60;
  double sketch_c = 4.0;
  std::vector<std::pair<std::size_t, std::size_t>> failures;  // (worker, iteration)
  std::optional<std::string> spill_dir;
};

// Schedules the named workers to fail mid-iteration.
inline void inject_failure(RuntimeConfig& cfg, const std::vector<std::size_t>& worker_ids,
                           std::size_t at_iteration) {
  for (auto w : worker_ids) cfg.failures.emplace_back(w, at_iteration);
}

struct TraceRow {
  std::size_t iteration = 0;
  std::size_t n = 0;
  std::size_t B = 0;
  double cv = 0;
  std::uint64_t records_processed = 0;
};

struct FinalResult {
  double estimate = 0;
  double cv = 0;
  bool cv_absolute = false;
  std::size_t B = 0;
  std::size_t n = 0;
  double p = 0;
  std::size_t iterations = 0;
  std::uint64_t records_processed = 0;
  std::string mode;  // early | full | degraded
  std::size_t surviving_replicates = 0;
  std::uint64_t seed = 0;
  std::uint64_t estimation_update_calls = 0;
  nlohmann::json detail;  // job-specific extras, may be null
  std::vector<TraceRow> trace;
  std::vector<CvPoint> curve_points;
};

inline nlohmann::json to_json(const FinalResult& r) {
  nlohmann::json j{{"estimate", r.estimate},
                   {"cv", r.cv},
                   {"cv_absolute", r.cv_absolute},
                   {"B", r.B},
                   {"n", r.n},
                   {"p", r.p},
                   {"iterations", r.iterations},
                   {"records_processed", r.records_processed},
                   {"mode", r.mode},
                   {"surviving_replicates", r.surviving_replicates},
                   {"seed", r.seed},
                   {"estimation_update_calls", r.estimation_update_calls}};
  j["detail"] = r.detail;
  return j;
}

inline FinalResult result_from_json(const nlohmann::json& j) {
  FinalResult r;
  r.estimate = j.at("estimate").get<double>();
  r.cv = j.at("cv").get<double>();
  r.cv_absolute = j.at("cv_absolute").get<bool>();
  r.B = j.at("B").get<std::size_t>();
  r.n = j.at("n").get<std::size_t>();
  r.p = j.at("p").get<double>();
  r.iterations = j.at("iterations").get<std::size_t>();
  r.records_processed = j.at("records_processed").get<std::uint64_t>();
  r.mode = j.at("mode").get<std::string>();
  r.surviving_replicates = j.at("surviving_replicates").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.estimation_update_calls = j.at("estimation_update_calls").get<std::uint64_t>();
  r.detail = j.value("detail", nlohmann::json());
  return r;
}

// Exact computation over every record, with the identity correction.
inline double full_scan(const BlockFile& bf, const JobDefinition& job,
                        std::uint64_t* records_out = nullptr) {
  RecordScanner sc(bf);
  auto state = job.make_state(derive_seed(0, Stream::job_state));
  std::uint64_t count = 0;
  while (auto r = sc.next()) {
    job.update(*state, *r);
    ++count;
  }
  if (count == 0) throw Error("empty dataset: " + bf.path());
  if (records_out) *records_out = count;
  return job.correct(job.finalize(*state), 1.0);
}

namespace detail {

struct ReplicaSlot {
  std::optional<LayeredResample> layered;
  std::unique_ptr<ReduceState> state;  // retractable jobs only
  double estimate = 0;
  bool alive = true;
  bool evaluated = false;
};

struct WorkerOutcome {
  bool failed = false;
  std::vector<double> estimates;
  std::uint64_t eval_calls = 0;
};

}  // namespace detail

// The full lifecycle: local-mode estimation, feasibility gate, then the
// sample -> resample -> estimate -> expand-or-terminate loop across workers.
inline FinalResult run_job(const BlockFile& bf, const JobDefinition& job,
                           const EstimatorConfig& ecfg, const RuntimeConfig& rcfg) {
  ecfg.validate();
  if (rcfg.workers == 0) throw Error("need at least one worker");

  FinalResult result;
  result.seed = rcfg.seed;

  auto sampler = make_sampler(rcfg.sampler, bf, make_rng(rcfg.seed, Stream::sampler));
  Rng est_rng = make_rng(rcfg.seed, Stream::estimator);

  std::uint64_t sampled_records = 0;
  auto full_result = [&](std::size_t B_used) {
    std::uint64_t n_records = 0;
    double est = full_scan(bf, job, &n_records);
    result.estimate = est;
    result.cv = 0;
    result.B = B_used;
    result.n = static_cast<std::size_t>(n_records);
    result.p = 1.0;
    result.iterations = 0;
    result.records_processed = sampled_records + n_records;
    result.mode = "full";
    result.surviving_replicates = 0;
    return result;
  };

  if (rcfg.force_full) return full_result(0);

  // --- Local-mode estimation ---
  const std::size_t ladder_floor = (std::size_t{1} << (ecfg.ladder_depth - 1)) * ecfg.min_rung;
  Sample s;
  try {
    s = sampler->initial(std::min<std::size_t>(512, ladder_floor));
  } catch (const Error&) {
    return full_result(0);  // dataset too small to sample
  }
  sampled_records = s.size();
  if (s.saturated) return full_result(0);

  auto n_init = static_cast<std::size_t>(
      std::llround(ecfg.p_init * std::max(1.0, s.kv_count_estimate)));
  n_init = std::max(n_init, ladder_floor);
  if (n_init > s.size()) {
    sampler->expand(s, n_init - s.size());
    sampled_records = s.size();
    if (s.saturated) return full_result(0);
  }

  ReplicateCache phase1;
  std::size_t B;
  if (rcfg.bootstraps_override) {
    B = *rcfg.bootstraps_override;
    if (B < 2) throw Error("need at least two bootstrap replicates");
  } else {
    BEstimate be = estimate_B(s, job, ecfg, est_rng, rcfg.intra_sharing, &phase1);
    B = be.B;
    result.estimation_update_calls += be.update_calls;
  }
  NEstimate ne =
      estimate_n(s, B, job, ecfg, est_rng, static_cast<std::size_t>(s.kv_count_estimate),
                 phase1.estimates.empty() ? nullptr : &phase1, rcfg.intra_sharing);
  result.estimation_update_calls += ne.update_calls;
  result.B = B;
  result.curve_points = ne.curve.points;

  double dataset_size = std::max(1.0, s.kv_count_estimate);
  if (feasibility_gate(B, ne.n, dataset_size) == Feasibility::full) return full_result(B);

  // --- Work phase ---
  std::uint64_t work_calls = 0;
  if (ne.n > s.size()) {
    sampler->expand(s, ne.n - s.size());
    sampled_records = s.size();
  }

  const std::size_t workers = std::min(rcfg.workers, B);
  const bool retract = job.retractable() && ne.top_cache.has_states;
  std::vector<detail::ReplicaSlot> slots(B);
  if (!ne.top_cache.resamples.empty() && ne.top_cache.resamples.size() == B) {
    for (std::size_t b = 0; b < B; ++b) {
      Rng r = make_rng(rcfg.seed, Stream::resample, 0, b);
      slots[b].layered =
          LayeredResample::from_resample(ne.top_cache.resamples[b], r, rcfg.sketch_c);
      if (retract) slots[b].state = std::move(ne.top_cache.states[b]);
    }
  }

  ErrorBoard board;
  std::uint64_t cursor = 0;
  bool any_failure = false;
  std::size_t iteration = 0;
  std::string mode;
  ErrorEstimate pooled;

  while (true) {
    ++iteration;
    std::vector<detail::WorkerOutcome> outcomes(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        detail::WorkerOutcome& out = outcomes[w];
        std::vector<std::size_t> owned;
        for (std::size_t b = w; b < B; b += workers)
          if (slots[b].alive) owned.push_back(b);
        bool fail_here = false;
        for (const auto& [fw, fi] : rcfg.failures)
          if (fw == w && fi == iteration) fail_here = true;
        // A failing worker stops mid-iteration and never reports: work done up
        // to that point dies with it, so its whole shard is dropped.
        std::size_t budget = fail_here ? owned.size() / 2 : owned.size();

        for (std::size_t idx = 0; idx < owned.size(); ++idx) {
          std::size_t b = owned[idx];
          if (fail_here) {
            slots[b].alive = false;
            if (idx >= budget) continue;  // never reached before the stop
          }
          detail::ReplicaSlot& slot = slots[b];
          Rng rrng = make_rng(rcfg.seed, Stream::resample, iteration, b);
          if (!slot.layered) {
            Resample fresh = draw_resample(s, rrng);
            slot.layered = LayeredResample::from_resample(fresh, rrng, rcfg.sketch_c);
            slot.state.reset();
          } else if (slot.layered->positions() < s.size()) {
            ResampleEdits edits;
            slot.layered->update(s, rrng, &edits);
            if (retract && slot.state) {
              for (auto pos : edits.deleted) job.retract(*slot.state, s.items[pos]);
              for (auto pos : edits.added) job.update(*slot.state, s.items[pos]);
              out.eval_calls += edits.deleted.size() + edits.added.size();
            }
          }
          if (retract && slot.state) {
            slot.estimate = job.finalize(*slot.state);
          } else {
            Resample mat = slot.layered->materialize();
            slot.estimate = evaluate_on_resample(
                s, mat, job, derive_seed(rcfg.seed, Stream::job_state, iteration, b),
                &out.eval_calls);
          }
          slot.evaluated = true;
          out.estimates.push_back(slot.estimate);
        }
        out.failed = fail_here;
        if (!fail_here) {
          stats::RunningMoments m;
          for (double e : out.estimates) m.add(e);
          double cv = out.estimates.empty()
                          ? 0.0
                          : error_from_moments(m.mean(), m.variance_over_n()).cv;
          board.post(w, cv);
        }
      });
    }
    for (auto& t : threads) t.join();

    std::vector<double> estimates;
    for (const auto& slot : slots)
      if (slot.alive && slot.evaluated) estimates.push_back(slot.estimate);
    for (auto& o : outcomes) {
      work_calls += o.eval_calls;
      any_failure = any_failure || o.failed;
    }
    if (estimates.empty()) throw Error("no survivors: every worker failed");

    stats::RunningMoments m;
    for (double e : estimates) m.add(e);
    pooled = error_from_moments(m.mean(), m.variance_over_n());
    result.surviving_replicates = estimates.size();

    auto board_avg = average_board_error(board, cursor);
    cursor = board.latest();
    result.trace.push_back(
        TraceRow{iteration, s.size(), B, pooled.cv, sampled_records + work_calls});

    if (any_failure) {
      mode = "degraded";
      break;
    }
    bool board_ok = board_avg.has_value() && *board_avg <= ecfg.sigma;
    if (board_ok && pooled.cv <= ecfg.sigma) {
      mode = "early";
      break;
    }
    if (iteration >= rcfg.max_iterations || s.saturated ||
        static_cast<double>(s.size()) >= dataset_size) {
      return full_result(B);  // cannot grow further; exact fallback
    }

    // Expansion: refit with the newly observed point, clamp to at most doubling.
    std::vector<CvPoint> pts = ne.curve.points;
    pts.push_back(CvPoint{s.size(), pooled.cv});
    CvCurve refit = CvCurve::fit(std::move(pts));
    std::size_t target = refit.solve_n(ecfg.sigma, s.size() + 1,
                                       static_cast<std::size_t>(dataset_size));
    target = std::min(target, 2 * s.size());
    target = std::max(target, s.size() + 1);
    sampler->expand(s, target - s.size());
    sampled_records = s.size();
    dataset_size = std::max(dataset_size, s.kv_count_estimate);
  }

  double p = std::min(1.0, static_cast<double>(s.size()) / dataset_size);
  result.estimate = job.correct(pooled.mean_estimate, p);
  result.cv = pooled.cv;
  result.cv_absolute = pooled.absolute;
  result.n = s.size();
  result.p = p;
  result.iterations = iteration;
  result.mode = mode;

  if (job.describe) {
    auto state = job.make_state(derive_seed(rcfg.seed, Stream::job_state));
    for (const auto& rec : s.items) {
      job.update(*state, rec);
      ++work_calls;
    }
    result.detail = job.describe(*state);
  }
  result.records_processed = sampled_records + work_calls;

  if (rcfg.spill_dir) {
    std::filesystem::create_directories(*rcfg.spill_dir);
    for (std::size_t b = 0; b < B; ++b) {
      if (!slots[b].alive || !slots[b].layered) continue;
      Rng r = make_rng(rcfg.seed, Stream::resample, iteration + 1, b);
      slots[b].layered->commit(r);
      slots[b].layered->spill().save(*rcfg.spill_dir + "/resample_" + std::to_string(b) +
                                     ".spill");
    }
  }
  return result;
}

}  // namespace earl
