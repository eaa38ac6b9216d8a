#pragma once
//
// Experiment harness: centralized baseline with early stopping, the C x E
// grid, and the plot-ready report tables.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"

namespace fedsim {

// ---------------------------------------------------------------------------
// Centralized baseline

struct CentralConfig {
  std::size_t epochs = 50;
  std::size_t B = 64;
  std::size_t patience = 5;  // epochs without improvement before stopping
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;

  void validate() const {
    detail::require(epochs >= 1, "central: epochs must be >= 1");
    detail::require(B >= 1, "central: B must be >= 1");
    detail::require(patience >= 1, "central: patience must be >= 1");
    optimizer.validate();
  }
};

// Stops once `patience` consecutive epochs fail to beat the best metric.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when the metric is a new best.
  bool update(double metric) {
    if (metric > best_) {
      best_ = metric;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const noexcept { return since_best_ >= patience_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double pr_auc = 0.0;
  double eval_loss = 0.0;
};

struct CentralResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  ParameterVector best_params;
  ParameterVector final_params;
  bool stopped_early = false;
};

using Evaluator = std::function<Evaluation(const ParameterVector&, std::size_t epoch)>;

// Adam (or SGD) on pooled data; validation macro PR-AUC after every epoch.
// `evaluator` replaces the default evaluation on `eval` when provided.
inline CentralResult train_central(const CentralConfig& cfg, const ModelSpec& spec, const LabeledBatch& train,
                                   const EvalSet& eval, const Evaluator& evaluator = {}) {
  cfg.validate();
  spec.validate();
  if (train.size() == 0) throw ValidationError("train_central: training set is empty");

  CentralResult out;
  ParameterVector params = init_params(spec, derive_seed(cfg.seed, Stream::init));
  EpochTrainer trainer(spec, train, cfg.B, cfg.optimizer, derive_seed(cfg.seed, Stream::central), params.size());
  EarlyStopping stop(cfg.patience);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochLog log{e, 0.0, 0.0, 0.0};
    try {
      log.train_loss = trainer.run_epoch(params);
    } catch (const RuntimeFailure& err) {
      throw RuntimeFailure("train_central: epoch " + std::to_string(e) + ": " + err.what());
    }
    const Evaluation ev = evaluator ? evaluator(params, e) : evaluate(spec, params, eval);
    log.pr_auc = ev.pr_auc;
    log.eval_loss = ev.loss;
    out.epochs.push_back(log);
    if (stop.update(ev.pr_auc)) {
      out.best_epoch = e;
      out.best_params = params;
    }
    if (stop.should_stop()) {
      out.stopped_early = e < cfg.epochs;
      break;
    }
  }
  out.final_params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

// One federated run as it appears in the report tables.
struct RunRecord {
  std::string run_id;
  FederationConfig config;
  std::vector<RoundRecord> rounds;
  std::string error;  // non-empty when the run failed

  bool ok() const noexcept { return error.empty(); }
};

namespace detail {

inline std::string fmt_real(double v, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline double metric(const RoundRecord& r, const std::string& name) {
  auto it = r.eval_metrics.find(name);
  return it == r.eval_metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

}  // namespace detail

inline std::string make_run_id(const FederationConfig& c) {
  return "C" + detail::fmt_real(c.C, "%g") + "_E" + std::to_string(c.E) + "_B" + std::to_string(c.B) + "_s" +
         std::to_string(c.seed);
}

inline constexpr const char* kSeriesHeader = "run_id,C,E,B,seed,round,pr_auc,mu_t,selected_count,wall_time";
inline constexpr const char* kSummaryHeader = "run_id,C,E,B,seed,rounds,max_pr_auc,mean_pr_auc,best_round,status";

inline void write_series(std::ostream& out, const std::vector<RunRecord>& runs) {
  out << kSeriesHeader << '\n';
  for (const auto& run : runs) {
    const auto& c = run.config;
    const std::string prefix = detail::csv_escape(run.run_id) + "," + detail::fmt_real(c.C, "%g") + "," +
                               std::to_string(c.E) + "," + std::to_string(c.B) + "," + std::to_string(c.seed) + ",";
    for (const auto& r : run.rounds)
      out << prefix << r.t << ',' << detail::fmt_real(detail::metric(r, "pr_auc")) << ',' << r.mu_t << ','
          << r.selected.size() << ',' << detail::fmt_real(r.wall_time, "%.6f") << '\n';
  }
}

struct RunSummary {
  std::size_t rounds = 0;
  double max_pr_auc = 0.0;
  double mean_pr_auc = 0.0;
  std::size_t best_round = 0;
};

inline RunSummary summarize(const std::vector<RoundRecord>& rounds) {
  RunSummary s;
  s.rounds = rounds.size();
  s.max_pr_auc = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (const auto& r : rounds) {
    const double v = detail::metric(r, "pr_auc");
    sum += v;
    if (v > s.max_pr_auc) {
      s.max_pr_auc = v;
      s.best_round = r.t;
    }
  }
  s.mean_pr_auc = rounds.empty() ? 0.0 : sum / static_cast<double>(rounds.size());
  return s;
}

inline void write_summary(std::ostream& out, const std::vector<RunRecord>& runs) {
  out << kSummaryHeader << '\n';
  for (const auto& run : runs) {
    const auto& c = run.config;
    out << detail::csv_escape(run.run_id) << ',' << detail::fmt_real(c.C, "%g") << ',' << c.E << ',' << c.B << ','
        << c.seed << ',';
    if (!run.ok() || run.rounds.empty()) {
      out << run.rounds.size() << ",,,," << (run.ok() ? "empty" : "failed") << '\n';
      continue;
    }
    const auto s = summarize(run.rounds);
    out << s.rounds << ',' << detail::fmt_real(s.max_pr_auc) << ',' << detail::fmt_real(s.mean_pr_auc) << ','
        << s.best_round << ",ok\n";
  }
}

// Writes the round-series and summary tables.
inline void emit_report(const std::vector<RunRecord>& runs, const std::string& series_path,
                        const std::string& summary_path) {
  detail::require(!runs.empty(), "emit_report: no runs");
  auto open = [](const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot write '" + path + "'");
    return f;
  };
  {
    auto f = open(series_path);
    write_series(f, runs);
    if (!f) throw RuntimeFailure("write failed for '" + series_path + "'");
  }
  auto f = open(summary_path);
  write_summary(f, runs);
  if (!f) throw RuntimeFailure("write failed for '" + summary_path + "'");
}

// Rebuilds run records (pr_auc, mu_t, selection size, wall time) from a
// series table so summaries can be regenerated from saved series.
inline std::vector<RunRecord> read_series(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kSeriesHeader)
    throw ValidationError("series table: unexpected header");
  std::vector<RunRecord> runs;
  std::vector<std::string> f;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (detail::trim(line).empty()) continue;
    detail::split_csv_line(line, f);
    if (f.size() != 10) throw ValidationError("series table: line " + std::to_string(lineno) + ": expected 10 fields");
    try {
      if (runs.empty() || runs.back().run_id != f[0]) {
        RunRecord run;
        run.run_id = f[0];
        run.config.C = std::stod(f[1]);
        run.config.E = std::stoul(f[2]);
        run.config.B = std::stoul(f[3]);
        run.config.seed = std::stoull(f[4]);
        runs.push_back(std::move(run));
      }
      RoundRecord r;
      r.t = std::stoul(f[5]);
      r.eval_metrics["pr_auc"] = std::stod(f[6]);
      r.mu_t = std::stoul(f[7]);
      r.selected.resize(std::stoul(f[8]));
      r.wall_time = std::stod(f[9]);
      runs.back().rounds.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ValidationError("series table: line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSpec {
  std::vector<double> C{0.1, 0.3, 0.5, 0.7};
  std::vector<std::size_t> E{1, 3, 5};
  std::size_t B = 64;
  std::size_t rounds = 50;
  std::vector<std::uint64_t> seeds{1};

  void validate() const {
    detail::require(!C.empty() && !E.empty() && !seeds.empty(), "grid: C, E and seeds must be nonempty");
    for (double c : C) detail::require(c > 0.0 && c <= 1.0, "grid: every C must be in (0, 1]");
    for (auto e : E) detail::require(e >= 1, "grid: every E must be >= 1");
    detail::require(B >= 1, "grid: B must be >= 1");
    detail::require(rounds >= 1, "grid: rounds must be >= 1");
  }

  // Cell configs ordered by seed, then C, then E.
  std::vector<FederationConfig> cells(const FederationConfig& base) const {
    validate();
    std::vector<FederationConfig> out;
    for (auto seed : seeds)
      for (double c : C)
        for (auto e : E) {
          FederationConfig cfg = base;
          cfg.C = c;
          cfg.E = e;
          cfg.B = B;
          cfg.rounds = rounds;
          cfg.seed = seed;
          out.push_back(cfg);
        }
    return out;
  }
};

// Runs one federation per cell. Cells are independent; up to `workers` run
// at once, each single-threaded inside. A failing cell is recorded in its
// RunRecord and does not stop the others.
inline std::vector<RunRecord> run_cells(const std::vector<FederationConfig>& cells, const FederatedTask& task,
                                        const ModelSpec& spec, std::size_t workers) {
  std::vector<RunRecord> runs(cells.size());
  detail::parallel_for(cells.size(), resolve_threads(workers), [&](std::size_t i) {
    RunRecord& run = runs[i];
    run.config = cells[i];
    run.run_id = make_run_id(cells[i]);
    FederationConfig cfg = cells[i];
    cfg.threads = 1;
    try {
      run.rounds = run_federation(cfg, task.clients, task.eval, spec).rounds;
    } catch (const std::exception& e) {
      run.rounds.clear();
      run.error = e.what();
    }
  });
  return runs;
}

inline std::vector<RunRecord> grid_search(const GridSpec& grid, const FederationConfig& base,
                                          const FederatedTask& task, const ModelSpec& spec,
                                          std::size_t workers = 0) {
  return run_cells(grid.cells(base), task, spec, workers);
}

}  // namespace fedsim
