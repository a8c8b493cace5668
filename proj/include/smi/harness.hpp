#pragma once

// Experiment orchestration: seeded runs over a task sequence, grid search,
// probability-grid export and the Table-I style report.
//
// Output layout under <output_dir>:
//   index.csv
//   <name>/run/<method>/seed-<s>/{records.csv,state.json,error.txt}
//   <name>/tune/<method>/seed-<s>/{results.csv,best.csv,best_state.json,cell-NN/...}
//   <name>/viz/<method>/seed-<s>/{grid.csv,points.csv}
//   report.csv

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "smi/config.hpp"
#include "smi/learners.hpp"
#include "smi/nn.hpp"
#include "smi/results.hpp"
#include "smi/tasks.hpp"

namespace smi::harness {

class RunError : public std::runtime_error {
 public:
  RunError(const std::string& what, std::vector<MetricsRecord> partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const std::vector<MetricsRecord>& partial() const { return partial_; }

 private:
  std::vector<MetricsRecord> partial_;
};

struct RunOptions {
  bool resume = false;                   // continue from state.json in the run directory
  std::optional<std::size_t> stop_after;  // stop once this many tasks are trained
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  ParamVector theta;
  std::size_t tasks_trained = 0;
  double val_faa = std::nan("");
  double test_faa = std::nan("");
  json state;
};

inline fs::path experiment_dir(const ExperimentConfig& cfg, const std::string& kind,
                               std::uint64_t seed) {
  return cfg.output_dir / cfg.name / kind / cfg.method / ("seed-" + std::to_string(seed));
}

inline std::string relative_to(const fs::path& p, const fs::path& root) {
  return fs::relative(p, root).generic_string();
}

/// Checks everything that can be checked without training.
inline tasks::TaskSequence prepare(const ExperimentConfig& cfg, const methods::HyperParams& hp) {
  cfg.validate();
  auto seq = build_sequence(cfg.sequence);
  const auto spec = seq.model_spec(cfg.hidden);
  spec.validate();
  if (cfg.method == "aqc" && spec.parameter_count() > cfg.max_params) {
    throw ConfigError("aqc: model has " + std::to_string(spec.parameter_count()) +
                      " parameters, above max_params = " + std::to_string(cfg.max_params));
  }
  for (const auto& name : methods::hyperparameter_names(cfg.method)) {
    if (!hp.has(name)) {
      throw ConfigError("method '" + cfg.method + "' needs hyperparameter '" + name + "'");
    }
  }
  return seq;
}

/// Accuracy of theta on every val and test dataset of the sequence.
inline std::vector<MetricsRecord> evaluate(const tasks::TaskSequence& seq, const nn::ModelSpec& spec,
                                           const ParamVector& theta,
                                           const std::string& method, const std::string& hparams,
                                           std::uint64_t seed, std::size_t task_trained) {
  std::vector<MetricsRecord> out;
  for (const char* split : {"val", "test"}) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& ds = std::string(split) == "val" ? seq.tasks[i].val : seq.tasks[i].test;
      const auto pred = nn::predict_class(spec, theta, ds.x);
      out.push_back({method, hparams, seed, task_trained, i + 1, split, accuracy(pred, ds.y)});
    }
  }
  return out;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResultsError("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump() + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResultsError("cannot open '" + path.string() + "'");
  return json::parse(in);
}

}  // namespace detail

/// Runs the method's task loop for one seed and hyperparameter setting,
/// writing records.csv and state.json into `dir` after every task.
inline RunResult run_in_dir(const ExperimentConfig& cfg, const tasks::TaskSequence& seq,
                            const methods::HyperParams& hp, std::uint64_t seed, const fs::path& dir,
                            const RunOptions& opt = {}) {
  fs::create_directories(dir);
  const auto spec = seq.model_spec(cfg.hidden);
  optim::TrainConfig train = cfg.train;
  train.seed = seed;
  const methods::StepContext ctx{spec, train};
  auto learner = methods::make_learner(cfg.method, hp, ctx, cfg.nc);
  const std::string hps = hp.to_string();

  RunResult r;
  fs::remove(dir / "error.txt");
  if (opt.resume && fs::exists(dir / "state.json")) {
    learner->restore(detail::read_json(dir / "state.json"));
    if (fs::exists(dir / "records.csv")) {
      for (auto& rec : read_records(dir / "records.csv")) {
        if (rec.task_trained <= learner->tasks_completed()) r.records.push_back(std::move(rec));
      }
    }
  }
  if (opt.log) {
    for (std::size_t t : seq.degenerate_tasks()) {
      *opt.log << "warning: task " << t + 1 << " has a single training label\n";
    }
  }
  const std::size_t last = std::min(seq.size(), opt.stop_after.value_or(seq.size()));
  for (std::size_t t = learner->tasks_completed(); t < last; ++t) {
    try {
      learner->learn(seq, t);
    } catch (const std::exception& e) {
      write_records(dir / "records.csv", r.records);
      const std::string msg = cfg.method + " seed " + std::to_string(seed) +
                              (hps.empty() ? "" : " " + hps) + ": task " + std::to_string(t + 1) +
                              " failed: " + e.what();
      detail::write_text(dir / "error.txt", msg + "\n");
      throw RunError(msg, r.records);
    }
    auto recs = evaluate(seq, spec, learner->theta(), cfg.method, hps, seed, t + 1);
    r.records.insert(r.records.end(), recs.begin(), recs.end());
    write_records(dir / "records.csv", r.records);
    detail::write_json(dir / "state.json", learner->save());
    if (opt.log) {
      *opt.log << cfg.name << " " << cfg.method << (hps.empty() ? "" : " " + hps) << " seed "
               << seed << ": task " << t + 1 << "/" << seq.size() << " done\n";
    }
  }
  r.theta = learner->theta();
  r.tasks_trained = learner->tasks_completed();
  r.state = learner->save();
  r.val_faa = final_average_accuracy(r.records, "val", seq.size());
  r.test_faa = final_average_accuracy(r.records, "test", seq.size());
  return r;
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline std::string first_error(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const std::exception& ex) {
      return ex.what();
    }
  }
  return {};
}

}  // namespace detail

/// One run per configured seed using the method's fixed hyperparameters.
inline std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const auto seq = prepare(cfg, cfg.hparams);
  std::vector<RunResult> results(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  detail::parallel_for(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    try {
      results[i] = run_in_dir(cfg, seq, cfg.hparams, cfg.seeds[i], experiment_dir(cfg, "run", cfg.seeds[i]), opt);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (errors[i] || results[i].tasks_trained != seq.size()) continue;
    append_index(cfg.output_dir,
                 {"run", cfg.name, cfg.method, cfg.hparams.to_string(), cfg.seeds[i],
                  relative_to(experiment_dir(cfg, "run", cfg.seeds[i]) / "records.csv", cfg.output_dir)});
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Grid search

struct CellResult {
  methods::HyperParams hparams;
  std::vector<MetricsRecord> records;
  double val_faa = std::nan("");
  double test_faa = std::nan("");
  std::string error;
  json state;
};

struct TuneResult {
  std::uint64_t seed = 0;
  std::vector<CellResult> cells;
  std::size_t best = 0;
  fs::path dir;

  const CellResult& winner() const { return cells.at(best); }
};

/// Index of the largest validation FAA; the earliest cell wins ties and
/// failed cells (NaN) never win.
inline std::optional<std::size_t> select_best(std::span<const double> val_faa) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < val_faa.size(); ++i) {
    if (std::isnan(val_faa[i])) continue;
    if (!best || val_faa[i] > val_faa[*best]) best = i;
  }
  return best;
}

inline std::string cell_name(std::size_t i) {
  std::ostringstream s;
  s << "cell-" << std::setw(2) << std::setfill('0') << i;
  return s.str();
}

/// Grid search for every configured seed. Cells and seeds run on up to
/// cfg.jobs threads; every cell writes into its own directory.
inline std::vector<TuneResult> grid_search(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const auto cells = grid_cells(cfg.grid);
  if (cells.empty()) throw ConfigError("tune: empty grid");
  const auto seq = prepare(cfg, cells.front());

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<TuneResult> out(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    out[s].seed = cfg.seeds[s];
    out[s].dir = experiment_dir(cfg, "tune", cfg.seeds[s]);
    out[s].cells.resize(cells.size());
  }
  RunOptions cell_opt = opt;
  cell_opt.stop_after.reset();
  std::mutex log_mutex;
  std::ostringstream discard;
  detail::parallel_for(n_seeds * cells.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t s = k / cells.size();
    const std::size_t c = k % cells.size();
    CellResult& cell = out[s].cells[c];
    cell.hparams = cells[c];
    RunOptions quiet = cell_opt;
    quiet.log = nullptr;
    try {
      auto r = run_in_dir(cfg, seq, cells[c], cfg.seeds[s], out[s].dir / cell_name(c), quiet);
      cell.records = std::move(r.records);
      cell.val_faa = r.val_faa;
      cell.test_faa = r.test_faa;
      cell.state = std::move(r.state);
    } catch (const RunError& e) {
      cell.records = e.partial();
      cell.error = e.what();
    }
    if (opt.log) {
      const std::lock_guard lock(log_mutex);
      *opt.log << cfg.name << " " << cfg.method << " seed " << cfg.seeds[s] << " "
               << cell_name(c) << " " << cells[c].to_string() << ": "
               << (cell.error.empty() ? "val FAA " + tasks::format_double(cell.val_faa) : cell.error)
               << "\n";
    }
  });

  for (auto& tr : out) {
    std::vector<MetricsRecord> all;
    std::vector<double> val;
    for (const auto& cell : tr.cells) {
      all.insert(all.end(), cell.records.begin(), cell.records.end());
      val.push_back(cell.val_faa);
    }
    write_records(tr.dir / "results.csv", all);
    const auto best = select_best(val);
    if (!best) {
      throw RunError("tune: every grid cell failed for seed " + std::to_string(tr.seed) + "; first error: " +
                         tr.cells.front().error,
                     all);
    }
    tr.best = *best;
    write_records(tr.dir / "best.csv", tr.winner().records);
    detail::write_json(tr.dir / "best_state.json", tr.winner().state);
    append_index(cfg.output_dir, {"tune", cfg.name, cfg.method, tr.winner().hparams.to_string(), tr.seed,
                                  relative_to(tr.dir / "best.csv", cfg.output_dir)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probability grid

struct Bounds {
  double x_min, x_max, y_min, y_max;
};

/// Data range of the two features padded by 10% on every side.
inline Bounds padded_bounds(const Eigen::MatrixXd& x) {
  if (x.cols() != 2) throw std::invalid_argument("padded_bounds: expected 2 features");
  if (x.rows() == 0) throw std::invalid_argument("padded_bounds: no points");
  Bounds b{x.col(0).minCoeff(), x.col(0).maxCoeff(), x.col(1).minCoeff(), x.col(1).maxCoeff()};
  const double px = 0.1 * std::max(b.x_max - b.x_min, 1e-12);
  const double py = 0.1 * std::max(b.y_max - b.y_min, 1e-12);
  return {b.x_min - px, b.x_max + px, b.y_min - py, b.y_max + py};
}

struct ProbGrid {
  Eigen::MatrixXd table;  // rows x, y, p1..pK

  std::size_t classes() const { return static_cast<std::size_t>(table.cols() - 2); }
};

/// Class probabilities on a resolution x resolution lattice; x varies fastest.
inline ProbGrid export_prob_grid(const nn::ModelSpec& spec, const ParamVector& theta,
                                 const Bounds& b, std::size_t resolution) {
  if (spec.input_dim != 2) {
    throw std::invalid_argument("viz needs a model with 2 input features; this one has " +
                                std::to_string(spec.input_dim));
  }
  if (resolution < 2) throw std::invalid_argument("viz: resolution must be at least 2");
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw std::invalid_argument("viz: empty bounds");
  const auto r = static_cast<Eigen::Index>(resolution);
  Eigen::MatrixXd pts(r * r, 2);
  for (Eigen::Index iy = 0; iy < r; ++iy) {
    for (Eigen::Index ix = 0; ix < r; ++ix) {
      pts(iy * r + ix, 0) = b.x_min + (b.x_max - b.x_min) * static_cast<double>(ix) / static_cast<double>(r - 1);
      pts(iy * r + ix, 1) = b.y_min + (b.y_max - b.y_min) * static_cast<double>(iy) / static_cast<double>(r - 1);
    }
  }
  Eigen::MatrixXd p = nn::predict_proba(spec, theta, pts);
  if (spec.head == nn::Head::bernoulli) {
    Eigen::MatrixXd two(p.rows(), 2);
    two.col(0) = 1.0 - p.col(0).array();
    two.col(1) = p.col(0);
    p = std::move(two);
  }
  ProbGrid g;
  g.table.resize(pts.rows(), 2 + p.cols());
  g.table << pts, p;
  return g;
}

inline void write_prob_grid(const fs::path& path, const ProbGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResultsError("cannot write '" + path.string() + "'");
  out << "x,y";
  for (std::size_t k = 1; k <= g.classes(); ++k) out << ",p" << k;
  out << '\n';
  for (Eigen::Index i = 0; i < g.table.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.table.cols(); ++j) {
      out << (j ? "," : "") << tasks::format_double(g.table(i, j));
    }
    out << '\n';
  }
}

struct VizResult {
  ProbGrid grid;
  Bounds bounds;
  fs::path dir;
  RunResult run;
};

/// Trains the configured method (or restores a saved state) and writes the
/// probability grid plus the training points of every task.
inline VizResult visualize(const ExperimentConfig& cfg, std::size_t resolution,
                           const std::optional<fs::path>& state_file = {}, const RunOptions& opt = {}) {
  cfg.validate();
  const auto seq = build_sequence(cfg.sequence);
  if (seq.input_dim() != 2) {
    throw ConfigError("viz needs a 2-feature sequence (for example iris2d); '" + cfg.name + "' has " +
                      std::to_string(seq.input_dim()) + " features");
  }
  if (resolution < 2) throw ConfigError("viz: resolution must be at least 2");
  const std::uint64_t seed = cfg.seeds.front();
  VizResult v;
  v.dir = experiment_dir(cfg, "viz", seed);
  fs::create_directories(v.dir);
  const auto spec = seq.model_spec(cfg.hidden);
  if (state_file) {
    const json j = detail::read_json(*state_file);
    if (!(io::spec_from_json(j.at("model")) == spec)) {
      throw ConfigError("viz: state file model does not match the configured sequence");
    }
    v.run.theta = io::vector_from_json(j.at("theta"));
    v.run.state = j;
  } else {
    prepare(cfg, cfg.hparams);
    v.run = run_in_dir(cfg, seq, cfg.hparams, seed, v.dir / "run", opt);
  }
  std::vector<tasks::Dataset> parts;
  for (const auto& t : seq.tasks) parts.push_back(t.train);
  const auto all = tasks::concat(parts);
  v.bounds = padded_bounds(all.x);
  v.grid = export_prob_grid(spec, v.run.theta, v.bounds, resolution);
  write_prob_grid(v.dir / "grid.csv", v.grid);
  std::ofstream pts(v.dir / "points.csv", std::ios::binary);
  pts << "x,y,label,task\n";
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto& ds = seq.tasks[t].train;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      pts << tasks::format_double(ds.x(row, 0)) << ',' << tasks::format_double(ds.x(row, 1)) << ','
          << ds.y[i] << ',' << t + 1 << '\n';
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string name;
  std::string method;
  std::string source;  // tune or run
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> hparams;  // per seed
  std::vector<double> test_faa;
  std::vector<double> val_faa;

  double mean_test() const { return mean(test_faa); }
  double std_test() const { return sd(test_faa); }
  double mean_val() const { return mean(val_faa); }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
  }
  static double sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double a : v) s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  }
};

inline int method_rank(const std::string& m) {
  static const std::vector<std::string> order{"finetune", "joint", "ewc", "si", "aqc", "nc"};
  const auto it = std::find(order.begin(), order.end(), m);
  return static_cast<int>(it - order.begin());
}

/// Aggregates the index: one row per (sequence name, method), preferring
/// tuned entries over plain runs; the latest entry per seed wins.
inline std::vector<ReportRow> build_report(const fs::path& root) {
  const auto entries = read_index(root);
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, IndexEntry>> tuned, plain;
  for (const auto& e : entries) {
    auto& target = e.kind == "tune" ? tuned : plain;
    target[{e.name, e.method}][e.seed] = e;
  }
  std::vector<ReportRow> rows;
  auto add = [&](const auto& key, const std::map<std::uint64_t, IndexEntry>& by_seed, const char* source) {
    ReportRow row{key.first, key.second, source, {}, {}, {}, {}};
    for (const auto& [seed, e] : by_seed) {
      const auto recs = read_records(root / e.path);
      const std::size_t t = tasks_trained(recs);
      row.seeds.push_back(seed);
      row.hparams.push_back(e.hparams);
      row.test_faa.push_back(final_average_accuracy(recs, "test", t));
      row.val_faa.push_back(final_average_accuracy(recs, "val", t));
    }
    rows.push_back(std::move(row));
  };
  for (const auto& [key, by_seed] : tuned) add(key, by_seed, "tune");
  for (const auto& [key, by_seed] : plain) {
    if (!tuned.contains(key)) add(key, by_seed, "run");
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.name != b.name) return a.name < b.name;
    return method_rank(a.method) < method_rank(b.method);
  });
  return rows;
}

inline std::string join_unique(const std::vector<std::string>& v) {
  std::vector<std::string> seen;
  for (const auto& s : v) {
    if (std::find(seen.begin(), seen.end(), s) == seen.end()) seen.push_back(s);
  }
  std::string out;
  for (const auto& s : seen) out += (out.empty() ? "" : "|") + s;
  return out;
}

inline void write_report_csv(const fs::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResultsError("cannot write '" + path.string() + "'");
  out << "sequence,method,source,hparams,seeds,val_faa_mean,test_faa_mean,test_faa_std\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.method << ',' << r.source << ',' << join_unique(r.hparams) << ','
        << r.seeds.size() << ',' << tasks::format_double(r.mean_val()) << ','
        << tasks::format_double(r.mean_test()) << ',' << tasks::format_double(r.std_test()) << '\n';
  }
}

/// Human-readable table: test FAA in percent per sequence and method.
inline void print_report(std::ostream& os, const std::vector<ReportRow>& rows) {
  std::size_t wn = 8, wm = 6, wh = 7;
  for (const auto& r : rows) {
    wn = std::max(wn, r.name.size());
    wm = std::max(wm, r.method.size());
    wh = std::max(wh, join_unique(r.hparams).size());
  }
  os << std::left << std::setw(static_cast<int>(wn)) << "sequence" << "  " << std::setw(static_cast<int>(wm))
     << "method" << "  " << std::setw(static_cast<int>(wh)) << "hparams" << "  seeds  test FAA (%)\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(wn)) << r.name << "  " << std::setw(static_cast<int>(wm))
       << r.method << "  " << std::setw(static_cast<int>(wh)) << join_unique(r.hparams) << "  "
       << std::setw(5) << r.seeds.size() << "  " << std::fixed << std::setprecision(4)
       << 100.0 * r.mean_test();
    if (r.seeds.size() > 1) os << " +/- " << 100.0 * r.std_test();
    os << std::defaultfloat << '\n';
  }
}

}  // namespace smi::harness
