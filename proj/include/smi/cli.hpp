#pragma once

// Command-line front end: run, tune, viz and report.

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smi/config.hpp"
#include "smi/harness.hpp"

namespace smi::cli {

inline constexpr const char* kOutDirEnv = "SMI_OUT_DIR";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  bool resume = false;
  std::optional<std::size_t> stop_after;
  std::size_t resolution = 100;
  std::string state;
  bool quiet = false;
};

/// Output directory precedence: --out, then SMI_OUT_DIR, then the config.
inline harness::ExperimentConfig load_with_overrides(const Options& o) {
  auto cfg = harness::load_config(o.config);
  if (!o.out.empty()) {
    cfg.output_dir = o.out;
  } else if (const char* env = std::getenv(kOutDirEnv); env && *env) {
    cfg.output_dir = env;
  }
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.validate();
  return cfg;
}

inline std::filesystem::path report_root(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  if (!o.config.empty()) return harness::load_config(o.config).output_dir;
  throw harness::ConfigError("report: give --out, --config or set " + std::string(kOutDirEnv));
}

inline void print_cells(std::ostream& out, const harness::TuneResult& tr) {
  for (std::size_t i = 0; i < tr.cells.size(); ++i) {
    const auto& c = tr.cells[i];
    out << (i == tr.best ? "* " : "  ") << harness::cell_name(i) << "  "
        << (c.hparams.values.empty() ? "-" : c.hparams.to_string()) << "  ";
    if (c.error.empty()) {
      out << "val " << tasks::format_double(c.val_faa) << "  test " << tasks::format_double(c.test_faa);
    } else {
      out << "failed: " << c.error;
    }
    out << '\n';
  }
}

/// Parses argv and runs the selected subcommand; returns the exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequential MAP continual learning: AQC, NC, EWC and SI on task sequences", "smi"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "output directory (overrides SMI_OUT_DIR and the config)");
  };
  auto add_seed_jobs = [&o](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "single seed, replacing the config's seeds");
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", o.quiet, "no progress lines");
  };

  auto* run = app.add_subcommand("run", "train one configuration over the task sequence");
  add_common(run, true);
  add_seed_jobs(run);
  run->add_flag("--resume", o.resume, "continue from the saved state of an earlier run");
  run->add_option("--stop-after", o.stop_after, "stop after this many tasks")->check(CLI::PositiveNumber);

  auto* tune = app.add_subcommand("tune", "grid search on validation final average accuracy");
  add_common(tune, true);
  add_seed_jobs(tune);

  auto* viz = app.add_subcommand("viz", "export a probability grid for a 2-feature sequence");
  add_common(viz, true);
  add_seed_jobs(viz);
  viz->add_option("--resolution", o.resolution, "lattice points per axis")->check(CLI::Range(2, 5000));
  viz->add_option("--state", o.state, "use a saved state.json instead of training");

  auto* report = app.add_subcommand("report", "summarize the results index as a table");
  add_common(report, false);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string sub = argv[1];
    if (sub != "run" && sub != "tune" && sub != "viz" && sub != "report") {
      err << "smi: unknown subcommand '" << sub << "'\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << app.help();
    return 2;
  }

  try {
    harness::RunOptions ro;
    ro.log = o.quiet ? nullptr : &err;
    if (run->parsed()) {
      const auto cfg = load_with_overrides(o);
      ro.resume = o.resume;
      ro.stop_after = o.stop_after;
      const auto results = harness::run_experiment(cfg, ro);
      for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        out << cfg.name << "  " << cfg.method << "  seed " << cfg.seeds[i] << "  tasks "
            << r.tasks_trained;
        if (!std::isnan(r.test_faa)) {
          out << "  val FAA " << tasks::format_double(r.val_faa) << "  test FAA "
              << tasks::format_double(r.test_faa);
        }
        out << '\n';
      }
    } else if (tune->parsed()) {
      const auto cfg = load_with_overrides(o);
      for (const auto& tr : harness::grid_search(cfg, ro)) {
        out << cfg.name << "  " << cfg.method << "  seed " << tr.seed << '\n';
        print_cells(out, tr);
      }
    } else if (viz->parsed()) {
      const auto cfg = load_with_overrides(o);
      std::optional<std::filesystem::path> state;
      if (!o.state.empty()) state = o.state;
      const auto v = harness::visualize(cfg, o.resolution, state, ro);
      out << "wrote " << (v.dir / "grid.csv").string() << " (" << v.grid.table.rows() << " rows) and "
          << (v.dir / "points.csv").string() << '\n';
    } else if (report->parsed()) {
      const auto root = report_root(o);
      const auto rows = harness::build_report(root);
      harness::print_report(out, rows);
      harness::write_report_csv(root / "report.csv", rows);
    }
  } catch (const std::exception& e) {
    err << "smi: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace smi::cli
