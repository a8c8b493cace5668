#pragma once

// Experiment configuration: a JSON document with nested sections. The
// schema is described in docs/config.md; unknown keys are rejected.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "smi/learners.hpp"
#include "smi/optim.hpp"
#include "smi/tasks.hpp"

namespace smi::harness {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered grid: axes are expanded with the first axis outermost.
using Grid = std::vector<std::pair<std::string, std::vector<double>>>;

struct SequenceConfig {
  std::string builtin;       // iris, wine or iris2d
  std::string feature_file;  // single file, split 64/16/20
  std::string train_file, val_file, test_file;  // pre-split files
  tasks::Mode mode = tasks::Mode::CI;
  int classes_per_task = 1;
  std::vector<int> groups;  // DI: class -> {0, 1}
  bool standardize = false;
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{0};
  fs::path output_dir = "results";
  SequenceConfig sequence;
  std::vector<std::size_t> hidden;
  std::string method = "finetune";
  methods::HyperParams hparams;
  Grid grid;
  std::size_t jobs = 1;
  optim::TrainConfig train;
  methods::NcSettings nc;
  std::size_t max_params = 5000;

  void validate() const;
};

/// Default tuning grids; empty for methods without hyperparameters.
inline Grid default_grid(const std::string& method) {
  const std::vector<double> lambdas{1, 10, 100, 1000, 10000};
  if (method == "aqc" || method == "ewc") return {{"lambda", lambdas}};
  if (method == "si") return {{"lambda", lambdas}, {"xi", {0.1, 1.0, 10}}};
  if (method == "nc") return {{"lambda", lambdas}, {"r", {1, 10, 100}}};
  return {};
}

/// Cartesian product of the grid axes in declared order.
inline std::vector<methods::HyperParams> grid_cells(const Grid& grid) {
  std::vector<methods::HyperParams> cells{methods::HyperParams{}};
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw ConfigError("grid axis '" + name + "' has no values");
    std::vector<methods::HyperParams> next;
    for (const auto& cell : cells) {
      for (double v : values) {
        auto c = cell;
        c.values.emplace_back(name, v);
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::string resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!methods::is_known_method(method)) {
    throw ConfigError("unknown method '" + method +
                      "' (expected finetune, joint, aqc, nc, ewc or si)");
  }
  const auto& s = sequence;
  const int sources = int(!s.builtin.empty()) + int(!s.feature_file.empty()) +
                      int(!s.train_file.empty() || !s.val_file.empty() || !s.test_file.empty());
  if (sources != 1) {
    throw ConfigError("sequence: give exactly one of builtin, feature_file or feature_files");
  }
  if (!s.train_file.empty() && (s.val_file.empty() || s.test_file.empty())) {
    throw ConfigError("sequence.feature_files: train, val and test are all required");
  }
  if (s.classes_per_task <= 0) throw ConfigError("sequence.classes_per_task must be positive");
  if (s.mode == tasks::Mode::DI && s.groups.empty()) {
    throw ConfigError("sequence.groups is required for domain-incremental sequences");
  }
  for (int g : s.groups) {
    if (g != 0 && g != 1) throw ConfigError("sequence.groups entries must be 0 or 1");
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (jobs == 0) throw ConfigError("tune.jobs must be at least 1");
  if (nc.sample_size == 0) throw ConfigError("nc.sample_size must be positive");
  if (!(nc.beta >= 0.0) || !(nc.lr > 0.0) || !(nc.huber_delta > 0.0)) {
    throw ConfigError("nc: beta must be non-negative, lr and huber_delta positive");
  }
  const auto names = methods::hyperparameter_names(method);
  std::set<std::string> grid_names;
  for (const auto& [axis, values] : grid) {
    if (std::find(names.begin(), names.end(), axis) == names.end()) {
      throw ConfigError("tune.grid: method '" + method + "' has no hyperparameter '" + axis + "'");
    }
    if (!grid_names.insert(axis).second) throw ConfigError("tune.grid: duplicate axis '" + axis + "'");
    if (values.empty()) throw ConfigError("tune.grid." + axis + ": no values");
    for (double v : values) {
      if (!(v > 0.0)) throw ConfigError("tune.grid." + axis + ": values must be positive");
    }
  }
  for (const auto& [k, v] : hparams.values) {
    if (std::find(names.begin(), names.end(), k) == names.end()) {
      throw ConfigError("method.hparams: method '" + method + "' has no hyperparameter '" + k + "'");
    }
    if (!(v > 0.0)) throw ConfigError("method.hparams." + k + " must be positive");
  }
}

/// Parses a config document; relative paths resolve against base_dir.
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  using detail::get;
  detail::check_keys(j,
                     {"name", "seed", "seeds", "output_dir", "sequence", "model", "method", "train",
                      "nc", "tune", "max_params"},
                     "config");
  ExperimentConfig c;
  if (j.contains("name")) c.name = get<std::string>(j, "name", "config");
  if (j.contains("seed") && j.contains("seeds")) throw ConfigError("config: give seed or seeds, not both");
  if (j.contains("seed")) c.seeds = {get<std::uint64_t>(j, "seed", "config")};
  if (j.contains("seeds")) c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "config");
  if (j.contains("output_dir")) {
    c.output_dir = detail::resolve(get<std::string>(j, "output_dir", "config"), base_dir);
  }
  if (j.contains("max_params")) c.max_params = get<std::size_t>(j, "max_params", "config");

  if (!j.contains("sequence")) throw ConfigError("config: missing section 'sequence'");
  const json& sq = j.at("sequence");
  detail::check_keys(sq,
                     {"builtin", "feature_file", "feature_files", "mode", "classes_per_task",
                      "groups", "standardize", "split_seed"},
                     "sequence");
  auto& s = c.sequence;
  if (sq.contains("builtin")) s.builtin = get<std::string>(sq, "builtin", "sequence");
  if (sq.contains("feature_file")) {
    s.feature_file = detail::resolve(get<std::string>(sq, "feature_file", "sequence"), base_dir);
  }
  if (sq.contains("feature_files")) {
    const json& ff = sq.at("feature_files");
    detail::check_keys(ff, {"train", "val", "test"}, "sequence.feature_files");
    if (ff.contains("train")) s.train_file = detail::resolve(get<std::string>(ff, "train", "sequence.feature_files"), base_dir);
    if (ff.contains("val")) s.val_file = detail::resolve(get<std::string>(ff, "val", "sequence.feature_files"), base_dir);
    if (ff.contains("test")) s.test_file = detail::resolve(get<std::string>(ff, "test", "sequence.feature_files"), base_dir);
  }
  if (sq.contains("mode")) {
    const auto m = get<std::string>(sq, "mode", "sequence");
    if (m == "ci" || m == "CI") {
      s.mode = tasks::Mode::CI;
    } else if (m == "di" || m == "DI") {
      s.mode = tasks::Mode::DI;
    } else {
      throw ConfigError("sequence.mode: expected 'ci' or 'di', got '" + m + "'");
    }
  }
  if (sq.contains("classes_per_task")) s.classes_per_task = get<int>(sq, "classes_per_task", "sequence");
  if (sq.contains("groups")) s.groups = get<std::vector<int>>(sq, "groups", "sequence");
  if (sq.contains("standardize")) s.standardize = get<bool>(sq, "standardize", "sequence");
  if (sq.contains("split_seed")) s.split_seed = get<std::uint64_t>(sq, "split_seed", "sequence");

  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::check_keys(m, {"hidden", "activation"}, "model");
    if (m.contains("hidden")) c.hidden = get<std::vector<std::size_t>>(m, "hidden", "model");
    if (m.contains("activation") && get<std::string>(m, "activation", "model") != "swish") {
      throw ConfigError("model.activation: only 'swish' is supported");
    }
  }

  if (!j.contains("method")) throw ConfigError("config: missing section 'method'");
  const json& me = j.at("method");
  detail::check_keys(me, {"name", "hparams"}, "method");
  if (!me.contains("name")) throw ConfigError("method: missing key 'name'");
  c.method = get<std::string>(me, "name", "method");
  if (me.contains("hparams")) {
    const json& hp = me.at("hparams");
    if (!hp.is_object()) throw ConfigError("method.hparams: expected an object");
    for (const auto& [k, v] : hp.items()) {
      if (!v.is_number()) throw ConfigError("method.hparams." + k + ": expected a number");
      c.hparams.values.emplace_back(k, v.get<double>());
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t, {"epochs", "batch_size", "lr", "adam_beta1", "adam_beta2", "adam_eps"},
                       "train");
    if (t.contains("epochs")) c.train.epochs = get<int>(t, "epochs", "train");
    if (t.contains("batch_size")) c.train.batch_size = get<int>(t, "batch_size", "train");
    if (t.contains("lr")) c.train.base_lr = get<double>(t, "lr", "train");
    if (t.contains("adam_beta1")) c.train.adam_beta1 = get<double>(t, "adam_beta1", "train");
    if (t.contains("adam_beta2")) c.train.adam_beta2 = get<double>(t, "adam_beta2", "train");
    if (t.contains("adam_eps")) c.train.adam_eps = get<double>(t, "adam_eps", "train");
  }

  if (j.contains("nc")) {
    const json& n = j.at("nc");
    detail::check_keys(n, {"hidden", "sample_size", "fit_steps", "beta", "lr", "huber_delta", "warm_start"},
                       "nc");
    if (n.contains("hidden")) c.nc.hidden = get<std::vector<std::size_t>>(n, "hidden", "nc");
    if (n.contains("sample_size")) c.nc.sample_size = get<std::size_t>(n, "sample_size", "nc");
    if (n.contains("fit_steps")) c.nc.fit_steps = get<std::size_t>(n, "fit_steps", "nc");
    if (n.contains("beta")) c.nc.beta = get<double>(n, "beta", "nc");
    if (n.contains("lr")) c.nc.lr = get<double>(n, "lr", "nc");
    if (n.contains("huber_delta")) c.nc.huber_delta = get<double>(n, "huber_delta", "nc");
    if (n.contains("warm_start")) c.nc.warm_start = get<bool>(n, "warm_start", "nc");
  }

  c.grid = default_grid(c.method);
  if (j.contains("tune")) {
    const json& t = j.at("tune");
    detail::check_keys(t, {"grid", "jobs"}, "tune");
    if (t.contains("jobs")) c.jobs = get<std::size_t>(t, "jobs", "tune");
    if (t.contains("grid")) {
      const json& g = t.at("grid");
      if (!g.is_object()) throw ConfigError("tune.grid: expected an object");
      c.grid.clear();
      for (const auto& [k, v] : g.items()) {
        if (!v.is_array()) throw ConfigError("tune.grid." + k + ": expected an array");
        std::vector<double> vals;
        for (const auto& x : v) {
          if (!x.is_number()) throw ConfigError("tune.grid." + k + ": expected numbers");
          vals.push_back(x.get<double>());
        }
        c.grid.emplace_back(k, std::move(vals));
      }
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "': file not found");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

/// Builds the task sequence described by the config.
inline tasks::TaskSequence build_sequence(const SequenceConfig& s) {
  tasks::Split split;
  if (!s.builtin.empty()) {
    split = tasks::split_train_val_test(tasks::load_builtin(s.builtin), s.split_seed);
  } else if (!s.feature_file.empty()) {
    split = tasks::split_train_val_test(tasks::load_feature_file(s.feature_file), s.split_seed);
  } else {
    split = {tasks::load_feature_file(s.train_file), tasks::load_feature_file(s.val_file),
             tasks::load_feature_file(s.test_file)};
    if (split.val.num_classes != split.train.num_classes ||
        split.test.num_classes != split.train.num_classes ||
        split.val.input_dim() != split.train.input_dim() ||
        split.test.input_dim() != split.train.input_dim()) {
      throw tasks::DataError("feature_files: train, val and test headers disagree");
    }
  }
  if (s.standardize) split = tasks::standardize(std::move(split));
  auto seq = tasks::split_by_class(split, s.classes_per_task);
  if (s.mode == tasks::Mode::DI) seq = tasks::relabel_binary(seq, s.groups);
  return seq;
}

}  // namespace smi::harness
