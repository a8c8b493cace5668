#pragma once

// Datasets and task sequences: built-in tables, feature files, stratified
// 64/16/20 splits, class-incremental splitting and binary relabelling.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>

#include "smi/builtin_data.hpp"
#include "smi/nn.hpp"

namespace smi::tasks {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;
  int num_classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(x.cols()); }

  void validate() const {
    if (static_cast<std::size_t>(x.rows()) != y.size()) {
      throw DataError("dataset: " + std::to_string(x.rows()) + " rows but " +
                      std::to_string(y.size()) + " labels");
    }
    if (num_classes <= 0) throw DataError("dataset: class count must be positive");
    for (int label : y) {
      if (label < 0 || label >= num_classes) {
        throw DataError("dataset: label " + std::to_string(label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      }
    }
    if (!x.allFinite()) throw DataError("dataset: non-finite feature value");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(num_classes), 0);
    for (int label : y) ++c[static_cast<std::size_t>(label)];
    return c;
  }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), ds.x.cols());
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = ds.x.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(ds.y[rows[i]]);
  }
  return out;
}

/// Row-wise concatenation; inputs must agree in width and class count.
inline Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw DataError("concat: nothing to concatenate");
  Dataset out;
  out.num_classes = parts.front().num_classes;
  Eigen::Index n = 0;
  for (const auto& p : parts) {
    if (p.x.cols() != parts.front().x.cols() || p.num_classes != out.num_classes) {
      throw DataError("concat: incompatible datasets");
    }
    n += p.x.rows();
  }
  out.x.resize(n, parts.front().x.cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.x.middleRows(r, p.x.rows()) = p.x;
    r += p.x.rows();
    out.y.insert(out.y.end(), p.y.begin(), p.y.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Built-in datasets

inline Dataset load_builtin(std::string_view name) {
  const auto make = [](const auto& features, const auto& labels, int rows, int cols) {
    Dataset ds;
    ds.x.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) ds.x(r, c) = features[static_cast<std::size_t>(r * cols + c)];
    }
    ds.y.assign(labels.begin(), labels.end());
    ds.num_classes = 3;
    return ds;
  };
  if (name == "iris") {
    return make(data::kIrisFeatures, data::kIrisLabels, data::kIrisRows, data::kIrisCols);
  }
  if (name == "wine") {
    return make(data::kWineFeatures, data::kWineLabels, data::kWineRows, data::kWineCols);
  }
  if (name == "iris2d") {
    Dataset ds = make(data::kIrisFeatures, data::kIrisLabels, data::kIrisRows, data::kIrisCols);
    ds.x = ds.x.rightCols(2).eval();  // petal length, petal width
    return ds;
  }
  throw DataError("unknown built-in dataset '" + std::string(name) +
                  "' (expected iris, wine or iris2d)");
}

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Stratified two-stage split: 20% of each class to test, then 20% of the
/// rest to validation. Counts are floored per class with a minimum of one;
/// the remainder goes to training.
inline Split split_train_val_test(const Dataset& ds, std::uint64_t seed) {
  ds.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_rows, val_rows, test_rows;
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.y.size(); ++i) {
      if (ds.y[i] == c) rows.push_back(i);
    }
    if (rows.empty()) continue;
    if (rows.size() < 3) {
      throw DataError("split: class " + std::to_string(c) + " has " +
                      std::to_string(rows.size()) + " examples; at least 3 are needed");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n_test = std::max<std::size_t>(1, rows.size() / 5);
    const std::size_t rest = rows.size() - n_test;
    const std::size_t n_val = std::max<std::size_t>(1, rest / 5);
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + n_test);
    val_rows.insert(val_rows.end(), rows.begin() + n_test, rows.begin() + n_test + n_val);
    train_rows.insert(train_rows.end(), rows.begin() + n_test + n_val, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {subset(ds, train_rows), subset(ds, val_rows), subset(ds, test_rows)};
}

/// Per-feature standardization with statistics from the training split.
inline Split standardize(Split s) {
  const Eigen::RowVectorXd mean = s.train.x.colwise().mean();
  Eigen::RowVectorXd sd =
      ((s.train.x.rowwise() - mean).array().square().colwise().sum() /
       std::max<double>(1.0, static_cast<double>(s.train.x.rows()) - 1.0))
          .sqrt()
          .matrix();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd(j) == 0.0) sd(j) = 1.0;
  }
  for (Dataset* d : {&s.train, &s.val, &s.test}) {
    d->x = ((d->x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  }
  return s;
}

enum class Mode { CI, DI };

inline std::string to_string(Mode m) { return m == Mode::CI ? "CI" : "DI"; }

struct Task {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<int> classes;  // original class labels in this task
};

struct TaskSequence {
  std::vector<Task> tasks;
  Mode mode = Mode::CI;
  int num_classes = 0;  // width of the shared label space

  std::size_t size() const { return tasks.size(); }
  std::size_t input_dim() const { return tasks.empty() ? 0 : tasks.front().train.input_dim(); }

  nn::Head head() const { return mode == Mode::CI ? nn::Head::categorical : nn::Head::bernoulli; }

  /// Model shape implied by the sequence for the given hidden layers.
  nn::ModelSpec model_spec(std::vector<std::size_t> hidden) const {
    nn::ModelSpec spec;
    spec.input_dim = input_dim();
    spec.hidden_sizes = std::move(hidden);
    spec.output_dim = mode == Mode::CI ? static_cast<std::size_t>(num_classes) : 1;
    spec.head = head();
    return spec;
  }

  /// Indices of DI tasks whose training labels are all identical.
  std::vector<std::size_t> degenerate_tasks() const {
    std::vector<std::size_t> out;
    if (mode != Mode::DI) return out;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& y = tasks[t].train.y;
      if (y.empty() || std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
        out.push_back(t);
      }
    }
    return out;
  }
};

namespace detail {

inline Dataset rows_with_classes(const Dataset& ds, const std::set<int>& classes) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.y.size(); ++i) {
    if (classes.contains(ds.y[i])) rows.push_back(i);
  }
  return subset(ds, rows);
}

}  // namespace detail

/// Class-incremental sequence: task i holds the i-th consecutive block of
/// classes. Labels keep their global values.
inline TaskSequence split_by_class(const Split& split, int classes_per_task) {
  const int k = split.train.num_classes;
  if (classes_per_task <= 0 || k % classes_per_task != 0) {
    throw DataError("split_by_class: " + std::to_string(k) + " classes are not divisible by " +
                    std::to_string(classes_per_task) + " classes per task");
  }
  TaskSequence seq;
  seq.mode = Mode::CI;
  seq.num_classes = k;
  for (int first = 0; first < k; first += classes_per_task) {
    std::set<int> cls;
    Task task;
    for (int c = first; c < first + classes_per_task; ++c) {
      cls.insert(c);
      task.classes.push_back(c);
    }
    task.train = detail::rows_with_classes(split.train, cls);
    task.val = detail::rows_with_classes(split.val, cls);
    task.test = detail::rows_with_classes(split.test, cls);
    seq.tasks.push_back(std::move(task));
  }
  return seq;
}

/// Domain-incremental view of a CI sequence: same rows, labels mapped
/// through `group_of` (indexed by original class) onto {0, 1}.
inline TaskSequence relabel_binary(const TaskSequence& ci, std::span<const int> group_of) {
  if (ci.mode != Mode::CI) throw DataError("relabel_binary: input must be a CI sequence");
  if (group_of.size() < static_cast<std::size_t>(ci.num_classes)) {
    throw DataError("relabel_binary: group mapping covers " + std::to_string(group_of.size()) +
                    " of " + std::to_string(ci.num_classes) + " classes");
  }
  for (int g : group_of) {
    if (g != 0 && g != 1) throw DataError("relabel_binary: groups must be 0 or 1");
  }
  TaskSequence di = ci;
  di.mode = Mode::DI;
  di.num_classes = 2;
  for (auto& task : di.tasks) {
    for (Dataset* d : {&task.train, &task.val, &task.test}) {
      for (int& label : d->y) label = group_of[static_cast<std::size_t>(label)];
      d->num_classes = 2;
    }
  }
  return di;
}

// ---------------------------------------------------------------------------
// Feature files: "#k=<K>,d=<D>" then "label,f1,...,fD" per line.

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline Dataset parse_feature_stream(std::istream& in, const std::string& source) {
  const auto fail = [&](std::size_t line, const std::string& msg) {
    return DataError(source + ":" + std::to_string(line) + ": " + msg);
  };
  std::string line;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  int k = 0;
  int d = 0;
  {
    char tail = 0;
    if (std::sscanf(line.c_str(), "#k=%d,d=%d%c", &k, &d, &tail) != 2 || k <= 0 || d <= 0) {
      throw fail(1, "header must be '#k=<K>,d=<D>' with positive K and D");
    }
  }
  std::vector<double> values;
  Dataset ds;
  ds.num_classes = k;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t start = 0;
    int field = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view tok(line.data() + start,
                                 (comma == std::string::npos ? line.size() : comma) - start);
      const char* first = tok.data();
      const char* last = tok.data() + tok.size();
      if (field == 0) {
        int label = 0;
        const auto [p, ec] = std::from_chars(first, last, label);
        if (ec != std::errc() || p != last) throw fail(lineno, "label is not an integer");
        if (label < 0 || label >= k) {
          throw fail(lineno, "label " + std::to_string(label) + " outside [0, " +
                                 std::to_string(k) + ")");
        }
        ds.y.push_back(label);
      } else {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || p != last || tok.empty()) {
          throw fail(lineno, "field " + std::to_string(field) + " is not a number");
        }
        if (!std::isfinite(v)) throw fail(lineno, "field " + std::to_string(field) + " is not finite");
        values.push_back(v);
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != d + 1) {
      throw fail(lineno, "expected " + std::to_string(d + 1) + " fields, found " +
                             std::to_string(field));
    }
  }
  if (ds.y.empty()) throw fail(lineno, "no data rows");
  ds.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(ds.y.size()), d);
  return ds;
}

inline Dataset load_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open feature file");
  return parse_feature_stream(in, path);
}

inline void write_feature_stream(std::ostream& out, const Dataset& ds) {
  ds.validate();
  out << "#k=" << ds.num_classes << ",d=" << ds.x.cols() << '\n';
  for (Eigen::Index r = 0; r < ds.x.rows(); ++r) {
    out << ds.y[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < ds.x.cols(); ++c) out << ',' << format_double(ds.x(r, c));
    out << '\n';
  }
}

inline void write_feature_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write feature file");
  write_feature_stream(out, ds);
}

}  // namespace smi::tasks
