#pragma once

// Metrics records, their CSV form, the append-only results index and the
// accuracy summaries computed from them.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "smi/tasks.hpp"

namespace smi::harness {

class ResultsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kRecordsHeader = "method,hparams,seed,task_trained,dataset_index,split,accuracy";
inline constexpr const char* kIndexHeader = "kind,name,method,hparams,seed,path";

/// Accuracy on dataset `dataset_index` after training through task
/// `task_trained`; both indices count from 1.
struct MetricsRecord {
  std::string method;
  std::string hparams;
  std::uint64_t seed = 0;
  std::size_t task_trained = 0;
  std::size_t dataset_index = 0;
  std::string split;  // val or test
  double accuracy = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("accuracy: no labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Unweighted mean over the datasets of the sequence.
inline double final_average_accuracy(std::span<const double> per_dataset) {
  if (per_dataset.empty()) throw std::invalid_argument("final_average_accuracy: no datasets");
  double s = 0.0;
  for (double a : per_dataset) s += a;
  return s / static_cast<double>(per_dataset.size());
}

/// FAA of the last trained task for a split, or NaN when that row of the
/// accuracy matrix is incomplete.
inline double final_average_accuracy(std::span<const MetricsRecord> records, const std::string& split,
                                     std::size_t num_tasks) {
  std::vector<double> acc(num_tasks, std::nan(""));
  for (const auto& r : records) {
    if (r.split == split && r.task_trained == num_tasks && r.dataset_index >= 1 &&
        r.dataset_index <= num_tasks) {
      acc[r.dataset_index - 1] = r.accuracy;
    }
  }
  for (double a : acc) {
    if (std::isnan(a)) return std::nan("");
  }
  return final_average_accuracy(acc);
}

/// Largest task_trained present.
inline std::size_t tasks_trained(std::span<const MetricsRecord> records) {
  std::size_t t = 0;
  for (const auto& r : records) t = std::max(t, r.task_trained);
  return t;
}

inline std::string to_csv_line(const MetricsRecord& r) {
  return r.method + "," + r.hparams + "," + std::to_string(r.seed) + "," +
         std::to_string(r.task_trained) + "," + std::to_string(r.dataset_index) + "," + r.split +
         "," + tasks::format_double(r.accuracy);
}

inline void write_records(std::ostream& out, std::span<const MetricsRecord> records) {
  out << kRecordsHeader << '\n';
  for (const auto& r : records) out << to_csv_line(r) << '\n';
}

inline void write_records(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResultsError("cannot write '" + path.string() + "'");
  write_records(out, records);
  if (!out) throw ResultsError("write failed for '" + path.string() + "'");
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class Int>
Int parse_int(const std::string& s, const std::string& where) {
  Int v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ResultsError(where + ": bad integer '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ResultsError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<MetricsRecord> read_records(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader) {
    throw ResultsError(source + ":1: expected header '" + std::string(kRecordsHeader) + "'");
  }
  std::vector<MetricsRecord> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto f = detail::split_fields(line);
    if (f.size() != 7) throw ResultsError(where + ": expected 7 fields, got " + std::to_string(f.size()));
    MetricsRecord r;
    r.method = f[0];
    r.hparams = f[1];
    r.seed = detail::parse_int<std::uint64_t>(f[2], where);
    r.task_trained = detail::parse_int<std::size_t>(f[3], where);
    r.dataset_index = detail::parse_int<std::size_t>(f[4], where);
    r.split = f[5];
    r.accuracy = detail::parse_double(f[6], where);
    if (r.split != "val" && r.split != "test") throw ResultsError(where + ": split must be val or test");
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw ResultsError(where + ": accuracy outside [0, 1]");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricsRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResultsError("cannot open '" + path.string() + "'");
  return read_records(in, path.string());
}

// ---------------------------------------------------------------------------
// Results index

struct IndexEntry {
  std::string kind;  // run or tune
  std::string name;
  std::string method;
  std::string hparams;
  std::uint64_t seed = 0;
  std::string path;  // records file, relative to the index directory

  bool operator==(const IndexEntry&) const = default;
};

inline std::mutex& index_mutex() {
  static std::mutex m;
  return m;
}

inline void append_index(const std::filesystem::path& root, const IndexEntry& e) {
  const std::lock_guard lock(index_mutex());
  std::filesystem::create_directories(root);
  const auto path = root / "index.csv";
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw ResultsError("cannot append to '" + path.string() + "'");
  if (fresh) out << kIndexHeader << '\n';
  out << e.kind << ',' << e.name << ',' << e.method << ',' << e.hparams << ',' << e.seed << ','
      << e.path << '\n';
}

inline std::vector<IndexEntry> read_index(const std::filesystem::path& root) {
  const auto path = root / "index.csv";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResultsError("no results index at '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kIndexHeader) {
    throw ResultsError(path.string() + ":1: expected header '" + std::string(kIndexHeader) + "'");
  }
  std::vector<IndexEntry> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = detail::split_fields(line);
    if (f.size() != 6) throw ResultsError(where + ": expected 6 fields");
    out.push_back({f[0], f[1], f[2], f[3], detail::parse_int<std::uint64_t>(f[4], where), f[5]});
  }
  return out;
}

}  // namespace smi::harness
