#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "smi/tasks.hpp"
#include "support.hpp"

namespace {

using namespace smi;
using namespace smi::tasks;
namespace st = smi::testing;

TEST(Builtin, Shapes) {
  const auto iris = load_builtin("iris");
  EXPECT_EQ(iris.x.rows(), 150);
  EXPECT_EQ(iris.x.cols(), 4);
  EXPECT_EQ(iris.num_classes, 3);
  EXPECT_EQ(iris.class_counts(), (std::vector<std::size_t>{50, 50, 50}));
  const auto wine = load_builtin("wine");
  EXPECT_EQ(wine.x.rows(), 178);
  EXPECT_EQ(wine.x.cols(), 13);
  EXPECT_EQ(wine.class_counts(), (std::vector<std::size_t>{59, 71, 48}));
  const auto i2 = load_builtin("iris2d");
  EXPECT_EQ(i2.x.rows(), 150);
  EXPECT_EQ(i2.x.cols(), 2);
  EXPECT_EQ(i2.x.col(0), iris.x.col(2));
  EXPECT_EQ(i2.x.col(1), iris.x.col(3));
  EXPECT_NO_THROW(iris.validate());
  EXPECT_NO_THROW(wine.validate());
  EXPECT_THROW(load_builtin("mnist"), DataError);
}

TEST(Builtin, CanonicalIrisRows) {
  const auto iris = load_builtin("iris");
  EXPECT_EQ(iris.x.row(0), (Eigen::RowVector4d(5.1, 3.5, 1.4, 0.2)));
  EXPECT_EQ(iris.x.row(149), (Eigen::RowVector4d(5.9, 3.0, 5.1, 1.8)));
  EXPECT_EQ(iris.y.front(), 0);
  EXPECT_EQ(iris.y.back(), 2);
}

// rows of a split, identified by exact feature rows plus label
std::multiset<std::vector<double>> row_keys(const Dataset& ds) {
  std::multiset<std::vector<double>> out;
  for (Eigen::Index r = 0; r < ds.x.rows(); ++r) {
    std::vector<double> k;
    for (Eigen::Index c = 0; c < ds.x.cols(); ++c) k.push_back(ds.x(r, c));
    k.push_back(ds.y[static_cast<std::size_t>(r)]);
    out.insert(k);
  }
  return out;
}

TEST(Split, IrisSizes) {
  const auto s = split_train_val_test(load_builtin("iris"), 0);
  EXPECT_EQ(s.train.size(), 96u);
  EXPECT_EQ(s.val.size(), 24u);
  EXPECT_EQ(s.test.size(), 30u);
}

TEST(Split, PartitionsTheDataset) {
  for (const char* name : {"iris", "wine"}) {
    const auto ds = load_builtin(name);
    const auto s = split_train_val_test(ds, 5);
    auto all = row_keys(s.train);
    for (const auto& k : row_keys(s.val)) all.insert(k);
    for (const auto& k : row_keys(s.test)) all.insert(k);
    EXPECT_EQ(all, row_keys(ds)) << name;
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), ds.size());
  }
}

TEST(Split, StratifiedWithinOneExample) {
  for (const char* name : {"iris", "wine"}) {
    const auto ds = load_builtin(name);
    const auto s = split_train_val_test(ds, 1);
    const auto parent = ds.class_counts();
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      const auto counts = part->class_counts();
      for (std::size_t c = 0; c < parent.size(); ++c) {
        const double expected = static_cast<double>(parent[c]) / static_cast<double>(ds.size()) *
                                static_cast<double>(part->size());
        EXPECT_LE(std::abs(static_cast<double>(counts[c]) - expected), 1.0) << name << " class " << c;
      }
    }
  }
}

TEST(Split, DeterministicPerSeed) {
  const auto ds = load_builtin("wine");
  const auto a = split_train_val_test(ds, 9), b = split_train_val_test(ds, 9), c = split_train_val_test(ds, 10);
  EXPECT_EQ(a.train.x, b.train.x);
  EXPECT_EQ(a.test.y, b.test.y);
  EXPECT_NE(a.test.x, c.test.x);
}

TEST(Split, TinyClassThrows) {
  Dataset ds;
  ds.x = Eigen::MatrixXd::Zero(5, 1);
  ds.y = {0, 0, 0, 1, 1};
  ds.num_classes = 2;
  EXPECT_THROW(split_train_val_test(ds, 0), DataError);
  ds.y = {0, 0, 0, 1, 1};
  ds.y.push_back(1);
  ds.x = Eigen::MatrixXd::Zero(6, 1);
  const auto s = split_train_val_test(ds, 0);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Standardize, UsesTrainingStatistics) {
  const auto s = standardize(split_train_val_test(load_builtin("wine"), 0));
  const Eigen::RowVectorXd mean = s.train.x.colwise().mean();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index c = 0; c < s.train.x.cols(); ++c) {
    const double var = (s.train.x.col(c).array() - mean(c)).square().sum() / static_cast<double>(s.train.x.rows() - 1);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
  EXPECT_GT(s.test.x.colwise().mean().cwiseAbs().maxCoeff(), 0.0);
}

TEST(SplitByClass, IrisOneClassPerTask) {
  const auto s = split_train_val_test(load_builtin("iris"), 0);
  const auto seq = split_by_class(s, 1);
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.mode, Mode::CI);
  EXPECT_EQ(seq.model_spec({}).output_dim, 3u);
  EXPECT_EQ(seq.head(), nn::Head::categorical);
  std::size_t rows = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& task = seq.tasks[t];
    EXPECT_EQ(task.classes, (std::vector<int>{static_cast<int>(t)}));
    for (const auto* d : {&task.train, &task.val, &task.test}) {
      EXPECT_TRUE(std::all_of(d->y.begin(), d->y.end(), [&](int y) { return y == static_cast<int>(t); }));
      EXPECT_EQ(d->num_classes, 3);
      rows += d->size();
    }
    EXPECT_EQ(task.train.size() + task.val.size() + task.test.size(), 50u);
  }
  EXPECT_EQ(rows, 150u);
}

TEST(SplitByClass, UnionIsOriginal) {
  const auto s = split_train_val_test(load_builtin("wine"), 3);
  const auto seq = split_by_class(s, 1);
  std::multiset<std::vector<double>> train;
  std::set<int> seen;
  for (const auto& t : seq.tasks) {
    for (const auto& k : row_keys(t.train)) train.insert(k);
    for (int c : t.classes) EXPECT_TRUE(seen.insert(c).second) << "class in two tasks";
  }
  EXPECT_EQ(train, row_keys(s.train));
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2}));
}

TEST(SplitByClass, WholeDatasetWhenBlockCoversAllClasses) {
  Split s;
  s.train = st::random_dataset(12, 2, 2, 1);
  s.val = st::random_dataset(4, 2, 2, 2);
  s.test = st::random_dataset(4, 2, 2, 3);
  const auto seq = split_by_class(s, 2);
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq.tasks[0].train.x, s.train.x);
  EXPECT_EQ(seq.tasks[0].train.y, s.train.y);
}

TEST(SplitByClass, IndivisibleThrows) {
  const auto s = split_train_val_test(load_builtin("iris"), 0);
  EXPECT_THROW(split_by_class(s, 2), DataError);
  EXPECT_THROW(split_by_class(s, 0), DataError);
}

TEST(Relabel, BinaryLabelsAndSameRows) {
  const auto ci = split_by_class(split_train_val_test(load_builtin("iris"), 0), 1);
  const std::vector<int> group{0, 1, 0};
  const auto di = relabel_binary(ci, group);
  EXPECT_EQ(di.mode, Mode::DI);
  EXPECT_EQ(di.head(), nn::Head::bernoulli);
  EXPECT_EQ(di.model_spec({}).output_dim, 1u);
  ASSERT_EQ(di.size(), ci.size());
  for (std::size_t t = 0; t < ci.size(); ++t) {
    for (int part = 0; part < 3; ++part) {
      const auto& a = part == 0 ? ci.tasks[t].train : part == 1 ? ci.tasks[t].val : ci.tasks[t].test;
      const auto& b = part == 0 ? di.tasks[t].train : part == 1 ? di.tasks[t].val : di.tasks[t].test;
      EXPECT_EQ(a.x, b.x);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b.y[i], group[static_cast<std::size_t>(a.y[i])]);
      EXPECT_EQ(b.num_classes, 2);
    }
  }
}

TEST(Relabel, CommutesWithSplitting) {
  const auto split = split_train_val_test(load_builtin("wine"), 2);
  const std::vector<int> group{1, 0, 1};
  const auto di = relabel_binary(split_by_class(split, 1), group);
  // relabel the split first, then cut the same class blocks by original label
  for (std::size_t t = 0; t < di.size(); ++t) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      if (split.train.y[i] == static_cast<int>(t)) rows.push_back(i);
    }
    Dataset expected = subset(split.train, rows);
    for (int& y : expected.y) y = group[static_cast<std::size_t>(y)];
    EXPECT_EQ(di.tasks[t].train.x, expected.x);
    EXPECT_EQ(di.tasks[t].train.y, expected.y);
  }
}

TEST(Relabel, ConstantMappingGivesDegenerateTasks) {
  const auto ci = split_by_class(split_train_val_test(load_builtin("iris"), 0), 1);
  const auto di = relabel_binary(ci, std::vector<int>{1, 1, 1});
  EXPECT_EQ(di.degenerate_tasks(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(ci.degenerate_tasks().empty());
}

TEST(Relabel, Errors) {
  const auto ci = split_by_class(split_train_val_test(load_builtin("iris"), 0), 1);
  EXPECT_THROW(relabel_binary(ci, std::vector<int>{0, 1}), DataError);
  EXPECT_THROW(relabel_binary(ci, std::vector<int>{0, 1, 2}), DataError);
  const auto di = relabel_binary(ci, std::vector<int>{0, 1, 0});
  EXPECT_THROW(relabel_binary(di, std::vector<int>{0, 1}), DataError);
}

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_feature_stream(in, "mem");
}

void expect_parse_error(const std::string& text, const std::string& fragment) {
  try {
    parse(text);
    FAIL() << "expected a parse error for: " << text;
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(FeatureFile, ParsesSmallFile) {
  const auto ds = parse("#k=2,d=2\n0,1.5,-2\n1,0,3e-1\n1,7,8\n");
  EXPECT_EQ(ds.x.rows(), 3);
  EXPECT_EQ(ds.x.cols(), 2);
  EXPECT_EQ(ds.num_classes, 2);
  EXPECT_EQ(ds.y, (std::vector<int>{0, 1, 1}));
  EXPECT_DOUBLE_EQ(ds.x(1, 1), 0.3);
  EXPECT_DOUBLE_EQ(ds.x(0, 1), -2.0);
}

TEST(FeatureFile, ErrorsCarryLineNumbers) {
  expect_parse_error("#k=10,d=1\n3,1\n10,2\n", "mem:3: label 10 outside [0, 10)");
  expect_parse_error("#k=2,d=2\n0,1,2\n1,2\n", "mem:3: expected 3 fields, found 2");
  expect_parse_error("#k=2,d=2\n0,1,2,3\n", "mem:2: expected 3 fields, found 4");
  expect_parse_error("#k=2,d=2\n0,1,abc\n", "mem:2: field 2 is not a number");
  expect_parse_error("#k=2,d=2\n0,1,\n", "mem:2: field 2 is not a number");
  expect_parse_error("#k=2,d=1\nx,1\n", "mem:2: label is not an integer");
  expect_parse_error("#k=2,d=1\n0,1\n1,1,000\n", "mem:3");
  expect_parse_error("k=2,d=1\n0,1\n", "mem:1: header");
  expect_parse_error("#k=0,d=1\n0,1\n", "mem:1: header");
  expect_parse_error("#k=2,d=1\n", "no data rows");
  expect_parse_error("", "mem:1: missing header");
  expect_parse_error("#k=2,d=1\n0,inf\n", "not finite");
}

TEST(FeatureFile, RoundTrip) {
  auto ds = st::random_dataset(25, 4, 5, 3);
  ds.x(0, 0) = 1e-300;
  ds.x(1, 1) = -123456.789;
  const auto path = std::filesystem::temp_directory_path() / "smi_tasks_roundtrip.csv";
  write_feature_file(path.string(), ds);
  const auto back = load_feature_file(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.num_classes, 5);
  EXPECT_EQ(back.y, ds.y);
  EXPECT_LE((back.x - ds.x).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(back.x, ds.x);  // shortest round-trip formatting is exact
}

TEST(FeatureFile, MissingFile) {
  EXPECT_THROW(load_feature_file("/nonexistent/features.csv"), DataError);
}

TEST(DatasetTest, ValidateAndConcat) {
  Dataset bad;
  bad.x = Eigen::MatrixXd::Zero(2, 1);
  bad.y = {0, 3};
  bad.num_classes = 3;
  EXPECT_THROW(bad.validate(), DataError);
  bad.y = {0};
  EXPECT_THROW(bad.validate(), DataError);
  const auto a = st::random_dataset(3, 2, 2, 1), b = st::random_dataset(4, 2, 2, 2);
  const std::vector<Dataset> parts{a, b};
  const auto c = concat(parts);
  EXPECT_EQ(c.size(), 7u);
  EXPECT_EQ(c.x.bottomRows(4), b.x);
  const std::vector<Dataset> mismatched{a, st::random_dataset(2, 3, 2, 3)};
  EXPECT_THROW(concat(mismatched), DataError);
  EXPECT_THROW(concat(std::span<const Dataset>()), DataError);
}

}  // namespace
