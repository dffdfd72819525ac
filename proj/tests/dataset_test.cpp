#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "test_util.hpp"

namespace hlecl {
namespace {

using testing::kind_of;
using testing::regular;
using testing::synthetic;

TEST(GenHierGaussiansTest, ZeroNoiseGivesIdenticalLeafSamples) {
  auto tax = regular({2, 4});
  GaussianHierarchyParams p;
  p.samples_per_leaf = 2;
  p.noise_sigma = 0.0;
  auto ds = gen_hier_gaussians(tax, p);
  ASSERT_EQ(ds.size(), 8u);
  for (std::size_t i = 0; i < ds.size(); i += 2) {
    EXPECT_EQ(ds.samples[i].features, ds.samples[i + 1].features);
    EXPECT_EQ(ds.samples[i].labels, ds.samples[i + 1].labels);
  }
}

TEST(GenHierGaussiansTest, SameSeedIsByteIdentical) {
  auto tax = regular({3, 6});
  EXPECT_EQ(to_feature_text(synthetic(tax, 5, 8, 42)), to_feature_text(synthetic(tax, 5, 8, 42)));
  EXPECT_NE(to_feature_text(synthetic(tax, 5, 8, 42)), to_feature_text(synthetic(tax, 5, 8, 43)));
}

TEST(GenHierGaussiansTest, SamplesCarryLeafLabels) {
  auto tax = regular({2, 4, 8});
  auto ds = synthetic(tax, 3);
  EXPECT_EQ(ds.size(), 24u);
  for (const auto& s : ds.samples) {
    ASSERT_EQ(s.labels.size(), 1u);
    EXPECT_EQ(s.labels[0].level, 3);
    EXPECT_TRUE(tax->is_leaf(s.labels[0].label));
  }
}

TEST(GenHierGaussiansTest, PerLeafCountsEmulateImbalance) {
  auto tax = regular({1, 3});
  GaussianHierarchyParams p;
  p.samples_per_leaf = 2;
  p.leaf_samples[tax->level_labels(2)[0]] = 31;
  auto ds = gen_hier_gaussians(tax, p);
  EXPECT_EQ(ds.size(), 35u);
}

TEST(GenHierGaussiansTest, Errors) {
  auto tax = regular({2, 4});
  GaussianHierarchyParams p;
  p.child_spread = 0.0;
  EXPECT_EQ(kind_of([&] { gen_hier_gaussians(tax, p); }), ErrorKind::kInvalidSpread);
  p = {};
  p.samples_per_leaf = 0;
  EXPECT_EQ(kind_of([&] { gen_hier_gaussians(tax, p); }), ErrorKind::kZeroSamples);
}

TEST(GenHierGaussiansTest, NearestMeanSeparatesFiveByFourHierarchy) {
  // The data shape used by the relative-ordering experiment.
  auto tax = regular({5, 20});
  GaussianHierarchyParams p;
  p.feature_dim = 32;
  p.samples_per_leaf = 150;
  p.parent_spread = 4.0;
  p.child_spread = 1.5;
  p.noise_sigma = 0.5;
  p.seed = 0;
  auto [train, test] = split(gen_hier_gaussians(tax, p), 0.2, 1);
  EXPECT_GT(oracle::nearest_mean_accuracy(train, test), 0.90);
}

TEST(GenHierGaussiansProperty, ChildMeansStayNearTheirParent) {
  auto tax = regular({4, 12});
  int good = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    GaussianHierarchyParams p;
    p.feature_dim = 16;
    p.parent_spread = 4.0;
    p.child_spread = 1.0;  // 0.25 * parent_spread
    p.seed = static_cast<std::uint64_t>(trial);
    const auto means = gen_class_means(*tax, p);
    bool all = true;
    for (LabelId child : tax->level_labels(2)) {
      const LabelId own = *tax->parent_of(child);
      auto dist = [&](LabelId a) {
        double d = 0.0;
        for (std::size_t i = 0; i < p.feature_dim; ++i) {
          const double x = means[static_cast<std::size_t>(child)][i] - means[static_cast<std::size_t>(a)][i];
          d += x * x;
        }
        return d;
      };
      for (LabelId other : tax->level_labels(1)) {
        if (other != own && dist(other) <= dist(own)) all = false;
      }
    }
    good += all;
  }
  EXPECT_GE(good, trials * 95 / 100);
}

class FeatureFileTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("hlecl_ds_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(FeatureFileTest, HeaderOnlyFileIsEmptyDataset) {
  auto tax = regular({2, 4});
  auto ds = parse_feature_text("dim=3\n", tax);
  EXPECT_EQ(ds.size(), 0u);
  EXPECT_EQ(ds.feature_dim, 3u);
}

TEST_F(FeatureFileTest, UnknownLabelIsRejected) {
  auto tax = regular({2, 4});
  EXPECT_EQ(kind_of([&] { parse_feature_text("dim=2\n0\t2:nope\t1,2\n", tax); }), ErrorKind::kUnknownLabel);
  // Right name, wrong level.
  EXPECT_EQ(kind_of([&] { parse_feature_text("dim=2\n0\t1:L2_0\t1,2\n", tax); }), ErrorKind::kUnknownLabel);
}

TEST_F(FeatureFileTest, DimensionAndParseErrors) {
  auto tax = regular({2, 4});
  EXPECT_EQ(kind_of([&] { parse_feature_text("dim=3\n0\t2:L2_0\t1,2\n", tax); }), ErrorKind::kDimMismatch);
  try {
    parse_feature_text("dim=2\n0\t2:L2_0\t1,2\n1\t2:L2_1\t1,x\n", tax);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_feature_text("0\t2:L2_0\t1,2\n", tax), ParseError);
  // Dual labels must agree with the hierarchy.
  EXPECT_THROW(parse_feature_text("dim=1\n0\t1:L1_1,2:L2_0\t1\n", tax), ParseError);
  auto ok = parse_feature_text("dim=1\n0\t2:L2_0,1:L1_0\t1\n", tax);
  EXPECT_EQ(ok.samples[0].labels.front().level, 1);
}

TEST_F(FeatureFileTest, WriteThenLoadRoundTrips) {
  auto tax = regular({3, 9});
  auto ds = synthetic(tax, 4, 6);
  const auto path = dir_ / "features.tsv";
  write_feature_file(path, ds);
  auto back = load_feature_file(path, tax);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(to_feature_text(back), to_feature_text(ds));
}

TEST(SplitTest, ExactStratification) {
  auto tax = regular({2, 4});
  auto [train, test] = split(synthetic(tax, 100), 0.2, 5);
  std::map<ClassKey, int> per_class;
  for (const auto& s : test.samples) ++per_class[s.finest()];
  ASSERT_EQ(per_class.size(), 4u);
  for (const auto& [c, n] : per_class) EXPECT_EQ(n, 20);
  EXPECT_EQ(train.size(), 320u);
}

TEST(SplitTest, DeterministicAndPartitioning) {
  auto tax = regular({2, 6});
  auto ds = synthetic(tax, 13);
  auto [a_train, a_test] = split(ds, 0.3, 9);
  auto [b_train, b_test] = split(ds, 0.3, 9);
  EXPECT_EQ(a_train, b_train);
  EXPECT_EQ(a_test, b_test);

  std::vector<SampleId> ids, original;
  for (const auto& s : a_train.samples) ids.push_back(s.sample_id);
  for (const auto& s : a_test.samples) ids.push_back(s.sample_id);
  for (const auto& s : ds.samples) original.push_back(s.sample_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, original);
}

TEST(SplitTest, FractionOutOfRange) {
  auto tax = regular({2, 4});
  auto ds = synthetic(tax, 5);
  EXPECT_EQ(kind_of([&] { split(ds, 0.0, 1); }), ErrorKind::kFractionOutOfRange);
  EXPECT_EQ(kind_of([&] { split(ds, 1.0, 1); }), ErrorKind::kFractionOutOfRange);
}

}  // namespace
}  // namespace hlecl
