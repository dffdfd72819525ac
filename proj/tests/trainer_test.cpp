#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "test_util.hpp"

namespace hlecl {
namespace {

using testing::kind_of;
using testing::regular;
using testing::synthetic;

RunConfig small_config(Method method) {
  RunConfig c;
  c.method = method;
  c.memory_capacity = 40;
  c.ramp_T = 200;
  c.eval_every = 50;
  c.encoder_widths = {16};
  c.stream_batch_size = 8;
  return c;
}

TEST(RunOnlineTest, SingleTaskErRowCount) {
  auto tax = regular({6});
  for (std::size_t per_leaf : {50u, 40u, 17u}) {
    auto ds = synthetic(tax, per_leaf);
    auto c = small_config(Method::kEr);
    c.scenario = Scenario::kDisjoint;
    c.num_tasks = 1;
    c.eval_every = 100;
    const auto r = run_online(c, ds, ds, 1);
    const std::size_t n = ds.size();
    EXPECT_EQ(r.log.rows_at_level(1), (n + 99) / 100 + 1) << "N=" << n;
    EXPECT_TRUE(std::isnan(r.log.rows.front().accuracy));
    EXPECT_EQ(r.log.rows.front().t, 0u);
    EXPECT_EQ(r.log.rows.back().t, n);
    EXPECT_TRUE(std::is_sorted(r.log.rows.begin(), r.log.rows.end(),
                               [](const MetricsRow& a, const MetricsRow& b) { return a.t < b.t; }));
  }
}

TEST(RunOnlineTest, RowsIncludeDeduplicatedTaskBoundaries) {
  auto tax = regular({4, 12});
  auto ds = synthetic(tax, 9);
  auto c = small_config(Method::kPlFms);
  c.eval_every = 37;
  auto stream = make_single_depth_stream(ds, false, 3, 4);
  std::set<std::size_t> points;
  for (std::size_t t = 37; t < stream.size(); t += 37) points.insert(t);
  points.insert(stream.size());
  for (const auto& task : stream.tasks) points.insert(task.start_index - 1);
  const auto r = run_online(c, stream, ds, 2);
  for (int level : {1, 2}) {
    std::vector<std::size_t> ts;
    for (const auto& row : r.log.rows) {
      if (row.level == level) ts.push_back(row.t);
    }
    EXPECT_EQ(ts, std::vector<std::size_t>(points.begin(), points.end()));
  }
}

TEST(RunOnlineTest, FmsColdStartHasNoNewClassStreamSamples) {
  auto tax = regular({4, 12});
  auto ds = synthetic(tax, 20);
  auto c = small_config(Method::kPlFms);
  c.record_batches = true;
  auto stream = make_single_depth_stream(ds, false, 3, 4);
  const auto r = run_online(c, stream, ds, 3);
  ASSERT_FALSE(r.batches.empty());
  // The very first buffer has nothing in memory to swap in, so the stream is kept.
  EXPECT_EQ(r.batches.front().memory_entries, 0u);
  for (const auto& task : stream.tasks) {
    if (task.index == 1) continue;
    const std::set<ClassKey> fresh(task.introduced.begin(), task.introduced.end());
    auto it = std::find_if(r.batches.begin(), r.batches.end(),
                           [&](const BatchRecord& b) { return b.buffer_last_t >= task.start_index; });
    ASSERT_NE(it, r.batches.end());
    for (const auto& cls : it->stream_classes) EXPECT_FALSE(fresh.count(cls)) << "task " << task.index;
  }
}

TEST(RunOnlineTest, EachStreamSampleTrainsInOneBufferOnly) {
  auto tax = regular({2, 4, 8});
  auto ds = synthetic(tax, 12);
  for (auto method : {Method::kPlFms, Method::kEr, Method::kBalancedRandomEr, Method::kClibLike}) {
    auto c = small_config(method);
    c.scenario = Scenario::kMultiDepth;
    c.record_batches = true;
    const auto r = run_online(c, ds, ds, 5);
    std::map<SampleId, std::size_t> buffer_of;
    for (const auto& b : r.batches) {
      for (SampleId id : b.stream_ids) {
        auto [it, fresh] = buffer_of.emplace(id, b.buffer_first_t);
        EXPECT_EQ(it->second, b.buffer_first_t) << to_string(method) << " sample " << id;
      }
    }
    if (method == Method::kClibLike) {
      EXPECT_TRUE(buffer_of.empty());
    }
  }
}

TEST(RunOnlineTest, FractionalUpdateRateAccumulates) {
  auto tax = regular({4});
  auto ds = synthetic(tax, 16);  // 64 samples -> 8 buffers of 8
  auto c = small_config(Method::kEr);
  c.scenario = Scenario::kDisjoint;
  c.num_tasks = 1;
  c.record_batches = true;
  c.updates_per_stream_batch = 0.25;
  EXPECT_EQ(run_online(c, ds, ds, 1).batches.size(), 2u);
  c.updates_per_stream_batch = 1.5;
  EXPECT_EQ(run_online(c, ds, ds, 1).batches.size(), 12u);
  c.updates_per_stream_batch = 3;
  EXPECT_EQ(run_online(c, ds, ds, 1).batches.size(), 24u);
}

TEST(RunOnlineTest, SameSeedSameLog) {
  auto tax = regular({3, 9});
  auto ds = synthetic(tax, 15);
  for (auto method : {Method::kPlFms, Method::kEr, Method::kBalancedRandomEr, Method::kClibLike}) {
    auto c = small_config(method);
    const auto a = run_online(c, ds, ds, 11);
    const auto b = run_online(c, ds, ds, 11);
    EXPECT_EQ(metrics_csv(a.log), metrics_csv(b.log)) << to_string(method);
    EXPECT_EQ(a.model, b.model);
    EXPECT_NE(metrics_csv(a.log), metrics_csv(run_online(c, ds, ds, 12).log));
  }
}

TEST(RunOnlineTest, MemoryNeverExceedsCapacity) {
  auto tax = regular({3, 9});
  auto ds = synthetic(tax, 15);
  for (auto method : {Method::kPlFms, Method::kEr, Method::kBalancedRandomEr, Method::kClibLike}) {
    auto c = small_config(method);
    const auto r = run_online(c, ds, ds, 1);
    EXPECT_EQ(r.memory_size, c.memory_capacity);
    EXPECT_EQ(r.memory_importance.size(), r.memory_slots.size());
  }
}

TEST(RunOnlineTest, ModuleErrorsCarryPosition) {
  auto tax = regular({2});
  auto ds = synthetic(tax, 20);
  ds.samples[7].features[0] = std::numeric_limits<double>::quiet_NaN();
  auto c = small_config(Method::kEr);
  c.scenario = Scenario::kDisjoint;
  c.num_tasks = 1;
  c.encoder_widths = {};
  try {
    run_online(c, ds, ds, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNaNGradient);
    EXPECT_NE(std::string(e.what()).find("t="), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("task 1"), std::string::npos);
  }
}

TEST(RunOnlineTest, ConfigValidation) {
  auto tax = regular({2});
  auto ds = synthetic(tax, 4);
  RunConfig c;
  c.stream_batch_size = 0;
  EXPECT_EQ(kind_of([&] { run_online(c, ds, ds, 0); }), ErrorKind::kConfigError);
  c = RunConfig{};
  c.updates_per_stream_batch = 0.0;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfigError);
  c = RunConfig{};
  c.eval_every = 0;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfigError);
  c = RunConfig{};
  c.importance_alpha = 1.5;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfigError);
}

TEST(EvaluateTest, SingleClassLevelIsPerfect) {
  auto tax = regular({1, 3});
  auto ds = synthetic(tax, 5);
  auto m = MultiHeadModel::init(ds.feature_dim, std::vector<std::size_t>{4}, 0);
  m.expand_head({1, 0});
  const std::vector<int> levels{1, 2};
  const auto acc = evaluate(m, ds, levels);
  EXPECT_EQ(acc.at(1), 1.0);
  EXPECT_FALSE(acc.at(2).has_value());
}

TEST(EvaluateTest, RandomModelIsAtChance) {
  const int k = 5;
  auto tax = regular({k});
  Dataset ds;
  ds.taxonomy = tax;
  ds.feature_dim = 6;
  Rng rng(3);
  const std::size_t n = 3000;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.sample_id = static_cast<SampleId>(i);
    s.labels = {tax->key(static_cast<LabelId>(i % k))};
    for (int d = 0; d < 6; ++d) s.features.push_back(rng.normal());
    ds.samples.push_back(std::move(s));
  }
  auto m = MultiHeadModel::init(6, std::vector<std::size_t>{8}, 1);
  for (LabelId l = 0; l < k; ++l) m.expand_head({1, l});
  auto p = m.flat_parameters();
  for (auto& v : p) v += 0.5 * rng.normal();
  m.set_flat_parameters(p);
  const std::vector<int> levels{1};
  const double acc = *evaluate(m, ds, levels).at(1);
  const double q = 1.0 / k;
  EXPECT_NEAR(acc, q, 3 * std::sqrt(q * (1 - q) / n));
}

TEST(EvaluateTest, AncestorMappingMatchesRecount) {
  auto tax = regular({2, 4, 8});
  auto ds = synthetic(tax, 6);
  auto m = MultiHeadModel::init(ds.feature_dim, std::vector<std::size_t>{8}, 2);
  for (LabelId id = 0; id < static_cast<LabelId>(tax->size()); ++id) {
    if (tax->level_of(id) < 3 && id != 5) m.expand_head(tax->key(id));  // leave one level-2 class unregistered
  }
  Rng rng(4);
  auto p = m.flat_parameters();
  for (auto& v : p) v += rng.normal();
  m.set_flat_parameters(p);
  const std::vector<int> levels{1, 2, 3};
  const auto acc = evaluate(m, ds, levels);

  for (int h : {1, 2}) {
    std::size_t total = 0, correct = 0;
    for (const auto& s : ds.samples) {
      LabelId a = s.finest().label;
      while (tax->level_of(a) > h) a = *tax->parent_of(a);
      if (!m.has_class(tax->key(a))) continue;
      ++total;
      const auto probs = m.forward(s.features).levels.at(h).probs;
      const auto row = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      correct += m.heads().at(h).labels[row] == a;
    }
    EXPECT_DOUBLE_EQ(*acc.at(h), static_cast<double>(correct) / static_cast<double>(total)) << "level " << h;
  }
  EXPECT_FALSE(acc.at(3).has_value());
}

TEST(RunOnlineTest, CheckpointReproducesFinalAccuracy) {
  auto tax = regular({3, 9});
  auto ds = synthetic(tax, 15);
  auto [train, test] = split(ds, 0.3, 1);
  const auto r = run_online(small_config(Method::kPlFms), train, test, 9);
  const auto model = MultiHeadModel::from_checkpoint(r.model.to_checkpoint());
  const std::vector<int> levels{1, 2};
  for (const auto& [level, acc] : evaluate(model, test, levels)) {
    EXPECT_EQ(*acc, r.log.final_accuracy.at(level));
  }
}

MetricsLog log_of(std::uint64_t seed, std::vector<std::pair<std::size_t, double>> curve, int level = 1) {
  MetricsLog log;
  log.method = "er";
  log.seed = seed;
  for (auto [t, acc] : curve) log.rows.push_back(MetricsRow{t, 1, level, acc});
  log.final_accuracy[level] = curve.back().second;
  return log;
}

TEST(SummarizeTest, SingleSeedHasZeroSpread) {
  std::vector<MetricsLog> logs{log_of(1, {{0, 0.1}, {10, 0.5}})};
  const auto s = summarize(logs);
  EXPECT_EQ(s.levels.at(1).final_mean, 0.5);
  EXPECT_EQ(s.levels.at(1).final_std, 0.0);
  EXPECT_EQ(s.seeds, std::vector<std::uint64_t>{1});
}

TEST(SummarizeTest, ConstantCurveAuc) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto log = log_of(1, {{0, nan}, {10, 0.7}, {25, 0.7}, {40, 0.7}});
  EXPECT_DOUBLE_EQ(*accuracy_auc(log, 1), 0.7);
  EXPECT_FALSE(accuracy_auc(log, 2).has_value());
  // Trapezoid: 0.2 -> 0.6 over [0, 10], flat 0.6 over [10, 30]
  auto ramp = log_of(1, {{0, 0.2}, {10, 0.6}, {30, 0.6}});
  EXPECT_NEAR(*accuracy_auc(ramp, 1), (0.4 * 10 + 0.6 * 20) / 30.0, 1e-15);
}

TEST(SummarizeTest, ThreeSeedRecompute) {
  std::vector<MetricsLog> logs{log_of(1, {{0, 0.0}, {50, 0.62}}), log_of(2, {{0, 0.1}, {50, 0.70}}),
                               log_of(3, {{0, 0.2}, {50, 0.55}})};
  const auto s = summarize(logs);
  const double mean = (0.62 + 0.70 + 0.55) / 3.0;
  const double var = ((0.62 - mean) * (0.62 - mean) + (0.70 - mean) * (0.70 - mean) + (0.55 - mean) * (0.55 - mean)) / 2.0;
  EXPECT_NEAR(s.levels.at(1).final_mean, mean, 1e-15);
  EXPECT_NEAR(s.levels.at(1).final_std, std::sqrt(var), 1e-15);
  const double auc = ((0.0 + 0.62) / 2 + (0.1 + 0.70) / 2 + (0.2 + 0.55) / 2) / 3.0;
  EXPECT_NEAR(s.levels.at(1).auc, auc, 1e-15);
}

TEST(MetricsCsvTest, RoundTrip) {
  auto tax = regular({3, 9});
  auto ds = synthetic(tax, 10);
  const auto r = run_online(small_config(Method::kBalancedRandomEr), ds, ds, 4);
  const auto text = metrics_csv(r.log);
  EXPECT_EQ(text.substr(0, text.find('\n')), kMetricsHeader);
  const auto back = parse_metrics_csv(text);
  EXPECT_EQ(back.method, "balanced_random+er");
  EXPECT_EQ(back.seed, 4u);
  ASSERT_EQ(back.rows.size(), r.log.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].t, r.log.rows[i].t);
    EXPECT_EQ(back.rows[i].level, r.log.rows[i].level);
    EXPECT_EQ(back.rows[i].task, r.log.rows[i].task);
    if (r.log.rows[i].has_value()) {
      EXPECT_EQ(back.rows[i].accuracy, r.log.rows[i].accuracy);
    } else {
      EXPECT_TRUE(std::isnan(back.rows[i].accuracy));
    }
  }
  EXPECT_EQ(metrics_csv(back), text);
}

TEST(MetricsCsvTest, RejectsBadRows) {
  const std::string header = std::string(kMetricsHeader) + "\n";
  EXPECT_EQ(kind_of([] { parse_metrics_csv("iter,task\n"); }), ErrorKind::kParseError);
  EXPECT_EQ(kind_of([&] { parse_metrics_csv(header + "1,1,1,1.5,er,0\n"); }), ErrorKind::kParseError);
  EXPECT_EQ(kind_of([&] { parse_metrics_csv(header + "1,1,1,0.5,er\n"); }), ErrorKind::kParseError);
  EXPECT_EQ(kind_of([&] { parse_metrics_csv(header + "x,1,1,0.5,er,0\n"); }), ErrorKind::kParseError);
  EXPECT_EQ(parse_metrics_csv(header + "3,1,2,nan,er,0\n").rows.size(), 1u);
}

TEST(MetricsCsvTest, FuzzedLogsRoundTrip) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    MetricsLog log;
    log.method = "pl_fms";
    log.seed = rng.next_u64();
    const std::size_t rows = rng.uniform_index(30);
    for (std::size_t i = 0; i < rows; ++i) {
      const double acc = rng.bernoulli(0.1) ? std::numeric_limits<double>::quiet_NaN() : rng.uniform01();
      log.rows.push_back(MetricsRow{rng.uniform_index(100000), 1 + static_cast<int>(rng.uniform_index(5)),
                                    1 + static_cast<int>(rng.uniform_index(5)), acc});
    }
    const auto text = metrics_csv(log);
    ASSERT_EQ(metrics_csv(parse_metrics_csv(text)), text);
  }
}

}  // namespace
}  // namespace hlecl
