#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/memory.hpp"
#include "hlecl/model.hpp"
#include "hlecl/random.hpp"
#include "hlecl/sampler.hpp"
#include "hlecl/stream.hpp"
#include "hlecl/text.hpp"

namespace hlecl {

enum class Method { kPlFms, kEr, kBalancedRandomEr, kClibLike };

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::kPlFms: return "pl_fms";
    case Method::kEr: return "er";
    case Method::kBalancedRandomEr: return "balanced_random+er";
    case Method::kClibLike: return "clib_like";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::kPlFms, Method::kEr, Method::kBalancedRandomEr, Method::kClibLike}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

struct RunConfig {
  Scenario scenario = Scenario::kSingleDepthSingleLabel;
  Method method = Method::kPlFms;
  std::size_t stream_batch_size = 16;
  double updates_per_stream_batch = 3.0;
  std::size_t memory_capacity = 200;
  std::size_t ramp_T = 5000;
  double learning_rate = 0.05;
  std::size_t eval_every = 100;
  std::vector<std::size_t> encoder_widths{64};
  ImportanceMode importance_mode = ImportanceMode::kEma;
  double importance_alpha = 0.1;
  int tasks_after_first = 2;  // single-depth scenarios
  int num_tasks = 5;          // disjoint scenario
  bool record_batches = false;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::kConfigError, what); };
    if (stream_batch_size < 1) bad("stream_batch_size must be >= 1");
    if (!(updates_per_stream_batch > 0.0) || !std::isfinite(updates_per_stream_batch)) {
      bad("updates_per_stream_batch must be > 0");
    }
    if (memory_capacity < 1) bad("memory_capacity must be >= 1");
    if (ramp_T < 1) bad("ramp_T must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
    if (eval_every < 1) bad("eval_every must be >= 1");
    if (!(importance_alpha > 0.0 && importance_alpha <= 1.0)) bad("importance_alpha must lie in (0, 1]");
    for (auto w : encoder_widths) {
      if (w < 1) bad("encoder widths must be >= 1");
    }
  }
};

struct MetricsRow {
  std::size_t t = 0;
  int task = 0;
  int level = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN: no class introduced yet

  bool has_value() const { return !std::isnan(accuracy); }
};

struct MetricsLog {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::map<int, double> final_accuracy;
  double wall_time_seconds = 0.0;

  std::size_t rows_at_level(int level) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [level](const MetricsRow& r) { return r.level == level; }));
  }
};

/// Composition of one training batch, kept when RunConfig::record_batches is set.
struct BatchRecord {
  std::size_t buffer_first_t = 0;
  std::size_t buffer_last_t = 0;
  std::size_t memory_entries = 0;
  std::vector<ClassKey> stream_classes;  // finest class of each stream-tagged entry
  std::vector<SampleId> stream_ids;
};

struct RunResult {
  MetricsLog log;
  MultiHeadModel model;
  std::vector<BatchRecord> batches;
  std::size_t memory_size = 0;
  std::vector<Sample> memory_slots;       // final memory contents, slot order
  std::vector<double> memory_importance;  // tracker value per slot
};

/// Builds the scenario's task stream from the training split.
inline TaskStream make_stream(const RunConfig& config, const Dataset& train, std::uint64_t seed) {
  switch (config.scenario) {
    case Scenario::kSingleDepthSingleLabel: return make_single_depth_stream(train, false, config.tasks_after_first, seed);
    case Scenario::kSingleDepthDualLabel: return make_single_depth_stream(train, true, config.tasks_after_first, seed);
    case Scenario::kMultiDepth: return make_multi_depth_stream(train, seed);
    case Scenario::kDisjoint: return make_disjoint_stream(train, config.num_tasks, seed);
  }
  fail(ErrorKind::kConfigError, "unknown scenario");
}

/// Accuracy per requested level over test samples whose level-h ancestor is a registered class.
/// Levels without registered classes map to nullopt.
inline std::map<int, std::optional<double>> evaluate(const MultiHeadModel& model, const Dataset& test,
                                                     std::span<const int> levels) {
  const Taxonomy& tax = *test.taxonomy;
  std::map<int, std::size_t> total, correct;
  for (const auto& s : test.samples) {
    const ClassKey leaf = s.finest();
    std::map<int, LabelId> predictions;
    bool predicted = false;
    for (int h : levels) {
      if (h > leaf.level) continue;
      const LabelId truth = tax.ancestor_at(leaf.label, h);
      if (!model.has_class(ClassKey{h, truth})) continue;
      if (!predicted) {
        predictions = model.predict_levels(s.features);
        predicted = true;
      }
      ++total[h];
      if (predictions.at(h) == truth) ++correct[h];
    }
  }
  std::map<int, std::optional<double>> out;
  for (int h : levels) {
    if (model.class_count(h) == 0 || total[h] == 0) {
      out[h] = std::nullopt;
    } else {
      out[h] = static_cast<double>(correct[h]) / static_cast<double>(total[h]);
    }
  }
  return out;
}

/// The online loop over a prepared stream.
///
/// Samples are consumed in buffers of stream_batch_size. New classes grow the
/// heads and get their first-seen iteration, which is the stream position of
/// the first sample in the buffer. Each full buffer triggers the configured
/// number of gradient steps and is then pushed into memory. Evaluation runs
/// after every eval_every samples, at the end of the stream, and just before
/// each task starts.
inline RunResult run_online(const RunConfig& config, const TaskStream& stream, const Dataset& test,
                            std::uint64_t seed) {
  config.validate();
  if (stream.items.empty()) fail(ErrorKind::kConfigError, "empty stream");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = stream.items.size();

  RunResult result;
  result.log.method = std::string(to_string(config.method));
  result.log.seed = seed;
  MultiHeadModel& model = result.model;
  model = MultiHeadModel::init(stream.items.front().features.size(), config.encoder_widths, mix_seed(seed, 11));
  RehearsalMemory memory(config.memory_capacity);
  ImportanceTracker tracker(config.importance_alpha, config.importance_mode);
  FmsState fms(config.ramp_T);
  Rng rng(mix_seed(seed, 12));

  std::set<int> level_set;
  for (const auto& task : stream.tasks) {
    for (const auto& c : task.introduced) level_set.insert(c.level);
  }
  const std::vector<int> levels(level_set.begin(), level_set.end());

  std::set<std::size_t> eval_points;
  for (std::size_t c = config.eval_every; c < n; c += config.eval_every) eval_points.insert(c);
  eval_points.insert(n);
  for (const auto& task : stream.tasks) eval_points.insert(task.start_index - 1);

  std::size_t consumed = 0;
  auto run_eval = [&]() {
    const int task = consumed == 0 ? 0 : stream.task_of(consumed);
    for (const auto& [level, acc] : evaluate(model, test, levels)) {
      result.log.rows.push_back(MetricsRow{consumed, task, level, acc.value_or(std::numeric_limits<double>::quiet_NaN())});
    }
  };

  std::vector<Sample> buffer;
  std::size_t buffer_clock = 0;
  std::size_t n_seen = 0;
  double step_credit = 0.0;

  auto train_buffer = [&]() {
    step_credit += config.updates_per_stream_batch;
    const auto steps = static_cast<std::size_t>(std::floor(step_credit + 1e-9));
    step_credit -= static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      Batch batch;
      switch (config.method) {
        case Method::kPlFms: batch = fms_build_batch(buffer, memory, fms, buffer_clock, rng); break;
        case Method::kEr:
        case Method::kBalancedRandomEr: batch = er_build_batch(buffer, memory, rng); break;
        case Method::kClibLike:
          if (memory.empty()) continue;  // nothing stored yet
          batch = memory_only_batch(memory, 2 * config.stream_batch_size, rng);
          break;
      }
      if (config.record_batches) {
        BatchRecord rec{buffer_clock, consumed, batch.count(Source::kMemory), {}, {}};
        for (const auto& e : batch.entries) {
          if (e.source != Source::kStream) continue;
          rec.stream_classes.push_back(e.sample.finest());
          rec.stream_ids.push_back(e.sample.sample_id);
        }
        result.batches.push_back(std::move(rec));
      }
      const StepResult step = model.sgd_step(batch, config.learning_rate);
      if (config.importance_mode == ImportanceMode::kExact) {
        for (const auto& e : batch.entries) {
          if (e.slot) tracker.set(*e.slot, exact_importance(memory, model, *e.slot, config.learning_rate));
        }
      } else {
        update_importance(tracker, batch, step);
      }
    }
    for (auto& sample : buffer) {
      ++n_seen;
      InsertOutcome outcome;
      switch (config.method) {
        case Method::kPlFms: outcome = pl_insert(memory, tracker, model, std::move(sample)); break;
        case Method::kEr: outcome = reservoir_insert(memory, std::move(sample), n_seen, rng); break;
        case Method::kBalancedRandomEr: outcome = balanced_random_insert(memory, std::move(sample), rng); break;
        case Method::kClibLike: outcome = importance_balanced_insert(memory, tracker, std::move(sample)); break;
      }
      if (outcome.stored && (config.method == Method::kEr || config.method == Method::kBalancedRandomEr)) {
        tracker.on_store(*outcome.stored, outcome.evicted.has_value());
      }
    }
    buffer.clear();
  };

  if (eval_points.count(0)) run_eval();
  StreamCursor cursor(stream);
  while (auto ev = cursor.next()) {
    try {
      consumed = ev->t;
      if (buffer.empty()) buffer_clock = ev->t;
      for (const auto& c : ev->sample->labels) {
        if (!model.has_class(c)) model.expand_head(c);
        fms.note_first_seen(c, buffer_clock);
      }
      buffer.push_back(*ev->sample);
      if (buffer.size() == config.stream_batch_size || ev->t == n) train_buffer();
      if (eval_points.count(ev->t)) run_eval();
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (at t=" + std::to_string(ev->t) + ", task " +
                                std::to_string(ev->task) + ")");
    }
  }

  for (const auto& row : result.log.rows) {
    if (row.t == n && row.has_value()) result.log.final_accuracy[row.level] = row.accuracy;
  }
  result.memory_size = memory.size();
  result.memory_slots = memory.slots();
  result.memory_importance = tracker.values();
  result.memory_importance.resize(memory.size(), 0.0);
  result.log.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

/// Builds the stream from the training split (seeded from `seed`) and runs it.
inline RunResult run_online(const RunConfig& config, const Dataset& train, const Dataset& test, std::uint64_t seed) {
  config.validate();
  return run_online(config, make_stream(config, train, mix_seed(seed, 10)), test, seed);
}

// ---------------------------------------------------------------------------
// Summaries and exports

struct LevelSummary {
  double final_mean = 0.0;
  double final_std = 0.0;
  double auc = 0.0;
};

struct RunSummary {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::map<int, LevelSummary> levels;
};

/// Area under the accuracy curve over iterations, normalized by the span so a constant curve maps to itself.
inline std::optional<double> accuracy_auc(const MetricsLog& log, int level) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : log.rows) {
    if (r.level == level && r.has_value()) pts.emplace_back(static_cast<double>(r.t), r.accuracy);
  }
  if (pts.empty()) return std::nullopt;
  if (pts.size() == 1 || pts.back().first == pts.front().first) return pts.back().second;
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += 0.5 * (pts[i].second + pts[i - 1].second) * (pts[i].first - pts[i - 1].first);
  }
  return area / (pts.back().first - pts.front().first);
}

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

inline RunSummary summarize(std::span<const MetricsLog> logs) {
  RunSummary summary;
  if (logs.empty()) return summary;
  summary.method = logs.front().method;
  std::map<int, std::vector<double>> finals, aucs;
  for (const auto& log : logs) {
    summary.seeds.push_back(log.seed);
    for (const auto& [level, acc] : log.final_accuracy) finals[level].push_back(acc);
    std::set<int> levels;
    for (const auto& r : log.rows) levels.insert(r.level);
    for (int level : levels) {
      if (auto a = accuracy_auc(log, level)) aucs[level].push_back(*a);
    }
  }
  for (const auto& [level, values] : finals) {
    auto [mean, sd] = mean_std(values);
    summary.levels[level] = LevelSummary{mean, sd, mean_std(aucs[level]).first};
  }
  return summary;
}

inline constexpr std::string_view kMetricsHeader = "iter,task,level,accuracy,method,seed";

inline std::string metrics_csv(const MetricsLog& log) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : log.rows) {
    out += std::to_string(r.t) + ',' + std::to_string(r.task) + ',' + std::to_string(r.level) + ',' +
           text::format_double(r.accuracy) + ',' + log.method + ',' + std::to_string(log.seed) + '\n';
  }
  return out;
}

/// Parses a metrics CSV back into rows; enforces the header and column types.
inline MetricsLog parse_metrics_csv(std::string_view contents) {
  MetricsLog log;
  std::size_t line_no = 0;
  for (auto line : text::split(contents, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kMetricsHeader) throw ParseError(1, "unexpected metrics header");
      continue;
    }
    auto f = text::split(line, ',');
    if (f.size() != 6) throw ParseError(line_no, "expected 6 columns");
    auto t = text::parse_int<std::size_t>(f[0]);
    auto task = text::parse_int<int>(f[1]);
    auto level = text::parse_int<int>(f[2]);
    auto acc = text::parse_double(f[3]);
    auto seed = text::parse_int<std::uint64_t>(f[5]);
    if (!t || !task || !level || !acc || !seed) throw ParseError(line_no, "bad field");
    if (!std::isnan(*acc) && (*acc < 0.0 || *acc > 1.0)) throw ParseError(line_no, "accuracy outside [0, 1]");
    log.method = std::string(f[4]);
    log.seed = *seed;
    log.rows.push_back(MetricsRow{*t, *task, *level, *acc});
  }
  return log;
}

}  // namespace hlecl
