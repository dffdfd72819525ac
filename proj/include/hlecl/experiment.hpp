#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/taxonomy.hpp"
#include "hlecl/text.hpp"
#include "hlecl/trainer.hpp"

namespace hlecl {

enum class DataSource { kSynthetic, kFiles };

/// A flat experiment description: run settings, data source and output location.
struct ExperimentFile {
  RunConfig run;
  DataSource data_source = DataSource::kSynthetic;
  std::string taxonomy_file;
  std::string feature_file;
  std::vector<int> synthetic_level_sizes{5, 20};
  GaussianHierarchyParams synthetic;
  double test_fraction = 0.2;
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";
  std::filesystem::path base_dir;  // directory relative paths resolve against; not serialized

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

namespace detail {

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

/// Integer parse with a floor; malformed text is a parse error, out-of-range a RangeError.
inline long long integer_at_least(std::string_view key, std::string_view value, long long lo, std::size_t line) {
  auto v = text::parse_int<long long>(value);
  if (!v) throw ParseError(line, std::string(key) + ": expected an integer, got '" + std::string(value) + "'");
  if (*v < lo) fail(ErrorKind::kRangeError, std::string(key) + " = " + std::to_string(*v) + " (minimum " + std::to_string(lo) + ")");
  return *v;
}

inline double real_in(std::string_view key, std::string_view value, double lo, double hi, bool lo_open,
                      std::size_t line) {
  auto v = text::parse_double(value);
  if (!v || std::isnan(*v)) throw ParseError(line, std::string(key) + ": expected a real, got '" + std::string(value) + "'");
  if ((lo_open ? *v <= lo : *v < lo) || *v > hi) {
    fail(ErrorKind::kRangeError, std::string(key) + " = " + std::string(value) + " outside its range");
  }
  return *v;
}

template <typename T>
std::vector<T> integer_list(std::string_view key, std::string_view value, long long lo, std::size_t line,
                            bool allow_empty) {
  std::vector<T> out;
  if (text::trim(value).empty()) {
    if (!allow_empty) throw ParseError(line, std::string(key) + ": empty list");
    return out;
  }
  for (auto part : text::split(value, ',')) out.push_back(static_cast<T>(integer_at_least(key, part, lo, line)));
  return out;
}

struct KeySpec {
  std::string_view name;
  bool sweepable;
  std::function<void(ExperimentFile&, std::string_view, std::size_t)> set;
  std::function<std::string(const ExperimentFile&)> get;
};

inline const std::vector<KeySpec>& key_specs() {
  using E = ExperimentFile;
  using SV = std::string_view;
  using std::size_t;
  static const std::vector<KeySpec> specs = {
      {"scenario", false,
       [](E& e, SV v, size_t line) {
         auto s = parse_scenario(v);
         if (!s) throw ParseError(line, "unknown scenario '" + std::string(v) + "'");
         e.run.scenario = *s;
       },
       [](const E& e) { return std::string(to_string(e.run.scenario)); }},
      {"method", false,
       [](E& e, SV v, size_t line) {
         auto m = parse_method(v);
         if (!m) throw ParseError(line, "unknown method '" + std::string(v) + "'");
         e.run.method = *m;
       },
       [](const E& e) { return std::string(to_string(e.run.method)); }},
      {"data_source", false,
       [](E& e, SV v, size_t line) {
         if (v == "synthetic") e.data_source = DataSource::kSynthetic;
         else if (v == "files") e.data_source = DataSource::kFiles;
         else throw ParseError(line, "data_source must be synthetic or files");
       },
       [](const E& e) { return std::string(e.data_source == DataSource::kSynthetic ? "synthetic" : "files"); }},
      {"taxonomy_file", false, [](E& e, SV v, size_t) { e.taxonomy_file = std::string(v); },
       [](const E& e) { return e.taxonomy_file; }},
      {"feature_file", false, [](E& e, SV v, size_t) { e.feature_file = std::string(v); },
       [](const E& e) { return e.feature_file; }},
      {"synthetic_level_sizes", false,
       [](E& e, SV v, size_t line) { e.synthetic_level_sizes = integer_list<int>("synthetic_level_sizes", v, 1, line, false); },
       [](const E& e) { return join(e.synthetic_level_sizes); }},
      {"feature_dim", false,
       [](E& e, SV v, size_t line) { e.synthetic.feature_dim = static_cast<size_t>(integer_at_least("feature_dim", v, 1, line)); },
       [](const E& e) { return std::to_string(e.synthetic.feature_dim); }},
      {"samples_per_leaf", true,
       [](E& e, SV v, size_t line) { e.synthetic.samples_per_leaf = static_cast<size_t>(integer_at_least("samples_per_leaf", v, 1, line)); },
       [](const E& e) { return std::to_string(e.synthetic.samples_per_leaf); }},
      {"parent_spread", true,
       [](E& e, SV v, size_t line) { e.synthetic.parent_spread = real_in("parent_spread", v, 0.0, 1e12, true, line); },
       [](const E& e) { return text::format_double(e.synthetic.parent_spread); }},
      {"child_spread", true,
       [](E& e, SV v, size_t line) { e.synthetic.child_spread = real_in("child_spread", v, 0.0, 1e12, true, line); },
       [](const E& e) { return text::format_double(e.synthetic.child_spread); }},
      {"noise_sigma", true,
       [](E& e, SV v, size_t line) { e.synthetic.noise_sigma = real_in("noise_sigma", v, 0.0, 1e12, false, line); },
       [](const E& e) { return text::format_double(e.synthetic.noise_sigma); }},
      {"data_seed", false,
       [](E& e, SV v, size_t line) { e.data_seed = static_cast<std::uint64_t>(integer_at_least("data_seed", v, 0, line)); },
       [](const E& e) { return std::to_string(e.data_seed); }},
      {"test_fraction", true,
       [](E& e, SV v, size_t line) {
         e.test_fraction = real_in("test_fraction", v, 0.0, 1.0, true, line);
         if (e.test_fraction >= 1.0) fail(ErrorKind::kRangeError, "test_fraction must be < 1");
       },
       [](const E& e) { return text::format_double(e.test_fraction); }},
      {"stream_batch_size", true,
       [](E& e, SV v, size_t line) { e.run.stream_batch_size = static_cast<size_t>(integer_at_least("stream_batch_size", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.stream_batch_size); }},
      {"updates_per_stream_batch", true,
       [](E& e, SV v, size_t line) { e.run.updates_per_stream_batch = real_in("updates_per_stream_batch", v, 0.0, 1e6, true, line); },
       [](const E& e) { return text::format_double(e.run.updates_per_stream_batch); }},
      {"memory_capacity", true,
       [](E& e, SV v, size_t line) { e.run.memory_capacity = static_cast<size_t>(integer_at_least("memory_capacity", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.memory_capacity); }},
      {"ramp_T", true,
       [](E& e, SV v, size_t line) { e.run.ramp_T = static_cast<size_t>(integer_at_least("ramp_T", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.ramp_T); }},
      {"learning_rate", true,
       [](E& e, SV v, size_t line) { e.run.learning_rate = real_in("learning_rate", v, 0.0, 1e6, true, line); },
       [](const E& e) { return text::format_double(e.run.learning_rate); }},
      {"eval_every", true,
       [](E& e, SV v, size_t line) { e.run.eval_every = static_cast<size_t>(integer_at_least("eval_every", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.eval_every); }},
      {"encoder_widths", false,
       [](E& e, SV v, size_t line) { e.run.encoder_widths = integer_list<size_t>("encoder_widths", v, 1, line, true); },
       [](const E& e) { return join(e.run.encoder_widths); }},
      {"importance_mode", false,
       [](E& e, SV v, size_t line) {
         if (v == "ema") e.run.importance_mode = ImportanceMode::kEma;
         else if (v == "exact") e.run.importance_mode = ImportanceMode::kExact;
         else throw ParseError(line, "importance_mode must be ema or exact");
       },
       [](const E& e) { return std::string(e.run.importance_mode == ImportanceMode::kEma ? "ema" : "exact"); }},
      {"importance_alpha", true,
       [](E& e, SV v, size_t line) { e.run.importance_alpha = real_in("importance_alpha", v, 0.0, 1.0, true, line); },
       [](const E& e) { return text::format_double(e.run.importance_alpha); }},
      {"tasks_after_first", true,
       [](E& e, SV v, size_t line) { e.run.tasks_after_first = static_cast<int>(integer_at_least("tasks_after_first", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.tasks_after_first); }},
      {"num_tasks", true,
       [](E& e, SV v, size_t line) { e.run.num_tasks = static_cast<int>(integer_at_least("num_tasks", v, 1, line)); },
       [](const E& e) { return std::to_string(e.run.num_tasks); }},
      {"seeds", false,
       [](E& e, SV v, size_t line) { e.seeds = integer_list<std::uint64_t>("seeds", v, 0, line, false); },
       [](const E& e) { return join(e.seeds); }},
      {"output_dir", false, [](E& e, SV v, size_t) { e.output_dir = std::string(v); },
       [](const E& e) { return e.output_dir; }},
  };
  return specs;
}

inline const KeySpec* find_key(std::string_view name) {
  for (const auto& spec : key_specs()) {
    if (spec.name == name) return &spec;
  }
  return nullptr;
}

}  // namespace detail

inline bool operator==(const ExperimentFile& a, const ExperimentFile& b) {
  for (const auto& spec : detail::key_specs()) {
    if (spec.get(a) != spec.get(b)) return false;
  }
  return true;
}

/// Parses flat `key = value` lines; `#` starts a comment line.
inline ExperimentFile parse_config_text(std::string_view contents) {
  ExperimentFile exp;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (auto raw : text::split(contents, '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    const auto key = text::trim(line.substr(0, eq));
    const auto value = text::trim(line.substr(eq + 1));
    const auto* spec = detail::find_key(key);
    if (!spec) fail(ErrorKind::kUnknownKey, "line " + std::to_string(line_no) + ": '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ParseError(line_no, "duplicate key '" + std::string(key) + "'");
    spec->set(exp, value, line_no);
  }
  for (std::string_view required : {"scenario", "method", "data_source"}) {
    if (!seen.count(std::string(required))) fail(ErrorKind::kMissingKey, std::string(required));
  }
  if (exp.data_source == DataSource::kFiles) {
    for (std::string_view required : {"taxonomy_file", "feature_file"}) {
      if (!seen.count(std::string(required))) fail(ErrorKind::kMissingKey, std::string(required) + " (data_source = files)");
    }
  }
  return exp;
}

inline ExperimentFile parse_config(const std::filesystem::path& path) {
  auto exp = parse_config_text(text::read_file(path));
  exp.base_dir = path.parent_path();
  return exp;
}

/// Every key, one per line, in canonical order.
inline std::string serialize_config(const ExperimentFile& exp) {
  std::string out;
  for (const auto& spec : detail::key_specs()) {
    out += std::string(spec.name) + " = " + spec.get(exp) + "\n";
  }
  return out;
}

inline bool is_sweepable(std::string_view key) {
  const auto* spec = detail::find_key(key);
  return spec && spec->sweepable;
}

inline void set_config_value(ExperimentFile& exp, std::string_view key, std::string_view value) {
  const auto* spec = detail::find_key(key);
  if (!spec) fail(ErrorKind::kUnknownKey, std::string(key));
  spec->set(exp, value, 0);
}

// ---------------------------------------------------------------------------

struct ExperimentData {
  std::shared_ptr<const Taxonomy> taxonomy;
  Dataset all;
  Dataset train;
  Dataset test;
};

inline ExperimentData load_experiment_data(const ExperimentFile& exp) {
  ExperimentData data;
  if (exp.data_source == DataSource::kSynthetic) {
    data.taxonomy = std::make_shared<const Taxonomy>(make_regular_taxonomy(exp.synthetic_level_sizes));
    auto params = exp.synthetic;
    params.seed = exp.data_seed;
    data.all = gen_hier_gaussians(data.taxonomy, params);
  } else {
    data.taxonomy = std::make_shared<const Taxonomy>(load_taxonomy_file(exp.resolve(exp.taxonomy_file)));
    data.all = load_feature_file(exp.resolve(exp.feature_file), data.taxonomy);
  }
  auto [train, test] = split(data.all, exp.test_fraction, mix_seed(exp.data_seed, 2));
  data.train = std::move(train);
  data.test = std::move(test);
  return data;
}

inline nlohmann::json summary_json(const RunSummary& summary) {
  nlohmann::json j;
  j["method"] = summary.method;
  j["seeds"] = summary.seeds;
  nlohmann::json levels = nlohmann::json::object();
  for (const auto& [level, s] : summary.levels) {
    levels[std::to_string(level)] = {{"final_mean", s.final_mean}, {"final_std", s.final_std}, {"auc", s.auc}};
  }
  j["levels"] = levels;
  return j;
}

/// Worker count: HLECL_THREADS when set, else the hardware concurrency.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HLECL_THREADS")) {
    if (auto v = text::parse_int<std::size_t>(env); v && *v > 0) n = *v;
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs every seed (in parallel up to worker_count) and returns logs in seed order.
inline std::vector<RunResult> run_seeds(const ExperimentFile& exp, const ExperimentData& data,
                                        std::span<const std::uint64_t> seeds) {
  std::vector<RunResult> logs(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        logs[i] = run_online(exp.run, data.train, data.test, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = worker_count(seeds.size());
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return logs;
}

struct RunOutputs {
  std::vector<std::filesystem::path> metrics_files;
  std::filesystem::path summary_file;
  RunSummary summary;
};

/// Writes metrics_seed<s>.csv per seed and summary.json into `out_dir`, plus
/// model_seed<s>.ckpt when `save_models` is set. On failure every file
/// written by this call is removed before rethrowing.
inline RunOutputs cmd_run(const ExperimentFile& exp, std::span<const std::uint64_t> seeds,
                          const std::filesystem::path& out_dir, bool save_models = false) {
  if (seeds.empty()) fail(ErrorKind::kConfigError, "no seeds");
  RunOutputs outputs;
  std::vector<std::filesystem::path> written;
  try {
    const auto data = load_experiment_data(exp);
    const auto results = run_seeds(exp, data, seeds);
    std::filesystem::create_directories(out_dir);
    std::vector<MetricsLog> logs;
    for (const auto& r : results) {
      auto path = out_dir / ("metrics_seed" + std::to_string(r.log.seed) + ".csv");
      text::write_file_atomic(path, metrics_csv(r.log));
      written.push_back(path);
      outputs.metrics_files.push_back(path);
      if (save_models) {
        auto model_path = out_dir / ("model_seed" + std::to_string(r.log.seed) + ".ckpt");
        text::write_file_atomic(model_path, r.model.to_checkpoint());
        written.push_back(model_path);
      }
      logs.push_back(r.log);
    }
    outputs.summary = summarize(logs);
    outputs.summary_file = out_dir / "summary.json";
    text::write_file_atomic(outputs.summary_file, summary_json(outputs.summary).dump(2) + "\n");
    written.push_back(outputs.summary_file);
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
    throw;
  }
  return outputs;
}

struct SweepRow {
  std::string value;
  RunSummary summary;
};

/// Re-runs the experiment once per value of `key`; each value gets its own
/// subdirectory of run outputs, and sweep_<key>.csv tabulates per-level results.
inline std::vector<SweepRow> cmd_sweep(const ExperimentFile& exp, std::string_view key,
                                       std::span<const std::string> values, std::span<const std::uint64_t> seeds,
                                       const std::filesystem::path& out_dir) {
  if (!is_sweepable(key)) fail(ErrorKind::kUnsweepableKey, std::string(key));
  if (values.empty()) fail(ErrorKind::kConfigError, "sweep needs at least one value");
  std::vector<ExperimentFile> variants;
  for (const auto& v : values) {
    auto variant = exp;
    set_config_value(variant, key, v);
    variants.push_back(std::move(variant));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto outputs = cmd_run(variants[i], seeds, out_dir / (std::string(key) + "=" + values[i]));
    rows.push_back(SweepRow{values[i], std::move(outputs.summary)});
  }
  std::set<int> levels;
  for (const auto& r : rows) {
    for (const auto& [level, _] : r.summary.levels) levels.insert(level);
  }
  std::string csv(key);
  for (int level : levels) {
    const auto l = "level" + std::to_string(level);
    csv += "," + l + "_final_mean," + l + "_final_std," + l + "_auc";
  }
  csv += '\n';
  for (const auto& r : rows) {
    csv += r.value;
    for (int level : levels) {
      auto it = r.summary.levels.find(level);
      if (it == r.summary.levels.end()) {
        csv += ",nan,nan,nan";
      } else {
        csv += "," + text::format_double(it->second.final_mean) + "," + text::format_double(it->second.final_std) +
               "," + text::format_double(it->second.auc);
      }
    }
    csv += '\n';
  }
  text::write_file_atomic(out_dir / ("sweep_" + std::string(key) + ".csv"), csv);
  return rows;
}

}  // namespace hlecl
