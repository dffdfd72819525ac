// Command-line front end: run, sweep, gen-data, validate, stream.
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hlecl/hlecl.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

std::vector<std::uint64_t> parse_seeds(const std::string& text, const hlecl::ExperimentFile& exp) {
  if (text.empty()) return exp.seeds;
  std::vector<std::uint64_t> seeds;
  for (auto part : hlecl::text::split(text, ',')) {
    auto v = hlecl::text::parse_int<std::uint64_t>(part);
    if (!v) hlecl::fail(hlecl::ErrorKind::kConfigError, "bad seed '" + std::string(part) + "'");
    seeds.push_back(*v);
  }
  return seeds;
}

std::filesystem::path out_dir(const std::string& flag, const hlecl::ExperimentFile& exp) {
  return flag.empty() ? exp.resolve(exp.output_dir) : std::filesystem::path(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online continual learning on hierarchical label expansion"};
  app.require_subcommand(1);

  std::string config_path, seeds_text, out_flag, sweep_text, taxonomy_path, feature_path;
  bool save_models = false;
  std::uint64_t stream_seed = 1;

  auto* run = app.add_subcommand("run", "Run one experiment for each seed");
  run->add_option("--config", config_path, "Experiment file")->required()->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seeds)");
  run->add_option("--out", out_flag, "Output directory (default: config output_dir)");
  run->add_flag("--save-models", save_models, "Also write model checkpoints");

  auto* sweep = app.add_subcommand("sweep", "Run an experiment across values of one key");
  sweep->add_option("--config", config_path, "Experiment file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--sweep", sweep_text, "key=v1,v2,...")->required();
  sweep->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seeds)");
  sweep->add_option("--out", out_flag, "Output directory (default: config output_dir)");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic taxonomy and feature files of a config");
  gen->add_option("--config", config_path, "Experiment file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_flag, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check a config, or taxonomy and feature files");
  validate->add_option("--config", config_path, "Experiment file")->check(CLI::ExistingFile);
  validate->add_option("--taxonomy", taxonomy_path, "Taxonomy file")->check(CLI::ExistingFile);
  validate->add_option("--features", feature_path, "Feature file (needs --taxonomy)")->check(CLI::ExistingFile);

  auto* stream = app.add_subcommand("stream", "Write the task-stream manifest of a config");
  stream->add_option("--config", config_path, "Experiment file")->required()->check(CLI::ExistingFile);
  stream->add_option("--seed", stream_seed, "Run seed");
  stream->add_option("--out", out_flag, "Manifest path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  hlecl::ExperimentFile exp;
  try {
    if (!config_path.empty()) exp = hlecl::parse_config(config_path);
    if (*validate && config_path.empty() && taxonomy_path.empty()) {
      hlecl::fail(hlecl::ErrorKind::kConfigError, "validate needs --config or --taxonomy");
    }
    if (*validate && !feature_path.empty() && taxonomy_path.empty()) {
      hlecl::fail(hlecl::ErrorKind::kConfigError, "--features needs --taxonomy");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }

  try {
    if (*run) {
      const auto seeds = parse_seeds(seeds_text, exp);
      auto outputs = hlecl::cmd_run(exp, seeds, out_dir(out_flag, exp), save_models);
      for (const auto& p : outputs.metrics_files) std::cout << "wrote " << p.string() << "\n";
      std::cout << "wrote " << outputs.summary_file.string() << "\n";
      for (const auto& [level, s] : outputs.summary.levels) {
        std::cout << "level " << level << ": final " << s.final_mean << " +- " << s.final_std << ", auc " << s.auc
                  << "\n";
      }
    } else if (*sweep) {
      const auto eq = sweep_text.find('=');
      if (eq == std::string::npos) hlecl::fail(hlecl::ErrorKind::kConfigError, "--sweep expects key=v1,v2,...");
      const std::string key = sweep_text.substr(0, eq);
      if (!hlecl::is_sweepable(key)) hlecl::fail(hlecl::ErrorKind::kUnsweepableKey, key);
      std::vector<std::string> values;
      for (auto v : hlecl::text::split(std::string_view(sweep_text).substr(eq + 1), ',')) {
        values.emplace_back(hlecl::text::trim(v));
      }
      const auto seeds = parse_seeds(seeds_text, exp);
      const auto dir = out_dir(out_flag, exp);
      auto rows = hlecl::cmd_sweep(exp, key, values, seeds, dir);
      std::cout << "wrote " << (dir / ("sweep_" + key + ".csv")).string() << " (" << rows.size() << " rows)\n";
    } else if (*gen) {
      const auto data = hlecl::load_experiment_data(exp);
      std::filesystem::create_directories(out_flag);
      hlecl::text::write_file_atomic(std::filesystem::path(out_flag) / "taxonomy.tsv", data.taxonomy->to_text());
      hlecl::write_feature_file(std::filesystem::path(out_flag) / "features.tsv", data.all);
      std::cout << "wrote " << data.taxonomy->size() << " labels and " << data.all.size() << " samples to "
                << out_flag << "\n";
    } else if (*validate) {
      if (!config_path.empty()) {
        exp.run.validate();
        const auto data = hlecl::load_experiment_data(exp);
        const auto s = hlecl::make_stream(exp.run, data.train, 0);
        const auto problems = hlecl::stream_problems(s);
        for (const auto& p : problems) std::cerr << "stream: " << p << "\n";
        if (!problems.empty()) return kRuntimeExit;
        std::cout << "config ok: " << data.all.size() << " samples, " << s.tasks.size() << " tasks\n";
      }
      if (!taxonomy_path.empty()) {
        auto tax = std::make_shared<const hlecl::Taxonomy>(hlecl::load_taxonomy_file(taxonomy_path));
        std::cout << "taxonomy ok: " << tax->num_levels() << " levels, " << tax->size() << " labels\n";
        if (!feature_path.empty()) {
          const auto ds = hlecl::load_feature_file(feature_path, tax);
          std::cout << "features ok: " << ds.size() << " samples, dim " << ds.feature_dim << "\n";
        }
      }
    } else if (*stream) {
      const auto data = hlecl::load_experiment_data(exp);
      const auto s = hlecl::make_stream(exp.run, data.train, hlecl::mix_seed(stream_seed, 10));
      hlecl::text::write_file_atomic(out_flag, hlecl::stream_manifest(s));
      std::cout << "wrote " << s.size() << " stream items to " << out_flag << "\n";
    }
  } catch (const hlecl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const auto kind = e.kind();
    const bool config_kind = kind == hlecl::ErrorKind::kConfigError || kind == hlecl::ErrorKind::kUnsweepableKey ||
                             kind == hlecl::ErrorKind::kUnknownKey || kind == hlecl::ErrorKind::kRangeError ||
                             kind == hlecl::ErrorKind::kMissingKey;
    return config_kind ? kConfigExit : kRuntimeExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return 0;
}
