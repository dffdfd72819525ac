#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hlecl/error.hpp"
#include "hlecl/random.hpp"
#include "hlecl/taxonomy.hpp"
#include "hlecl/text.hpp"

namespace hlecl {

using SampleId = std::int64_t;

/// A feature vector with one label, or two labels at distinct levels (dual-label form).
/// Labels are kept sorted coarse to fine.
struct Sample {
  std::vector<double> features;
  std::vector<ClassKey> labels;
  SampleId sample_id = 0;

  ClassKey finest() const { return labels.back(); }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::vector<Sample> samples;
  std::shared_ptr<const Taxonomy> taxonomy;

  std::size_t size() const { return samples.size(); }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.feature_dim == b.feature_dim && a.samples == b.samples;
  }
};

/// Checks the Sample invariants against a taxonomy; returns an empty string when valid.
inline std::string sample_problem(const Sample& s, const Taxonomy& tax, std::size_t feature_dim) {
  if (s.features.size() != feature_dim) return "feature length " + std::to_string(s.features.size());
  if (s.labels.empty() || s.labels.size() > 2) return "needs 1 or 2 labels";
  for (const auto& k : s.labels) {
    if (k.label < 0 || static_cast<std::size_t>(k.label) >= tax.size() || tax.level_of(k.label) != k.level) {
      return "label " + std::to_string(k.label) + " is not at level " + std::to_string(k.level);
    }
  }
  if (s.labels.size() == 2) {
    const auto& coarse = s.labels[0];
    const auto& fine = s.labels[1];
    if (coarse.level >= fine.level) return "dual labels must be at distinct levels, coarse first";
    if (tax.ancestor_at(fine.label, coarse.level) != coarse.label) return "coarse label is not an ancestor of the fine label";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Synthetic hierarchical Gaussians

struct GaussianHierarchyParams {
  std::size_t feature_dim = 32;
  std::size_t samples_per_leaf = 100;
  /// Optional per-leaf sample counts, overriding samples_per_leaf (imbalanced data).
  std::map<LabelId, std::size_t> leaf_samples;
  double parent_spread = 4.0;
  double child_spread = 1.5;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;
};

inline void check_params(const GaussianHierarchyParams& p) {
  if (p.feature_dim == 0) fail(ErrorKind::kBadShape, "feature_dim must be >= 1");
  if (!(p.parent_spread > 0.0) || !(p.child_spread > 0.0)) fail(ErrorKind::kInvalidSpread, "spreads must be > 0");
  if (!(p.noise_sigma >= 0.0)) fail(ErrorKind::kInvalidSpread, "noise_sigma must be >= 0");
  if (p.samples_per_leaf == 0) fail(ErrorKind::kZeroSamples, "samples_per_leaf must be >= 1");
  for (const auto& [leaf, count] : p.leaf_samples) {
    if (count == 0) fail(ErrorKind::kZeroSamples, "leaf " + std::to_string(leaf) + " has 0 samples");
  }
}

/// Class means indexed by label id.
///
/// Level-1 means lie uniformly on the sphere of radius parent_spread. Each
/// deeper mean is its parent mean plus N(0, child_spread^2 / d) per coordinate,
/// so the offset norm concentrates near child_spread.
inline std::vector<std::vector<double>> gen_class_means(const Taxonomy& tax, const GaussianHierarchyParams& p) {
  check_params(p);
  Rng rng(mix_seed(p.seed, 0));
  const std::size_t d = p.feature_dim;
  const double child_scale = p.child_spread / std::sqrt(static_cast<double>(d));
  std::vector<std::vector<double>> means(tax.size(), std::vector<double>(d));
  for (LabelId id = 0; static_cast<std::size_t>(id) < tax.size(); ++id) {
    auto& mean = means[static_cast<std::size_t>(id)];
    if (auto parent = tax.parent_of(id)) {
      const auto& base = means[static_cast<std::size_t>(*parent)];
      for (std::size_t i = 0; i < d; ++i) mean[i] = base[i] + child_scale * rng.normal();
    } else {
      double norm = 0.0;
      while (norm == 0.0) {
        norm = 0.0;
        for (auto& v : mean) {
          v = rng.normal();
          norm += v * v;
        }
        norm = std::sqrt(norm);
      }
      for (auto& v : mean) v *= p.parent_spread / norm;
    }
  }
  return means;
}

/// Samples every leaf label around its class mean; each sample carries the leaf label.
inline Dataset gen_hier_gaussians(std::shared_ptr<const Taxonomy> tax, const GaussianHierarchyParams& p) {
  const auto means = gen_class_means(*tax, p);
  Rng rng(mix_seed(p.seed, 1));
  Dataset ds;
  ds.feature_dim = p.feature_dim;
  ds.taxonomy = tax;
  SampleId next_id = 0;
  for (LabelId leaf : tax->leaves()) {
    auto it = p.leaf_samples.find(leaf);
    const std::size_t count = it == p.leaf_samples.end() ? p.samples_per_leaf : it->second;
    const auto& mean = means[static_cast<std::size_t>(leaf)];
    for (std::size_t s = 0; s < count; ++s) {
      Sample sample;
      sample.features.resize(p.feature_dim);
      for (std::size_t i = 0; i < p.feature_dim; ++i) {
        sample.features[i] = p.noise_sigma == 0.0 ? mean[i] : mean[i] + p.noise_sigma * rng.normal();
      }
      sample.labels = {tax->key(leaf)};
      sample.sample_id = next_id++;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Feature file: `dim=<d>` header, then `id<TAB>level:name[,level:name]<TAB>v1,...,vd`.

inline std::string format_labels(const Sample& s, const Taxonomy& tax) {
  std::string out;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s.labels[i].level);
    out += ':';
    out += tax.name(s.labels[i].label);
  }
  return out;
}

inline std::string to_feature_text(const Dataset& ds) {
  std::string out = "dim=" + std::to_string(ds.feature_dim) + "\n";
  for (const auto& s : ds.samples) {
    out += std::to_string(s.sample_id);
    out += '\t';
    out += format_labels(s, *ds.taxonomy);
    out += '\t';
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      if (i) out += ',';
      out += text::format_double(s.features[i]);
    }
    out += '\n';
  }
  return out;
}

inline void write_feature_file(const std::filesystem::path& path, const Dataset& ds) {
  text::write_file_atomic(path, to_feature_text(ds));
}

/// Parses `level:name[,level:name]` against a taxonomy.
inline std::vector<ClassKey> parse_labels(std::string_view field, const Taxonomy& tax, std::size_t line_no) {
  std::vector<ClassKey> labels;
  for (auto part : text::split(field, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string_view::npos) throw ParseError(line_no, "label '" + std::string(part) + "' lacks level:");
    const auto level = text::parse_int<int>(part.substr(0, colon));
    if (!level) throw ParseError(line_no, "bad level in '" + std::string(part) + "'");
    const auto name = text::trim(part.substr(colon + 1));
    const auto id = tax.find(name);
    if (!id || tax.level_of(*id) != *level) {
      fail(ErrorKind::kUnknownLabel, "line " + std::to_string(line_no) + ": no label '" + std::string(name) +
                                         "' at level " + std::to_string(*level));
    }
    labels.push_back(ClassKey{*level, *id});
  }
  std::sort(labels.begin(), labels.end());
  return labels;
}

inline Dataset parse_feature_text(std::string_view contents, std::shared_ptr<const Taxonomy> tax) {
  Dataset ds;
  ds.taxonomy = tax;
  auto lines = text::split(contents, '\n');
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<SampleId> seen;
  for (auto line : lines) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty()) continue;
    if (!have_header) {
      if (line.substr(0, 4) != "dim=") throw ParseError(line_no, "expected dim=<d> header");
      const auto dim = text::parse_int<std::size_t>(line.substr(4));
      if (!dim || *dim == 0) throw ParseError(line_no, "bad dimension");
      ds.feature_dim = *dim;
      have_header = true;
      continue;
    }
    auto fields = text::split(line, '\t');
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    Sample s;
    const auto id = text::parse_int<SampleId>(fields[0]);
    if (!id) throw ParseError(line_no, "bad sample id");
    s.sample_id = *id;
    if (!seen.insert(*id).second) throw ParseError(line_no, "duplicate sample id " + std::to_string(*id));
    s.labels = parse_labels(fields[1], *tax, line_no);
    for (auto v : text::split(fields[2], ',')) {
      const auto value = text::parse_double(v);
      if (!value) throw ParseError(line_no, "bad real '" + std::string(v) + "'");
      s.features.push_back(*value);
    }
    if (s.features.size() != ds.feature_dim) {
      fail(ErrorKind::kDimMismatch, "line " + std::to_string(line_no) + ": " + std::to_string(s.features.size()) +
                                        " values, expected " + std::to_string(ds.feature_dim));
    }
    if (auto problem = sample_problem(s, *tax, ds.feature_dim); !problem.empty()) throw ParseError(line_no, problem);
    ds.samples.push_back(std::move(s));
  }
  if (!have_header) throw ParseError(1, "missing dim=<d> header");
  return ds;
}

inline Dataset load_feature_file(const std::filesystem::path& path, std::shared_ptr<const Taxonomy> tax) {
  return parse_feature_text(text::read_file(path), std::move(tax));
}

// ---------------------------------------------------------------------------

/// Stratified split by finest label. Each class with at least two samples
/// keeps at least one sample on each side. Both outputs preserve input order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::kFractionOutOfRange, "test_fraction must lie in (0, 1)");
  }
  std::map<ClassKey, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class[ds.samples[i].finest()].push_back(i);

  Rng rng(seed);
  std::vector<bool> is_test(ds.samples.size(), false);
  for (auto& [cls, idx] : by_class) {
    const std::size_t n = idx.size();
    auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    if (n >= 2) k = std::clamp<std::size_t>(k, 1, n - 1);
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t j = 0; j < k; ++j) is_test[idx[j]] = true;
  }
  Dataset train{ds.feature_dim, {}, ds.taxonomy};
  Dataset test{ds.feature_dim, {}, ds.taxonomy};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace hlecl
