#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/random.hpp"
#include "hlecl/taxonomy.hpp"
#include "hlecl/text.hpp"

namespace hlecl {

enum class Source { kStream, kMemory };

struct BatchEntry {
  Sample sample;
  Source source = Source::kStream;
  std::optional<std::size_t> slot;  // memory slot for memory-sourced entries
  double weight = 1.0;
};

struct Batch {
  std::vector<BatchEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::size_t count(Source s) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                  [s](const BatchEntry& e) { return e.source == s; }));
  }
};

struct LevelOutput {
  std::vector<double> logits;
  std::vector<double> probs;
};

/// Per-level outputs for one input; only levels with at least one class appear.
struct ForwardResult {
  std::vector<double> embedding;
  std::map<int, LevelOutput> levels;
};

struct LossResult {
  double mean = 0.0;
  std::vector<double> per_sample;
};

struct StepResult {
  std::vector<double> loss_before;
  std::vector<double> loss_after;
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;
};

/// Classifier for one hierarchy level; row i scores `labels[i]`.
struct Head {
  std::vector<LabelId> labels;
  std::vector<double> weight;  // rows x embed_dim, row-major
  std::vector<double> bias;

  std::size_t rows() const { return labels.size(); }
};

/// Shared rectifier MLP encoder with one growing softmax head per level.
class MultiHeadModel {
 public:
  MultiHeadModel() = default;

  /// He-uniform weights, zero biases, no classes yet. Empty `hidden` makes the encoder the identity.
  static MultiHeadModel init(std::size_t feature_dim, std::span<const std::size_t> hidden, std::uint64_t seed) {
    if (feature_dim == 0) fail(ErrorKind::kBadShape, "feature_dim must be >= 1");
    MultiHeadModel m;
    m.feature_dim_ = feature_dim;
    Rng rng(seed);
    std::size_t in = feature_dim;
    for (std::size_t width : hidden) {
      if (width == 0) fail(ErrorKind::kBadShape, "layer widths must be >= 1");
      DenseLayer layer{in, width, std::vector<double>(in * width), std::vector<double>(width, 0.0)};
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      for (auto& w : layer.weight) w = rng.uniform(-bound, bound);
      m.encoder_.push_back(std::move(layer));
      in = width;
    }
    return m;
  }

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t embed_dim() const { return encoder_.empty() ? feature_dim_ : encoder_.back().out; }
  const std::vector<DenseLayer>& encoder() const { return encoder_; }
  const std::map<int, Head>& heads() const { return heads_; }

  std::size_t class_count(int level) const {
    auto it = heads_.find(level);
    return it == heads_.end() ? 0 : it->second.rows();
  }

  std::optional<std::size_t> row_of(ClassKey c) const {
    auto it = class_row_.find(c);
    if (it == class_row_.end()) return std::nullopt;
    return it->second;
  }

  bool has_class(ClassKey c) const { return class_row_.count(c) > 0; }

  /// Levels that currently have at least one class.
  std::vector<int> active_levels() const {
    std::vector<int> out;
    for (const auto& [level, head] : heads_) out.push_back(level);
    return out;
  }

  /// Appends a zero row for a new class; existing rows are untouched.
  void expand_head(ClassKey c) {
    if (c.level < 1) fail(ErrorKind::kLevelOutOfRange, "level " + std::to_string(c.level));
    if (has_class(c)) fail(ErrorKind::kAlreadyRegistered, "class " + std::to_string(c.label));
    Head& head = heads_[c.level];
    class_row_[c] = head.rows();
    head.labels.push_back(c.label);
    head.weight.resize(head.weight.size() + embed_dim(), 0.0);
    head.bias.push_back(0.0);
  }

  ForwardResult forward(std::span<const double> x) const {
    if (heads_.empty()) fail(ErrorKind::kNoClassesAtLevel, "model has no classes");
    ForwardResult out;
    out.embedding = encode(x, nullptr);
    for (const auto& [level, head] : heads_) out.levels.emplace(level, head_output(head, out.embedding));
    return out;
  }

  /// Class with maximal probability at `level`; ties go to the smaller row.
  LabelId predict(std::span<const double> x, int level) const {
    auto it = heads_.find(level);
    if (it == heads_.end()) fail(ErrorKind::kNoClassesAtLevel, "level " + std::to_string(level));
    return predict_from(head_output(it->second, encode(x, nullptr)), it->second);
  }

  /// Predictions at several levels sharing one encoder pass.
  std::map<int, LabelId> predict_levels(std::span<const double> x) const {
    std::map<int, LabelId> out;
    if (heads_.empty()) return out;
    const auto z = encode(x, nullptr);
    for (const auto& [level, head] : heads_) out[level] = predict_from(head_output(head, z), head);
    return out;
  }

  /// Sum over the sample's labels of -log p^level_label(x).
  double sample_loss(const Sample& s) const {
    check_registered(s);
    const auto z = encode(s.features, nullptr);
    double loss = 0.0;
    for (const auto& c : s.labels) {
      const Head& head = heads_.at(c.level);
      loss -= log_prob(head, z, class_row_.at(c));
    }
    return loss;
  }

  /// Weighted mean of per-sample losses (weights default to 1).
  LossResult loss(const Batch& batch) const {
    LossResult r;
    double total = 0.0;
    for (const auto& e : batch.entries) {
      r.per_sample.push_back(sample_loss(e.sample));
      total += e.weight * r.per_sample.back();
    }
    r.mean = batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
    return r;
  }

  /// Gradient of loss(batch).mean, returned as a model-shaped container.
  MultiHeadModel gradient(const Batch& batch) const {
    if (batch.empty()) fail(ErrorKind::kEmptyBatch, "gradient of an empty batch");
    MultiHeadModel grad = zeros_like();
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<std::vector<double>> acts;
    for (const auto& e : batch.entries) {
      check_registered(e.sample);
      const auto z = encode(e.sample.features, &acts);
      std::vector<double> dz(z.size(), 0.0);
      for (const auto& c : e.sample.labels) {
        const Head& head = heads_.at(c.level);
        Head& ghead = grad.heads_.at(c.level);
        const auto probs = head_output(head, z).probs;
        const std::size_t target = class_row_.at(c);
        const std::size_t d = z.size();
        for (std::size_t r = 0; r < head.rows(); ++r) {
          const double g = (probs[r] - (r == target ? 1.0 : 0.0)) * e.weight * scale;
          if (g == 0.0) continue;
          ghead.bias[r] += g;
          const double* w = &head.weight[r * d];
          double* gw = &ghead.weight[r * d];
          for (std::size_t i = 0; i < d; ++i) {
            gw[i] += g * z[i];
            dz[i] += g * w[i];
          }
        }
      }
      // acts[l] is the input of encoder layer l; acts.back() is the embedding.
      for (std::size_t l = encoder_.size(); l-- > 0;) {
        const DenseLayer& layer = encoder_[l];
        DenseLayer& glayer = grad.encoder_[l];
        const auto& input = acts[l];
        const auto& output = acts[l + 1];
        std::vector<double> dinput(layer.in, 0.0);
        for (std::size_t o = 0; o < layer.out; ++o) {
          if (output[o] <= 0.0) continue;  // rectifier inactive
          const double g = dz[o];
          if (g == 0.0) continue;
          glayer.bias[o] += g;
          const double* w = &layer.weight[o * layer.in];
          double* gw = &glayer.weight[o * layer.in];
          for (std::size_t i = 0; i < layer.in; ++i) {
            gw[i] += g * input[i];
            dinput[i] += g * w[i];
          }
        }
        dz = std::move(dinput);
      }
    }
    return grad;
  }

  /// One gradient-descent step on the batch mean loss.
  ///
  /// Returns each sample's loss before and after the update. A non-finite
  /// gradient throws NaNGradient and leaves the model unchanged.
  StepResult sgd_step(const Batch& batch, double learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      fail(ErrorKind::kInvalidArgument, "learning rate must be finite and >= 0");
    }
    StepResult result;
    result.loss_before = loss(batch).per_sample;
    MultiHeadModel grad = gradient(batch);
    bool finite = true;
    grad.for_each_block([&](std::span<double> block) {
      for (double g : block) finite = finite && std::isfinite(g);
    });
    if (!finite) fail(ErrorKind::kNaNGradient, "non-finite gradient; step skipped");
    if (learning_rate > 0.0) axpy(-learning_rate, grad);
    result.loss_after = loss(batch).per_sample;
    return result;
  }

  /// this += alpha * other, over identically shaped models.
  void axpy(double alpha, const MultiHeadModel& other) {
    auto theirs = other.flat_parameters();
    std::size_t i = 0;
    for_each_block([&](std::span<double> block) {
      for (double& v : block) v += alpha * theirs[i++];
    });
  }

  MultiHeadModel zeros_like() const {
    MultiHeadModel z = *this;
    z.for_each_block([](std::span<double> block) { std::fill(block.begin(), block.end(), 0.0); });
    return z;
  }

  /// Visits parameter blocks in a fixed order: encoder layers (weight, bias), then heads by level.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (auto& layer : encoder_) {
      fn(std::span<double>(layer.weight));
      fn(std::span<double>(layer.bias));
    }
    for (auto& [level, head] : heads_) {
      fn(std::span<double>(head.weight));
      fn(std::span<double>(head.bias));
    }
  }

  std::vector<double> flat_parameters() const {
    std::vector<double> out;
    const_cast<MultiHeadModel*>(this)->for_each_block(
        [&](std::span<double> block) { out.insert(out.end(), block.begin(), block.end()); });
    return out;
  }

  void set_flat_parameters(std::span<const double> values) {
    std::size_t i = 0;
    for_each_block([&](std::span<double> block) {
      if (i + block.size() > values.size()) fail(ErrorKind::kBadShape, "parameter vector too short");
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i), block.size(), block.begin());
      i += block.size();
    });
    if (i != values.size()) fail(ErrorKind::kBadShape, "parameter vector too long");
  }

  std::size_t parameter_count() const { return flat_parameters().size(); }

  friend bool operator==(const MultiHeadModel& a, const MultiHeadModel& b) {
    if (a.feature_dim_ != b.feature_dim_ || a.encoder_.size() != b.encoder_.size() || a.class_row_ != b.class_row_) {
      return false;
    }
    for (std::size_t l = 0; l < a.encoder_.size(); ++l) {
      if (a.encoder_[l].weight != b.encoder_[l].weight || a.encoder_[l].bias != b.encoder_[l].bias) return false;
    }
    if (a.heads_.size() != b.heads_.size()) return false;
    for (const auto& [level, head] : a.heads_) {
      auto it = b.heads_.find(level);
      if (it == b.heads_.end() || head.labels != it->second.labels || head.weight != it->second.weight ||
          head.bias != it->second.bias) {
        return false;
      }
    }
    return true;
  }

  std::string to_checkpoint() const;
  static MultiHeadModel from_checkpoint(std::string_view contents);

 private:
  void check_registered(const Sample& s) const {
    if (s.features.size() != feature_dim_) {
      fail(ErrorKind::kDimMismatch, "sample has " + std::to_string(s.features.size()) + " features, model expects " +
                                        std::to_string(feature_dim_));
    }
    for (const auto& c : s.labels) {
      if (!has_class(c)) {
        fail(ErrorKind::kUnregisteredClass, "level " + std::to_string(c.level) + " label " + std::to_string(c.label));
      }
    }
  }

  /// Encoder pass. When `acts` is given it receives every layer input plus the final embedding.
  std::vector<double> encode(std::span<const double> x, std::vector<std::vector<double>>* acts) const {
    if (x.size() != feature_dim_) {
      fail(ErrorKind::kDimMismatch, "input has " + std::to_string(x.size()) + " features, model expects " +
                                        std::to_string(feature_dim_));
    }
    std::vector<double> a(x.begin(), x.end());
    if (acts) acts->clear();
    for (const auto& layer : encoder_) {
      std::vector<double> next(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        double s = layer.bias[o];
        const double* w = &layer.weight[o * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * a[i];
        next[o] = s > 0.0 ? s : 0.0;
      }
      if (acts) acts->push_back(std::move(a));
      a = std::move(next);
    }
    if (acts) acts->push_back(a);
    return a;
  }

  static std::vector<double> logits_of(const Head& head, std::span<const double> z) {
    std::vector<double> logits(head.rows());
    const std::size_t d = z.size();
    for (std::size_t r = 0; r < head.rows(); ++r) {
      double s = head.bias[r];
      const double* w = &head.weight[r * d];
      for (std::size_t i = 0; i < d; ++i) s += w[i] * z[i];
      logits[r] = s;
    }
    return logits;
  }

  static LevelOutput head_output(const Head& head, std::span<const double> z) {
    LevelOutput out;
    out.logits = logits_of(head, z);
    const double mx = *std::max_element(out.logits.begin(), out.logits.end());
    out.probs.resize(out.logits.size());
    double total = 0.0;
    for (std::size_t r = 0; r < out.logits.size(); ++r) total += out.probs[r] = std::exp(out.logits[r] - mx);
    for (auto& p : out.probs) p /= total;
    return out;
  }

  static double log_prob(const Head& head, std::span<const double> z, std::size_t row) {
    const auto logits = logits_of(head, z);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double l : logits) total += std::exp(l - mx);
    return logits[row] - mx - std::log(total);
  }

  static LabelId predict_from(const LevelOutput& out, const Head& head) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < out.probs.size(); ++r) {
      if (out.probs[r] > out.probs[best]) best = r;
    }
    return head.labels[best];
  }

  std::size_t feature_dim_ = 0;
  std::vector<DenseLayer> encoder_;
  std::map<int, Head> heads_;
  std::map<ClassKey, std::size_t> class_row_;
};

// ---------------------------------------------------------------------------
// Checkpoint text format (version 1):
//
//   HLECL-MODEL 1
//   feature_dim <d>
//   layers <L>
//   layer <in> <out>            (L times, each followed by a weight line and a bias line)
//   heads <count>
//   head <level> <rows> <embed_dim>
//   labels <id>...              (then a weight line and a bias line)
//
// Value lines hold space-separated reals in shortest round-trip form, row-major.

namespace detail {

inline void append_values(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += text::format_double(values[i]);
  }
  out += '\n';
}

class LineReader {
 public:
  explicit LineReader(std::string_view contents) : lines_(text::split(contents, '\n')) {}

  std::vector<std::string_view> fields(std::string_view expected_tag, std::size_t expected_count) {
    auto f = words(next_line());
    if (f.size() != expected_count || (!expected_tag.empty() && f[0] != expected_tag)) {
      throw ParseError(line_, "expected '" + std::string(expected_tag) + "' record");
    }
    return f;
  }

  std::vector<double> values(std::size_t expected) {
    const auto line = next_line();
    std::vector<double> out;
    if (expected == 0) return out;
    for (auto w : words(line)) {
      auto v = text::parse_double(w);
      if (!v) throw ParseError(line_, "bad real '" + std::string(w) + "'");
      out.push_back(*v);
    }
    if (out.size() != expected) throw ParseError(line_, "expected " + std::to_string(expected) + " values");
    return out;
  }

  std::size_t number(std::string_view w) const {
    auto v = text::parse_int<std::size_t>(w);
    if (!v) throw ParseError(line_, "bad integer '" + std::string(w) + "'");
    return *v;
  }

  std::vector<std::string_view> words(std::string_view line) {
    std::vector<std::string_view> out;
    for (auto w : text::split(text::trim(line), ' ')) {
      if (!w.empty()) out.push_back(w);
    }
    return out;
  }

 private:
  std::string_view next_line() {
    if (line_ >= lines_.size()) throw ParseError(line_, "unexpected end of checkpoint");
    return lines_[line_++];
  }

  std::vector<std::string_view> lines_;
  std::size_t line_ = 0;
};

}  // namespace detail

inline std::string MultiHeadModel::to_checkpoint() const {
  std::string out = "HLECL-MODEL 1\n";
  out += "feature_dim " + std::to_string(feature_dim_) + "\n";
  out += "layers " + std::to_string(encoder_.size()) + "\n";
  for (const auto& layer : encoder_) {
    out += "layer " + std::to_string(layer.in) + " " + std::to_string(layer.out) + "\n";
    detail::append_values(out, layer.weight);
    detail::append_values(out, layer.bias);
  }
  out += "heads " + std::to_string(heads_.size()) + "\n";
  for (const auto& [level, head] : heads_) {
    out += "head " + std::to_string(level) + " " + std::to_string(head.rows()) + " " + std::to_string(embed_dim()) + "\n";
    out += "labels";
    for (LabelId id : head.labels) out += " " + std::to_string(id);
    out += "\n";
    detail::append_values(out, head.weight);
    detail::append_values(out, head.bias);
  }
  return out;
}

inline MultiHeadModel MultiHeadModel::from_checkpoint(std::string_view contents) {
  detail::LineReader in(contents);
  in.fields("HLECL-MODEL", 2);
  MultiHeadModel m;
  m.feature_dim_ = in.number(in.fields("feature_dim", 2)[1]);
  const std::size_t layers = in.number(in.fields("layers", 2)[1]);
  std::size_t prev = m.feature_dim_;
  for (std::size_t l = 0; l < layers; ++l) {
    auto f = in.fields("layer", 3);
    DenseLayer layer{in.number(f[1]), in.number(f[2]), {}, {}};
    if (layer.in != prev || layer.out == 0) fail(ErrorKind::kBadShape, "layer shapes do not chain");
    layer.weight = in.values(layer.in * layer.out);
    layer.bias = in.values(layer.out);
    prev = layer.out;
    m.encoder_.push_back(std::move(layer));
  }
  const std::size_t heads = in.number(in.fields("heads", 2)[1]);
  for (std::size_t h = 0; h < heads; ++h) {
    auto f = in.fields("head", 4);
    const int level = static_cast<int>(in.number(f[1]));
    const std::size_t rows = in.number(f[2]);
    if (in.number(f[3]) != m.embed_dim() || rows == 0) fail(ErrorKind::kBadShape, "head shape mismatch");
    auto labels = in.fields("labels", rows + 1);
    Head head;
    for (std::size_t r = 0; r < rows; ++r) {
      auto id = text::parse_int<LabelId>(labels[r + 1]);
      if (!id) fail(ErrorKind::kBadShape, "bad label id in checkpoint");
      m.class_row_[ClassKey{level, *id}] = r;
      head.labels.push_back(*id);
    }
    head.weight = in.values(rows * m.embed_dim());
    head.bias = in.values(rows);
    m.heads_.emplace(level, std::move(head));
  }
  return m;
}

}  // namespace hlecl
