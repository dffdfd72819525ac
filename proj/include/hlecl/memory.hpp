#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/model.hpp"
#include "hlecl/random.hpp"
#include "hlecl/text.hpp"

namespace hlecl {

/// Bounded rehearsal store with a per-class slot index.
///
/// A dual-label sample is indexed under both of its classes. Slots are
/// stable: an eviction overwrites the evicted slot in place.
class RehearsalMemory {
 public:
  explicit RehearsalMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) fail(ErrorKind::kInvalidArgument, "memory capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  bool full() const { return slots_.size() >= capacity_; }

  const Sample& at(std::size_t slot) const { return slots_.at(slot); }
  const std::vector<Sample>& slots() const { return slots_; }
  const std::map<ClassKey, std::set<std::size_t>>& class_index() const { return class_index_; }

  std::size_t class_size(ClassKey c) const {
    auto it = class_index_.find(c);
    return it == class_index_.end() ? 0 : it->second.size();
  }

  /// Appends into a free slot and returns its index.
  std::size_t append(Sample s) {
    if (full()) fail(ErrorKind::kInvalidArgument, "append to a full memory");
    slots_.push_back(std::move(s));
    index(slots_.size() - 1);
    return slots_.size() - 1;
  }

  void replace(std::size_t slot, Sample s) {
    unindex(slot);
    slots_.at(slot) = std::move(s);
    index(slot);
  }

  /// The class with the most stored samples; ties go to the smaller label id.
  ClassKey modal_class() const {
    if (class_index_.empty()) fail(ErrorKind::kEmptyMemory, "memory is empty");
    const std::pair<const ClassKey, std::set<std::size_t>>* best = nullptr;
    for (const auto& entry : class_index_) {
      if (!best || entry.second.size() > best->second.size() ||
          (entry.second.size() == best->second.size() && entry.first.label < best->first.label)) {
        best = &entry;
      }
    }
    return best->first;
  }

  /// Largest class once `incoming` is counted alongside the stored samples;
  /// ties go to the smaller label id.
  ClassKey modal_class_with(const Sample& incoming) const {
    std::map<ClassKey, std::size_t> counts;
    for (const auto& [c, slots] : class_index_) counts[c] = slots.size();
    for (const auto& c : incoming.labels) ++counts[c];
    if (counts.empty()) fail(ErrorKind::kEmptyMemory, "memory is empty");
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second || (it->second == best->second && it->first.label < best->first.label)) best = it;
    }
    return best->first;
  }

  /// True when the class index exactly mirrors the slots and capacity holds.
  bool audit() const {
    if (slots_.size() > capacity_) return false;
    std::map<ClassKey, std::set<std::size_t>> rebuilt;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      for (const auto& c : slots_[i].labels) rebuilt[c].insert(i);
    }
    return rebuilt == class_index_;
  }

 private:
  void index(std::size_t slot) {
    for (const auto& c : slots_[slot].labels) class_index_[c].insert(slot);
  }
  void unindex(std::size_t slot) {
    for (const auto& c : slots_.at(slot).labels) {
      auto it = class_index_.find(c);
      it->second.erase(slot);
      if (it->second.empty()) class_index_.erase(it);
    }
  }

  std::size_t capacity_;
  std::vector<Sample> slots_;
  std::map<ClassKey, std::set<std::size_t>> class_index_;
};

enum class ImportanceMode { kEma, kExact };

/// Per-slot loss-importance values, kept parallel to the memory slots.
class ImportanceTracker {
 public:
  explicit ImportanceTracker(double ema_alpha = 0.1, ImportanceMode mode = ImportanceMode::kEma)
      : alpha_(ema_alpha), mode_(mode) {
    if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) fail(ErrorKind::kInvalidArgument, "ema_alpha must lie in (0, 1]");
  }

  double alpha() const { return alpha_; }
  ImportanceMode mode() const { return mode_; }
  const std::vector<double>& values() const { return values_; }
  double value(std::size_t slot) const { return values_.at(slot); }
  void set(std::size_t slot, double v) {
    if (slot >= values_.size()) values_.resize(slot + 1, 0.0);
    values_[slot] = v;
  }

  /// Mean importance over the given slots, 0 when there are none.
  double mean_excluding(std::optional<std::size_t> skip) const {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (skip && *skip == i) continue;
      total += values_[i];
      ++n;
    }
    return n ? total / static_cast<double>(n) : 0.0;
  }

  /// Seeds a freshly written slot with the mean of the other slots.
  void on_store(std::size_t slot, bool replaced) {
    set(slot, mean_excluding(replaced ? std::optional<std::size_t>(slot) : std::nullopt));
  }

 private:
  double alpha_;
  ImportanceMode mode_;
  std::vector<double> values_;
};

struct InsertOutcome {
  std::optional<std::size_t> stored;   // slot now holding the new sample
  std::optional<std::size_t> evicted;  // set when an old sample was overwritten
};

// ---------------------------------------------------------------------------
// Pseudo-label guided eviction

/// Most-voted class at a level; ties go to the smaller label id.
inline LabelId vote_winner(const std::map<LabelId, std::size_t>& votes) {
  LabelId best = votes.begin()->first;
  std::size_t best_count = votes.begin()->second;
  for (const auto& [label, count] : votes) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

/// Slots eligible for eviction: the modal class plus, for every other level
/// with classes, the class the model predicts most often on the modal class's samples.
inline std::set<std::size_t> pl_candidates(const RehearsalMemory& memory, const MultiHeadModel& model) {
  const ClassKey modal = memory.modal_class();
  const auto& members = memory.class_index().at(modal);
  std::set<std::size_t> candidates = members;

  std::map<int, std::map<LabelId, std::size_t>> votes;
  for (std::size_t slot : members) {
    for (const auto& [level, label] : model.predict_levels(memory.at(slot).features)) {
      if (level != modal.level) ++votes[level][label];
    }
  }
  for (const auto& [level, counts] : votes) {
    auto it = memory.class_index().find(ClassKey{level, vote_winner(counts)});
    if (it != memory.class_index().end()) candidates.insert(it->second.begin(), it->second.end());
  }
  return candidates;
}

/// Least-important candidate slot; ties go to the smaller slot.
inline std::size_t pl_select_removal(const RehearsalMemory& memory, const ImportanceTracker& tracker,
                                     const MultiHeadModel& model) {
  if (memory.empty()) fail(ErrorKind::kEmptyMemory, "nothing to evict");
  std::optional<std::size_t> best;
  for (std::size_t slot : pl_candidates(memory, model)) {
    if (!best || tracker.value(slot) < tracker.value(*best)) best = slot;
  }
  return *best;
}

inline InsertOutcome pl_insert(RehearsalMemory& memory, ImportanceTracker& tracker, const MultiHeadModel& model,
                               Sample sample) {
  for (const auto& c : sample.labels) {
    if (!model.has_class(c)) fail(ErrorKind::kUnregisteredClass, "label " + std::to_string(c.label));
  }
  if (!memory.full()) {
    const auto slot = memory.append(std::move(sample));
    tracker.on_store(slot, false);
    return {slot, std::nullopt};
  }
  const auto slot = pl_select_removal(memory, tracker, model);
  memory.replace(slot, std::move(sample));
  tracker.on_store(slot, true);
  return {slot, slot};
}

/// Importance-based eviction from the largest class, counting the incoming
/// sample (no pseudo-label expansion). The sample is dropped when its own
/// class wins but has nothing stored yet.
inline InsertOutcome importance_balanced_insert(RehearsalMemory& memory, ImportanceTracker& tracker, Sample sample) {
  if (!memory.full()) {
    const auto slot = memory.append(std::move(sample));
    tracker.on_store(slot, false);
    return {slot, std::nullopt};
  }
  const auto it = memory.class_index().find(memory.modal_class_with(sample));
  if (it == memory.class_index().end()) return {};
  std::optional<std::size_t> best;
  for (std::size_t slot : it->second) {
    if (!best || tracker.value(slot) < tracker.value(*best)) best = slot;
  }
  memory.replace(*best, std::move(sample));
  tracker.on_store(*best, true);
  return {*best, best};
}

// ---------------------------------------------------------------------------
// Baselines

/// Reservoir sampling; `n_seen` counts every stream sample so far, this one included.
inline InsertOutcome reservoir_insert(RehearsalMemory& memory, Sample sample, std::size_t n_seen, Rng& rng) {
  if (!memory.full()) return {memory.append(std::move(sample)), std::nullopt};
  const std::size_t j = rng.uniform_index(std::max(n_seen, memory.capacity()));
  if (j >= memory.capacity()) return {};
  memory.replace(j, std::move(sample));
  return {j, j};
}

/// Evicts a uniformly random slot of the largest class, counting the incoming sample.
inline InsertOutcome balanced_random_insert(RehearsalMemory& memory, Sample sample, Rng& rng) {
  if (!memory.full()) return {memory.append(std::move(sample)), std::nullopt};
  const auto found = memory.class_index().find(memory.modal_class_with(sample));
  if (found == memory.class_index().end()) return {};
  const auto& members = found->second;
  auto it = members.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(rng.uniform_index(members.size())));
  const std::size_t slot = *it;
  memory.replace(slot, std::move(sample));
  return {slot, slot};
}

// ---------------------------------------------------------------------------
// Importance measurement

/// EMA update from a training step: H <- (1 - a) H + a (before - after) for memory-sourced entries.
inline void update_importance(ImportanceTracker& tracker, const Batch& batch, const StepResult& step) {
  for (std::size_t i = 0; i < batch.entries.size(); ++i) {
    const auto& e = batch.entries[i];
    if (e.source != Source::kMemory || !e.slot) continue;
    const double decrease = step.loss_before[i] - step.loss_after[i];
    tracker.set(*e.slot, (1.0 - tracker.alpha()) * tracker.value(*e.slot) + tracker.alpha() * decrease);
  }
}

inline double memory_mean_loss(const RehearsalMemory& memory, const MultiHeadModel& model) {
  double total = 0.0;
  for (const auto& s : memory.slots()) total += model.sample_loss(s);
  return total / static_cast<double>(memory.size());
}

/// Drop in memory-averaged loss after one gradient step on slot `slot` alone.
/// The model is copied; the caller's parameters are untouched.
inline double exact_importance(const RehearsalMemory& memory, const MultiHeadModel& model, std::size_t slot,
                               double learning_rate) {
  if (memory.empty()) fail(ErrorKind::kEmptyMemory, "importance of an empty memory");
  const double before = memory_mean_loss(memory, model);
  MultiHeadModel stepped = model;
  Batch single;
  single.entries.push_back(BatchEntry{memory.at(slot), Source::kMemory, slot, 1.0});
  stepped.sgd_step(single, learning_rate);
  return before - memory_mean_loss(memory, stepped);
}

/// Audit dump: `slot<TAB>sample_id<TAB>labels<TAB>importance`.
inline std::string memory_dump(const RehearsalMemory& memory, const ImportanceTracker& tracker, const Taxonomy& tax) {
  std::string out;
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const auto& s = memory.at(i);
    const double h = i < tracker.values().size() ? tracker.value(i) : 0.0;
    out += std::to_string(i) + '\t' + std::to_string(s.sample_id) + '\t' + format_labels(s, tax) + '\t' +
           text::format_double(h) + '\n';
  }
  return out;
}

}  // namespace hlecl
