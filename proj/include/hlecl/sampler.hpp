#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "hlecl/error.hpp"
#include "hlecl/memory.hpp"
#include "hlecl/model.hpp"
#include "hlecl/random.hpp"

namespace hlecl {

/// First-seen iteration per class plus the ramp length T of the stream-acceptance schedule.
class FmsState {
 public:
  explicit FmsState(std::size_t ramp = 5000) : ramp_(ramp) {
    if (ramp == 0) fail(ErrorKind::kInvalidArgument, "ramp T must be >= 1");
  }

  std::size_t ramp() const { return ramp_; }
  const std::map<ClassKey, std::size_t>& first_seen() const { return first_seen_; }

  /// Records t for a class the first time only.
  void note_first_seen(ClassKey c, std::size_t t) {
    if (t == 0) fail(ErrorKind::kInvalidArgument, "iterations start at 1");
    first_seen_.emplace(c, t);
  }

  /// min((t - T_c) / T, 1). Unseen classes count as seen at t.
  double acceptance_probability(ClassKey c, std::size_t t) const {
    auto it = first_seen_.find(c);
    if (it == first_seen_.end() || t <= it->second) return 0.0;
    return std::min(static_cast<double>(t - it->second) / static_cast<double>(ramp_), 1.0);
  }

 private:
  std::size_t ramp_;
  std::map<ClassKey, std::size_t> first_seen_;
};

namespace detail {

/// Draws memory slots uniformly without replacement from those not yet taken.
class SlotDrawer {
 public:
  explicit SlotDrawer(std::size_t n) : free_(n) { std::iota(free_.begin(), free_.end(), std::size_t{0}); }

  bool exhausted() const { return used_ >= free_.size(); }

  std::size_t draw(Rng& rng) {
    const std::size_t pick = used_ + rng.uniform_index(free_.size() - used_);
    std::swap(free_[used_], free_[pick]);
    return free_[used_++];
  }

 private:
  std::vector<std::size_t> free_;
  std::size_t used_ = 0;
};

inline void add_memory(Batch& batch, const RehearsalMemory& memory, std::size_t slot) {
  batch.entries.push_back(BatchEntry{memory.at(slot), Source::kMemory, slot, 1.0});
}

inline void add_stream(Batch& batch, const Sample& s) {
  batch.entries.push_back(BatchEntry{s, Source::kStream, std::nullopt, 1.0});
}

}  // namespace detail

/// Flexible memory sampling.
///
/// The batch opens with min(|S_t|, |M|) memory samples. Each stream sample is
/// then kept with probability min((t - T_c) / T, 1), where c is its finest
/// label; a rejected one is swapped for a fresh memory sample, or kept when
/// memory has nothing left to give.
inline Batch fms_build_batch(std::span<const Sample> stream_buffer, const RehearsalMemory& memory,
                             const FmsState& state, std::size_t t, Rng& rng) {
  if (stream_buffer.empty() && memory.empty()) fail(ErrorKind::kEmptyBatch, "no stream or memory samples");
  Batch batch;
  detail::SlotDrawer drawer(memory.size());
  const std::size_t from_memory = std::min(stream_buffer.size(), memory.size());
  for (std::size_t i = 0; i < from_memory; ++i) detail::add_memory(batch, memory, drawer.draw(rng));
  for (const auto& s : stream_buffer) {
    const bool accept = rng.bernoulli(state.acceptance_probability(s.finest(), t));
    if (accept || drawer.exhausted()) {
      detail::add_stream(batch, s);
    } else {
      detail::add_memory(batch, memory, drawer.draw(rng));
    }
  }
  return batch;
}

/// Experience replay: min(|S_t|, |M|) memory samples, then all of S_t.
inline Batch er_build_batch(std::span<const Sample> stream_buffer, const RehearsalMemory& memory, Rng& rng) {
  if (stream_buffer.empty()) fail(ErrorKind::kEmptyBatch, "empty stream buffer");
  Batch batch;
  detail::SlotDrawer drawer(memory.size());
  const std::size_t from_memory = std::min(stream_buffer.size(), memory.size());
  for (std::size_t i = 0; i < from_memory; ++i) detail::add_memory(batch, memory, drawer.draw(rng));
  for (const auto& s : stream_buffer) detail::add_stream(batch, s);
  return batch;
}

inline Batch memory_only_batch(const RehearsalMemory& memory, std::size_t batch_size, Rng& rng) {
  if (memory.empty()) fail(ErrorKind::kEmptyMemory, "memory-only batch from an empty memory");
  Batch batch;
  detail::SlotDrawer drawer(memory.size());
  const std::size_t n = std::min(batch_size, memory.size());
  for (std::size_t i = 0; i < n; ++i) detail::add_memory(batch, memory, drawer.draw(rng));
  return batch;
}

}  // namespace hlecl
