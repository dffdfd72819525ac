#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/random.hpp"
#include "hlecl/taxonomy.hpp"

namespace hlecl {

enum class Scenario { kSingleDepthSingleLabel, kSingleDepthDualLabel, kMultiDepth, kDisjoint };

constexpr std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::kSingleDepthSingleLabel: return "single_depth_single_label";
    case Scenario::kSingleDepthDualLabel: return "single_depth_dual_label";
    case Scenario::kMultiDepth: return "multi_depth";
    case Scenario::kDisjoint: return "disjoint";
  }
  return "unknown";
}

inline std::optional<Scenario> parse_scenario(std::string_view s) {
  for (auto v : {Scenario::kSingleDepthSingleLabel, Scenario::kSingleDepthDualLabel, Scenario::kMultiDepth,
                 Scenario::kDisjoint}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

struct TaskSpec {
  int index = 1;                      // 1-based task number
  std::vector<ClassKey> introduced;   // classes first labeled in this task, sorted
  std::size_t start_index = 1;        // 1-based stream position of the task's first item
};

/// An ordered online stream split into consecutive task spans.
struct TaskStream {
  std::vector<Sample> items;
  std::vector<TaskSpec> tasks;
  Scenario scenario = Scenario::kDisjoint;
  std::uint64_t seed = 0;
  std::shared_ptr<const Taxonomy> taxonomy;

  std::size_t size() const { return items.size(); }

  /// Task index k with t(k) <= t < t(k+1), for 1-based t.
  int task_of(std::size_t t) const {
    auto it = std::upper_bound(tasks.begin(), tasks.end(), t,
                               [](std::size_t v, const TaskSpec& spec) { return v < spec.start_index; });
    return it == tasks.begin() ? 0 : std::prev(it)->index;
  }

  /// Last stream position of task k.
  std::size_t task_end(int k) const {
    const auto i = static_cast<std::size_t>(k);
    return i < tasks.size() ? tasks[i].start_index - 1 : items.size();
  }
};

struct StreamEvent {
  const Sample* sample = nullptr;
  std::size_t t = 0;  // 1-based
  int task = 0;
};

/// Forward-only reader over a stream; independent per consumer.
class StreamCursor {
 public:
  explicit StreamCursor(const TaskStream& stream) : stream_(&stream) {}

  /// The next item, or nullopt at end of stream.
  std::optional<StreamEvent> next() {
    if (pos_ >= stream_->items.size()) return std::nullopt;
    ++pos_;
    while (task_pos_ + 1 < stream_->tasks.size() && stream_->tasks[task_pos_ + 1].start_index <= pos_) ++task_pos_;
    return StreamEvent{&stream_->items[pos_ - 1], pos_, stream_->tasks[task_pos_].index};
  }

  std::size_t position() const { return pos_; }

 private:
  const TaskStream* stream_;
  std::size_t pos_ = 0;
  std::size_t task_pos_ = 0;
};

namespace detail {

inline void require_leaf_labeled(const Dataset& ds) {
  for (const auto& s : ds.samples) {
    if (s.labels.size() != 1 || !ds.taxonomy->is_leaf(s.labels[0].label)) {
      fail(ErrorKind::kInvalidArgument, "sample " + std::to_string(s.sample_id) + " is not leaf-labeled");
    }
  }
}

/// Groups sample indices by their finest label, in label order.
inline std::map<ClassKey, std::vector<std::size_t>> by_leaf(const Dataset& ds) {
  std::map<ClassKey, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) out[ds.samples[i].finest()].push_back(i);
  return out;
}

/// Shuffles each task and lays the tasks out back to back.
inline TaskStream assemble(std::vector<std::vector<Sample>> per_task, Scenario scenario, std::uint64_t seed,
                           std::shared_ptr<const Taxonomy> tax, Rng& rng) {
  TaskStream stream;
  stream.scenario = scenario;
  stream.seed = seed;
  stream.taxonomy = std::move(tax);
  for (std::size_t k = 0; k < per_task.size(); ++k) {
    auto& items = per_task[k];
    if (items.empty()) fail(ErrorKind::kInsufficientSamples, "task " + std::to_string(k + 1) + " has no samples");
    rng.shuffle(std::span<Sample>(items));
    TaskSpec spec;
    spec.index = static_cast<int>(k + 1);
    spec.start_index = stream.items.size() + 1;
    std::set<ClassKey> introduced;
    for (auto& s : items) {
      introduced.insert(s.finest());
      stream.items.push_back(std::move(s));
    }
    spec.introduced.assign(introduced.begin(), introduced.end());
    stream.tasks.push_back(std::move(spec));
  }
  return stream;
}

inline Sample relabeled(const Sample& s, std::vector<ClassKey> labels) {
  Sample out = s;
  out.labels = std::move(labels);
  return out;
}

}  // namespace detail

/// Two-level expansion: task 1 teaches every parent, later tasks expand groups of parents to their children.
///
/// Single-label mode halves each leaf's instances between task 1 (parent
/// label) and the expansion task (child label), so no instance repeats.
/// Dual-label mode reuses every instance: parent-labeled in task 1 and
/// parent+child labeled in its expansion task.
inline TaskStream make_single_depth_stream(const Dataset& ds, bool dual_label, int tasks_after_first,
                                           std::uint64_t seed) {
  const Taxonomy& tax = *ds.taxonomy;
  if (tax.num_levels() != 2) fail(ErrorKind::kNotTwoLevels, "taxonomy has " + std::to_string(tax.num_levels()) + " levels");
  if (tasks_after_first < 1) fail(ErrorKind::kInvalidArgument, "tasks_after_first must be >= 1");
  auto parents = std::vector<LabelId>(tax.level_labels(1).begin(), tax.level_labels(1).end());
  if (static_cast<std::size_t>(tasks_after_first) > parents.size()) {
    fail(ErrorKind::kTooManyTasks, std::to_string(tasks_after_first) + " expansion tasks for " +
                                       std::to_string(parents.size()) + " parents");
  }
  detail::require_leaf_labeled(ds);

  Rng rng(seed);
  rng.shuffle(std::span<LabelId>(parents));
  std::map<LabelId, std::size_t> task_of_parent;  // 0-based index into expansion tasks
  for (std::size_t i = 0; i < parents.size(); ++i) task_of_parent[parents[i]] = i % static_cast<std::size_t>(tasks_after_first);

  std::vector<std::vector<Sample>> per_task(static_cast<std::size_t>(tasks_after_first) + 1);
  for (auto& [leaf, indices] : detail::by_leaf(ds)) {
    if (leaf.level != 2) fail(ErrorKind::kInvalidArgument, "leaf " + tax.name(leaf.label) + " is not at level 2");
    const LabelId parent = tax.ancestor_at(leaf.label, 1);
    const ClassKey parent_key{1, parent};
    auto& expansion = per_task[1 + task_of_parent.at(parent)];
    rng.shuffle(std::span<std::size_t>(indices));
    const std::size_t first_share = dual_label ? indices.size() : indices.size() / 2;
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const Sample& s = ds.samples[indices[j]];
      if (j < first_share) per_task[0].push_back(detail::relabeled(s, {parent_key}));
      if (dual_label) {
        expansion.push_back(detail::relabeled(s, {parent_key, leaf}));
      } else if (j >= first_share) {
        expansion.push_back(detail::relabeled(s, {leaf}));
      }
    }
  }
  return detail::assemble(std::move(per_task),
                          dual_label ? Scenario::kSingleDepthDualLabel : Scenario::kSingleDepthSingleLabel, seed,
                          ds.taxonomy, rng);
}

/// One task per level: task h carries level-h labels. Each leaf's instances
/// are dealt round-robin (random phase) over the levels the leaf reaches.
inline TaskStream make_multi_depth_stream(const Dataset& ds, std::uint64_t seed) {
  const Taxonomy& tax = *ds.taxonomy;
  detail::require_leaf_labeled(ds);
  const int levels = tax.num_levels();
  Rng rng(seed);
  std::vector<std::vector<Sample>> per_task(static_cast<std::size_t>(levels));
  for (auto& [leaf, indices] : detail::by_leaf(ds)) {
    rng.shuffle(std::span<std::size_t>(indices));
    const auto reach = static_cast<std::size_t>(leaf.level);
    const std::size_t phase = rng.uniform_index(reach);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const int h = static_cast<int>((phase + j) % reach) + 1;
      per_task[static_cast<std::size_t>(h - 1)].push_back(
          detail::relabeled(ds.samples[indices[j]], {ClassKey{h, tax.ancestor_at(leaf.label, h)}}));
    }
  }
  for (int h = 1; h <= levels; ++h) {
    std::set<LabelId> covered;
    for (const auto& s : per_task[static_cast<std::size_t>(h - 1)]) covered.insert(s.labels[0].label);
    for (LabelId id : tax.level_labels(h)) {
      if (!covered.count(id)) {
        fail(ErrorKind::kInsufficientSamples, "level-" + std::to_string(h) + " label " + tax.name(id) + " gets no instances");
      }
    }
  }
  return detail::assemble(std::move(per_task), Scenario::kMultiDepth, seed, ds.taxonomy, rng);
}

/// Classic class-incremental split: leaf classes are shuffled and dealt round-robin to tasks.
inline TaskStream make_disjoint_stream(const Dataset& ds, int num_tasks, std::uint64_t seed) {
  if (num_tasks < 1) fail(ErrorKind::kInvalidArgument, "num_tasks must be >= 1");
  auto groups = detail::by_leaf(ds);
  std::vector<ClassKey> leaves;
  for (const auto& [leaf, _] : groups) leaves.push_back(leaf);
  if (static_cast<std::size_t>(num_tasks) > leaves.size()) {
    fail(ErrorKind::kTooManyTasks, std::to_string(num_tasks) + " tasks for " + std::to_string(leaves.size()) + " classes");
  }
  Rng rng(seed);
  rng.shuffle(std::span<ClassKey>(leaves));
  std::vector<std::vector<Sample>> per_task(static_cast<std::size_t>(num_tasks));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto& task = per_task[i % static_cast<std::size_t>(num_tasks)];
    for (std::size_t idx : groups.at(leaves[i])) task.push_back(detail::relabeled(ds.samples[idx], {leaves[i]}));
  }
  return detail::assemble(std::move(per_task), Scenario::kDisjoint, seed, ds.taxonomy, rng);
}

/// Lists every violated stream invariant; empty when the stream is well formed.
inline std::vector<std::string> stream_problems(const TaskStream& stream) {
  std::vector<std::string> problems;
  const Taxonomy& tax = *stream.taxonomy;
  if (stream.tasks.empty()) return {"no tasks"};
  if (stream.tasks.front().start_index != 1) problems.push_back("first task does not start at t=1");
  for (std::size_t k = 1; k < stream.tasks.size(); ++k) {
    if (stream.tasks[k].start_index <= stream.tasks[k - 1].start_index) problems.push_back("start indices not increasing");
  }
  if (stream.tasks.back().start_index > stream.items.size()) problems.push_back("last task is empty");

  std::set<ClassKey> introduced_so_far;
  std::map<SampleId, int> task_of_sample;
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    const auto& spec = stream.tasks[k];
    for (const auto& c : spec.introduced) {
      if (!introduced_so_far.insert(c).second) problems.push_back("class reintroduced in task " + std::to_string(spec.index));
    }
    const std::set<ClassKey> declared(spec.introduced.begin(), spec.introduced.end());
    std::set<ClassKey> seen;
    for (std::size_t t = spec.start_index; t <= stream.task_end(spec.index); ++t) {
      const Sample& s = stream.items[t - 1];
      const auto where = "t=" + std::to_string(t) + ": ";
      const bool dual = stream.scenario == Scenario::kSingleDepthDualLabel && spec.index > 1;
      if (s.labels.size() != (dual ? 2u : 1u)) problems.push_back(where + "wrong label count");
      if (auto p = sample_problem(s, tax, s.features.size()); !p.empty()) problems.push_back(where + p);
      if (dual && s.labels.size() == 2 && s.labels[1].level != s.labels[0].level + 1) {
        problems.push_back(where + "dual labels not at consecutive levels");
      }
      if (!declared.count(s.finest())) problems.push_back(where + "label outside the task's introduced set");
      for (std::size_t i = 0; i + 1 < s.labels.size(); ++i) {
        if (!introduced_so_far.count(s.labels[i])) problems.push_back(where + "coarse label never introduced");
      }
      if (stream.scenario == Scenario::kMultiDepth && s.finest().level != spec.index) {
        problems.push_back(where + "label level differs from task index");
      }
      seen.insert(s.finest());
      if (stream.scenario != Scenario::kSingleDepthDualLabel) {
        auto [it, fresh] = task_of_sample.emplace(s.sample_id, spec.index);
        if (!fresh) problems.push_back(where + "sample " + std::to_string(s.sample_id) + " repeats");
      }
    }
    if (seen != declared) problems.push_back("task " + std::to_string(spec.index) + " class set differs from introduced");
  }
  return problems;
}

/// Audit manifest: `t<TAB>task<TAB>sample_id<TAB>level:label[,level:label]`.
inline std::string stream_manifest(const TaskStream& stream) {
  std::string out;
  StreamCursor cursor(stream);
  while (auto ev = cursor.next()) {
    out += std::to_string(ev->t) + '\t' + std::to_string(ev->task) + '\t' + std::to_string(ev->sample->sample_id) +
           '\t' + format_labels(*ev->sample, *stream.taxonomy) + '\n';
  }
  return out;
}

}  // namespace hlecl
