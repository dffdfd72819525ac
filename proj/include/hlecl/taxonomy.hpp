#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hlecl/error.hpp"
#include "hlecl/text.hpp"

namespace hlecl {

/// Dense label id, unique across all levels of a taxonomy.
using LabelId = std::int32_t;

/// A class as seen by the learner: a label at a specific hierarchy level.
struct ClassKey {
  int level = 0;
  LabelId label = 0;

  friend auto operator<=>(const ClassKey&, const ClassKey&) = default;
};

/// Rooted, level-stratified label tree. Level 1 is the coarsest; the root is implicit.
///
/// Ids are assigned in (level, declaration order) order, so ids of a level form
/// one contiguous range. Instances are immutable once built.
class Taxonomy {
 public:
  Taxonomy() = default;

  /// Validates and builds a taxonomy.
  ///
  /// `level_assignment` lists every label with its level, in declaration
  /// order. `edges` holds (child, parent) name pairs.
  static Taxonomy build(int level_count,
                        std::span<const std::pair<std::string, int>> level_assignment,
                        std::span<const std::pair<std::string, std::string>> edges);

  int num_levels() const { return static_cast<int>(level_begin_.size()) - 1; }
  std::size_t size() const { return names_.size(); }

  std::span<const LabelId> level_labels(int level) const {
    check_level(level);
    return std::span<const LabelId>(all_ids_).subspan(
        static_cast<std::size_t>(level_begin_[level - 1]),
        static_cast<std::size_t>(level_begin_[level] - level_begin_[level - 1]));
  }

  int level_of(LabelId id) const {
    check_id(id);
    return levels_[static_cast<std::size_t>(id)];
  }

  std::optional<LabelId> parent_of(LabelId id) const {
    check_id(id);
    const LabelId p = parents_[static_cast<std::size_t>(id)];
    if (p < 0) return std::nullopt;
    return p;
  }

  std::span<const LabelId> children_of(LabelId id) const {
    check_id(id);
    return children_[static_cast<std::size_t>(id)];
  }

  bool is_leaf(LabelId id) const { return children_of(id).empty(); }

  /// Labels without children, in id order.
  std::vector<LabelId> leaves() const {
    std::vector<LabelId> out;
    for (LabelId id : all_ids_) {
      if (children_[static_cast<std::size_t>(id)].empty()) out.push_back(id);
    }
    return out;
  }

  /// The unique ancestor of `id` at `level` (`id` itself at its own level).
  LabelId ancestor_at(LabelId id, int level) const {
    check_level(level);
    int current = level_of(id);
    if (level > current) {
      fail(ErrorKind::kLevelOutOfRange, "label " + name(id) + " is at level " +
                                            std::to_string(current) + ", above level " +
                                            std::to_string(level));
    }
    while (current > level) {
      id = parents_[static_cast<std::size_t>(id)];
      --current;
    }
    return id;
  }

  ClassKey key(LabelId id) const { return ClassKey{level_of(id), id}; }

  const std::string& name(LabelId id) const {
    check_id(id);
    return names_[static_cast<std::size_t>(id)];
  }

  std::optional<LabelId> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  LabelId id_of(std::string_view name) const {
    auto id = find(name);
    if (!id) fail(ErrorKind::kNoSuchLabel, "unknown label '" + std::string(name) + "'");
    return *id;
  }

  /// Serializes to the tab-separated taxonomy file format.
  std::string to_text() const {
    std::string out;
    for (LabelId id : all_ids_) {
      const auto i = static_cast<std::size_t>(id);
      out += names_[i];
      out += '\t';
      out += std::to_string(levels_[i]);
      out += '\t';
      out += parents_[i] < 0 ? std::string("-") : names_[static_cast<std::size_t>(parents_[i])];
      out += '\n';
    }
    return out;
  }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.names_ == b.names_ && a.levels_ == b.levels_ && a.parents_ == b.parents_;
  }

 private:
  void check_level(int level) const {
    if (level < 1 || level > num_levels()) {
      fail(ErrorKind::kLevelOutOfRange,
           "level " + std::to_string(level) + " outside 1.." + std::to_string(num_levels()));
    }
  }
  void check_id(LabelId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
      fail(ErrorKind::kNoSuchLabel, "label id " + std::to_string(id));
    }
  }

  std::vector<std::string> names_;
  std::vector<int> levels_;
  std::vector<LabelId> parents_;  // -1 for level-1 labels
  std::vector<std::vector<LabelId>> children_;
  std::vector<LabelId> all_ids_;
  std::vector<LabelId> level_begin_{0};  // level_begin_[h-1]..level_begin_[h] are level h
  std::unordered_map<std::string, LabelId> by_name_;
};

inline bool valid_label_name(std::string_view name) {
  return !name.empty() && name != "-" && name.find_first_of("\t\n\r,:#") == std::string_view::npos &&
         text::trim(name).size() == name.size();
}

inline Taxonomy Taxonomy::build(int level_count,
                                std::span<const std::pair<std::string, int>> level_assignment,
                                std::span<const std::pair<std::string, std::string>> edges) {
  if (level_count < 1) fail(ErrorKind::kLevelOutOfRange, "a taxonomy needs at least one level");

  const std::size_t n = level_assignment.size();
  std::unordered_map<std::string, std::size_t> decl_index;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [name, level] = level_assignment[i];
    if (!valid_label_name(name)) fail(ErrorKind::kInvalidArgument, "invalid label name '" + name + "'");
    if (level < 1 || level > level_count) {
      fail(ErrorKind::kLevelOutOfRange, "label " + name + " at level " + std::to_string(level));
    }
    if (!decl_index.emplace(name, i).second) fail(ErrorKind::kDuplicateLabel, name);
  }

  std::vector<std::ptrdiff_t> parent(n, -1);
  for (const auto& [child, par] : edges) {
    auto c = decl_index.find(child);
    auto p = decl_index.find(par);
    if (c == decl_index.end()) fail(ErrorKind::kNoSuchLabel, "edge child '" + child + "'");
    if (p == decl_index.end()) fail(ErrorKind::kNoSuchLabel, "edge parent '" + par + "'");
    if (parent[c->second] >= 0) fail(ErrorKind::kMultipleParents, child);
    parent[c->second] = static_cast<std::ptrdiff_t>(p->second);
  }

  // Walk every parent chain; a chain longer than n revisits a node.
  std::vector<int> state(n, 0);  // 0 unvisited, 1 on current path, 2 done
  for (std::size_t start = 0; start < n; ++start) {
    std::vector<std::size_t> path;
    std::ptrdiff_t cur = static_cast<std::ptrdiff_t>(start);
    while (cur >= 0 && state[static_cast<std::size_t>(cur)] == 0) {
      state[static_cast<std::size_t>(cur)] = 1;
      path.push_back(static_cast<std::size_t>(cur));
      cur = parent[static_cast<std::size_t>(cur)];
    }
    if (cur >= 0 && state[static_cast<std::size_t>(cur)] == 1) {
      fail(ErrorKind::kCycleDetected, "through label " + level_assignment[static_cast<std::size_t>(cur)].first);
    }
    for (auto v : path) state[v] = 2;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& [name, level] = level_assignment[i];
    if (parent[i] < 0) {
      if (level > 1) fail(ErrorKind::kMissingParent, name + " at level " + std::to_string(level));
      continue;
    }
    const int parent_level = level_assignment[static_cast<std::size_t>(parent[i])].second;
    if (parent_level != level - 1) {
      fail(ErrorKind::kCrossLevelParent, name + " (level " + std::to_string(level) + ") -> " +
                                             level_assignment[static_cast<std::size_t>(parent[i])].first +
                                             " (level " + std::to_string(parent_level) + ")");
    }
  }

  // Dense ids in (level, declaration order).
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return level_assignment[a].second < level_assignment[b].second;
  });
  std::vector<LabelId> id_of_decl(n);
  for (std::size_t id = 0; id < n; ++id) id_of_decl[order[id]] = static_cast<LabelId>(id);

  Taxonomy t;
  t.names_.resize(n);
  t.levels_.resize(n);
  t.parents_.assign(n, -1);
  t.children_.resize(n);
  t.all_ids_.resize(n);
  for (std::size_t id = 0; id < n; ++id) {
    const std::size_t decl = order[id];
    t.names_[id] = level_assignment[decl].first;
    t.levels_[id] = level_assignment[decl].second;
    t.all_ids_[id] = static_cast<LabelId>(id);
    if (parent[decl] >= 0) t.parents_[id] = id_of_decl[static_cast<std::size_t>(parent[decl])];
    t.by_name_.emplace(t.names_[id], static_cast<LabelId>(id));
  }
  for (std::size_t id = 0; id < n; ++id) {
    if (t.parents_[id] >= 0) t.children_[static_cast<std::size_t>(t.parents_[id])].push_back(static_cast<LabelId>(id));
  }
  t.level_begin_.assign(static_cast<std::size_t>(level_count) + 1, 0);
  for (int h = 1; h <= level_count; ++h) {
    const auto count = std::count(t.levels_.begin(), t.levels_.end(), h);
    if (count == 0) fail(ErrorKind::kEmptyLevel, "level " + std::to_string(h) + " has no labels");
    t.level_begin_[static_cast<std::size_t>(h)] = t.level_begin_[static_cast<std::size_t>(h - 1)] + static_cast<LabelId>(count);
  }
  return t;
}

/// Parses the `name<TAB>level<TAB>parent|-` format. Blank and `#` lines are skipped.
inline Taxonomy parse_taxonomy(std::string_view contents) {
  std::vector<std::pair<std::string, int>> assignment;
  std::vector<std::pair<std::string, std::string>> edges;
  int max_level = 0;
  std::size_t line_no = 0;
  for (auto line : text::split(contents, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty() || line.front() == '#') continue;
    auto fields = text::split(line, '\t');
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    const auto level = text::parse_int<int>(fields[1]);
    if (!level || *level < 1) throw ParseError(line_no, "bad level '" + std::string(fields[1]) + "'");
    if (!valid_label_name(fields[0])) throw ParseError(line_no, "bad label name '" + std::string(fields[0]) + "'");
    assignment.emplace_back(std::string(fields[0]), *level);
    const auto parent = text::trim(fields[2]);
    if (parent != "-") edges.emplace_back(std::string(fields[0]), std::string(parent));
    max_level = std::max(max_level, *level);
  }
  if (assignment.empty()) fail(ErrorKind::kEmptyLevel, "taxonomy file declares no labels");
  return Taxonomy::build(max_level, assignment, edges);
}

inline Taxonomy load_taxonomy_file(const std::filesystem::path& path) {
  return parse_taxonomy(text::read_file(path));
}

/// A regular taxonomy with the given label count per level.
///
/// Label j of level h+1 hangs under label floor(j * n_h / n_{h+1}) of level h,
/// so sizes must be non-decreasing. Names are `L<h>_<j>`.
inline Taxonomy make_regular_taxonomy(std::span<const int> level_sizes) {
  std::vector<std::pair<std::string, int>> assignment;
  std::vector<std::pair<std::string, std::string>> edges;
  const int levels = static_cast<int>(level_sizes.size());
  for (int h = 1; h <= levels; ++h) {
    const int count = level_sizes[static_cast<std::size_t>(h - 1)];
    if (count < 1) fail(ErrorKind::kEmptyLevel, "level " + std::to_string(h) + " has size " + std::to_string(count));
    if (h > 1 && count < level_sizes[static_cast<std::size_t>(h - 2)]) {
      fail(ErrorKind::kInvalidArgument, "level sizes must be non-decreasing");
    }
    for (int j = 0; j < count; ++j) {
      auto name = "L" + std::to_string(h) + "_" + std::to_string(j);
      if (h > 1) {
        const long long above = level_sizes[static_cast<std::size_t>(h - 2)];
        const long long p = static_cast<long long>(j) * above / count;
        edges.emplace_back(name, "L" + std::to_string(h - 1) + "_" + std::to_string(p));
      }
      assignment.emplace_back(std::move(name), h);
    }
  }
  return Taxonomy::build(levels, assignment, edges);
}

}  // namespace hlecl
