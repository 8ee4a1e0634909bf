#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobit/model.hpp"

namespace mobit {

enum class ContainmentMode : std::uint8_t { strict, clamp };

enum class Axis : std::uint8_t { x, y };

struct Violation {
  enum class Kind : std::uint8_t { cycle, temporal_overrun, spatial_overrun, unknown_ref };

  Kind kind = Kind::cycle;
  // Object ids from the root down to the offending target. A cycle path
  // starts and ends with the same id.
  std::vector<ObjectId> path;
  Millis overrun_ms = 0;
  Axis axis = Axis::x;
  double amount = 0.0;

  std::string describe() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::cycle: os << "cycle"; break;
      case Kind::temporal_overrun: os << "temporal-overrun"; break;
      case Kind::spatial_overrun: os << "spatial-overrun"; break;
      case Kind::unknown_ref: os << "unknown-ref"; break;
    }
    os << ' ';
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (i) os << (kind == Kind::cycle ? "->" : "/");
      os << path[i].value;
    }
    if (kind == Kind::temporal_overrun) os << " overrun_ms=" << overrun_ms;
    if (kind == Kind::spatial_overrun) {
      os << " axis=" << (axis == Axis::x ? 'x' : 'y') << " amount=" << amount;
    }
    return os.str();
  }
};

struct ValidationStats {
  std::size_t mobs = 0;
  std::size_t elements = 0;
  std::size_t entries = 0;
  std::size_t max_depth = 0;  // nodes on the longest root path; empty root = 1
};

struct ValidationReport {
  std::vector<Violation> violations;
  ValidationStats stats;

  bool ok() const { return violations.empty(); }
  bool has_cycle() const {
    return std::any_of(violations.begin(), violations.end(),
                       [](const Violation& v) { return v.kind == Violation::Kind::cycle; });
  }
};

class CycleError : public Error {
 public:
  explicit CycleError(std::vector<ObjectId> path)
      : Error(Violation{Violation::Kind::cycle, path}.describe()), path_(std::move(path)) {}
  const std::vector<ObjectId>& path() const { return path_; }

 private:
  std::vector<ObjectId> path_;
};

/// Thrown by strict compilation when the document needs clipping.
class ContainmentError : public Error {
 public:
  explicit ContainmentError(std::vector<Violation> v)
      : Error(v.empty() ? "containment violation" : v.front().describe()),
        violations_(std::move(v)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

/// Returns a witness cycle reachable from the root, or nothing.
/// Shared sub-Mobs (diamonds) are legal.
inline std::optional<std::vector<ObjectId>> check_acyclic(const Document& doc) {
  enum class Color : std::uint8_t { white, grey, black };
  std::unordered_map<ObjectId, Color> color;
  std::vector<ObjectId> stack;

  auto dfs = [&](auto&& self, ObjectId id) -> std::optional<std::vector<ObjectId>> {
    const Mob* mob = as_mob(resolve(doc, id));
    if (!mob) return std::nullopt;
    color[id] = Color::grey;
    stack.push_back(id);
    for (const auto& entry : mob->playlist) {
      const auto c = color.count(entry.target) ? color[entry.target] : Color::white;
      if (c == Color::grey) {
        auto first = std::find(stack.begin(), stack.end(), entry.target);
        std::vector<ObjectId> cycle(first, stack.end());
        cycle.push_back(entry.target);
        return cycle;
      }
      if (c == Color::white) {
        if (auto found = self(self, entry.target)) return found;
      }
    }
    stack.pop_back();
    color[id] = Color::black;
    return std::nullopt;
  };
  return dfs(dfs, doc.root);
}

namespace detail {

struct Span {
  Millis start = 0;
  Millis end = 0;
};

// Width kept after clipping [pos, pos+len) to [0, 1].
inline double clipped_extent(double pos, double len) {
  return std::max(0.0, std::min(pos + len, 1.0) - std::max(pos, 0.0));
}

}  // namespace detail

/// Strict: one violation per visited entry that leaves its parent's interval
/// or the unit square. Clamp: only entries clipped to zero area.
inline std::vector<Violation> check_containment(const Document& doc, ContainmentMode mode) {
  std::vector<Violation> out;
  std::vector<ObjectId> path{doc.root};

  auto visit = [&](auto&& self, const Mob& mob, detail::Span parent) -> void {
    for (const auto& entry : mob.playlist) {
      path.push_back(entry.target);
      const NodeRef node = resolve(doc, entry.target);

      const Millis start = parent.start + entry.time.start_offset;
      bool time_empty = start >= parent.end;
      Millis end = parent.end;
      if (entry.time.duration) {
        const Millis raw_end = start + *entry.time.duration;
        if (mode == ContainmentMode::strict && raw_end > parent.end) {
          out.push_back({Violation::Kind::temporal_overrun, path, raw_end - parent.end});
        }
        end = std::min(raw_end, parent.end);
      } else if (mode == ContainmentMode::strict && time_empty) {
        out.push_back({Violation::Kind::temporal_overrun, path, start - parent.end});
      }

      bool space_empty = false;
      auto check_axis = [&](Axis axis, double pos, double len) {
        const double kept = detail::clipped_extent(pos, len);
        const double lost = len - kept;
        if (kept <= 0.0) space_empty = true;
        const bool report = mode == ContainmentMode::strict ? (lost > 0.0 || kept <= 0.0) : kept <= 0.0;
        if (report) {
          Violation v{Violation::Kind::spatial_overrun, path};
          v.axis = axis;
          v.amount = lost;
          out.push_back(std::move(v));
        }
      };
      check_axis(Axis::x, entry.region.x, entry.region.w);
      check_axis(Axis::y, entry.region.y, entry.region.h);

      if (const Mob* child = as_mob(node); child && !time_empty && !space_empty) {
        self(self, *child, {start, end});
      }
      path.pop_back();
    }
  };

  if (const Mob* root = as_mob(resolve(doc, doc.root))) visit(visit, *root, {0, doc.total_duration});
  return out;
}

/// Resolution, acyclicity, then containment. Containment is skipped when the
/// graph is unresolved or cyclic.
inline ValidationReport validate(const Document& doc, ContainmentMode mode = ContainmentMode::clamp) {
  ValidationReport report;
  report.stats.mobs = doc.mobs.size();
  report.stats.elements = doc.elements.size();

  if (!doc.mobs.count(doc.root)) {
    report.violations.push_back({Violation::Kind::unknown_ref, {doc.root}});
  }
  for (const auto& [id, mob] : doc.mobs) {
    report.stats.entries += mob.playlist.size();
    for (const auto& entry : mob.playlist) {
      if (!doc.mobs.count(entry.target) && !doc.elements.count(entry.target)) {
        report.violations.push_back({Violation::Kind::unknown_ref, {id, entry.target}});
      }
    }
  }
  if (!report.violations.empty()) return report;

  if (auto cycle = check_acyclic(doc)) {
    report.violations.push_back({Violation::Kind::cycle, std::move(*cycle)});
    return report;
  }

  std::unordered_map<ObjectId, std::size_t> depth_memo;
  auto depth = [&](auto&& self, ObjectId id) -> std::size_t {
    if (auto it = depth_memo.find(id); it != depth_memo.end()) return it->second;
    std::size_t d = 1;
    if (const Mob* mob = as_mob(resolve(doc, id))) {
      for (const auto& e : mob->playlist) d = std::max(d, 1 + self(self, e.target));
    }
    return depth_memo[id] = d;
  };
  report.stats.max_depth = depth(depth, doc.root);

  report.violations = check_containment(doc, mode);
  return report;
}

}  // namespace mobit
