#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "mobit/flow.hpp"

namespace mobit {

struct SceneItem {
  std::vector<std::uint32_t> path;
  ObjectId object;
  AbsRect rect;
  std::uint32_t z = 0;
  ResolvedParams params;
};

/// Active instances, ordered by path.
using SceneState = std::vector<SceneItem>;

inline bool same_scene(const SceneState& a, const SceneState& b, double tol = 1e-6) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& p = a[i];
    const auto& q = b[i];
    if (p.path != q.path || p.object != q.object || p.z != q.z) return false;
    if (p.params.background_color != q.params.background_color || p.params.scale_mode != q.params.scale_mode ||
        std::abs(p.params.font_scale - q.params.font_scale) > tol) {
      return false;
    }
    if (std::abs(p.rect.x - q.rect.x) > tol || std::abs(p.rect.y - q.rect.y) > tol ||
        std::abs(p.rect.w - q.rect.w) > tol || std::abs(p.rect.h - q.rect.h) > tol) {
      return false;
    }
  }
  return true;
}

/// Evaluates the document directly at time t without going through a flow
/// script. An instance is active when start <= t < end.
inline SceneState scene_at(const Document& doc, Millis t, ContainmentMode mode = ContainmentMode::clamp) {
  if (auto cycle = check_acyclic(doc)) throw CycleError(*cycle);
  if (mode == ContainmentMode::strict) {
    if (auto v = check_containment(doc, mode); !v.empty()) throw ContainmentError(std::move(v));
  }

  SceneState scene;
  std::uint32_t visits = 0;
  std::vector<std::uint32_t> path;

  auto walk = [&](auto&& self, const Mob& mob, double px, double py, double pw, double ph, Millis p_start,
                  Millis p_end, const ResolvedParams& inherited) -> void {
    for (std::uint32_t i = 0; i < mob.playlist.size(); ++i) {
      const auto& entry = mob.playlist[i];
      const Millis start = p_start + entry.time.start_offset;
      Millis end = p_end;
      if (entry.time.duration && start + *entry.time.duration < p_end) end = start + *entry.time.duration;
      if (start >= end) continue;

      const double left = std::max(px + entry.region.x * pw, px);
      const double top = std::max(py + entry.region.y * ph, py);
      const double right = std::min(px + entry.region.x * pw + entry.region.w * pw, px + pw);
      const double bottom = std::min(py + entry.region.y * ph + entry.region.h * ph, py + ph);
      const double w = right - left;
      const double h = bottom - top;
      if (!(w > 0.0) || !(h > 0.0)) continue;

      ResolvedParams params = inherited;
      if (entry.params.background_color) params.background_color = *entry.params.background_color;
      if (entry.params.font_scale) params.font_scale = params.font_scale * *entry.params.font_scale;
      if (entry.params.scale_mode) params.scale_mode = *entry.params.scale_mode;

      path.push_back(i);
      if (auto m = doc.mobs.find(entry.target); m != doc.mobs.end()) {
        self(self, m->second, left, top, w, h, start, end, params);
      } else if (doc.elements.count(entry.target)) {
        const std::uint32_t z = visits++;
        if (start <= t && t < end) scene.push_back({path, entry.target, {left, top, w, h}, z, params});
      } else {
        throw UnknownId(entry.target);
      }
      path.pop_back();
    }
  };

  auto root = doc.mobs.find(doc.root);
  if (root == doc.mobs.end()) throw UnknownId(doc.root);
  walk(walk, root->second, 0.0, 0.0, doc.canvas.width, doc.canvas.height, 0, doc.total_duration, ResolvedParams{});
  std::sort(scene.begin(), scene.end(), [](const SceneItem& a, const SceneItem& b) { return a.path < b.path; });
  return scene;
}

/// Applies every Show/Hide with at <= t in script order.
inline SceneState replay(const FlowScript& script, Millis t) {
  const auto& table = script.header.ref_table;
  std::map<std::uint32_t, SceneItem> active;
  for (const auto& ev : script.events) {
    if (ev.at > t) break;
    if (const auto* show = std::get_if<event::Show>(&ev.kind)) {
      if (show->instance_id >= table.instances.size() || show->local_ref >= table.objects.size()) {
        throw MalformedScript("show references unknown instance");
      }
      active[show->instance_id] = {table.instances[show->instance_id].path, table.objects[show->local_ref].id,
                                   show->rect, show->z, show->params};
    } else if (const auto* hide = std::get_if<event::Hide>(&ev.kind)) {
      if (active.erase(hide->instance_id) == 0) {
        throw MalformedScript("unmatched hide for instance " + std::to_string(hide->instance_id));
      }
    }
  }
  SceneState scene;
  for (auto& [id, item] : active) scene.push_back(std::move(item));
  std::sort(scene.begin(), scene.end(), [](const SceneItem& a, const SceneItem& b) { return a.path < b.path; });
  return scene;
}

/// Times at which the scene can change, plus the midpoints between them.
inline std::vector<Millis> probe_times(const FlowScript& script) {
  std::vector<Millis> ts;
  for (const auto& ev : script.events) ts.push_back(ev.at);
  ts.push_back(0);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  const std::size_t n = ts.size();
  for (std::size_t i = 0; i + 1 < n; ++i) ts.push_back(ts[i] + (ts[i + 1] - ts[i]) / 2);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

}  // namespace mobit
