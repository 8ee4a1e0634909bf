#pragma once

#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mobit/mobit.hpp"

namespace mobit::testkit {

#ifdef MOBIT_FIXTURE_DIR
inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(MOBIT_FIXTURE_DIR) / name; }
#endif

struct GenOptions {
  std::size_t max_depth = 5;     // root counts as level 1, elements as the last level
  std::size_t max_entries = 50;  // across all playlists
  bool overruns = false;         // allow regions and durations past the parent
  std::size_t max_payload = 256;
};

// Region values live on a 1/16 grid so the arithmetic is exact.
inline double grid(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng) / 16.0;
}

/// Random acyclic document. Mobs sit on levels and only reference mobs on
/// deeper levels, so sharing (diamonds) happens but cycles cannot.
inline Document random_document(std::uint64_t seed, const GenOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  Document doc;
  doc.id = "gen" + std::to_string(seed);
  doc.canvas = {static_cast<std::uint32_t>(uniform(1, 4) * 160), static_cast<std::uint32_t>(uniform(1, 4) * 120)};
  doc.total_duration = uniform(1, 40) * 250;

  const std::size_t mob_levels = uniform(1, std::max<std::size_t>(1, opt.max_depth - 1));
  std::vector<std::vector<ObjectId>> levels(mob_levels);
  std::uint64_t next_id = 1;
  doc.root = ObjectId{next_id++};
  doc.mobs[doc.root] = Mob{doc.root, "root", {}};
  levels[0].push_back(doc.root);
  for (std::size_t l = 1; l < mob_levels; ++l) {
    const std::size_t n = uniform(1, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const ObjectId id{next_id++};
      doc.mobs[id] = Mob{id, "m" + std::to_string(id.value), {}};
      levels[l].push_back(id);
    }
  }

  static const char* mimes[] = {"image/png", "image/jpeg", "text/plain", "video/mp4", "audio/ogg"};
  std::vector<ObjectId> elements;
  const std::size_t n_elements = uniform(1, 6);
  for (std::size_t i = 0; i < n_elements; ++i) {
    Element e;
    e.id = ObjectId{next_id++};
    e.name = "e" + std::to_string(e.id.value);
    e.mime_type = parse_mime(mimes[uniform(0, 4)]);
    Bytes bytes(uniform(1, opt.max_payload));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(uniform(0, 255));
    e.payload = InlinePayload{std::move(bytes)};
    elements.push_back(e.id);
    doc.elements[e.id] = std::move(e);
  }

  auto random_entry = [&](ObjectId target) {
    PlaylistEntry e;
    e.target = target;
    if (opt.overruns && chance(0.3)) {
      e.region.x = grid(rng, -4, 15);
      e.region.y = grid(rng, -4, 15);
      e.region.w = grid(rng, 1, 20);
      e.region.h = grid(rng, 1, 20);
    } else if (chance(0.25)) {
      e.region = Region::full();
    } else {
      e.region.x = grid(rng, 0, 15);
      e.region.y = grid(rng, 0, 15);
      e.region.w = grid(rng, 1, 16 - static_cast<int>(e.region.x * 16));
      e.region.h = grid(rng, 1, 16 - static_cast<int>(e.region.y * 16));
    }
    e.time.start_offset = chance(0.3) ? 0 : uniform(0, 20) * 250;
    if (chance(0.6)) e.time.duration = chance(0.5) ? uniform(1, 24) * 250 : uniform(1, 5000);
    if (!opt.overruns && e.time.start_offset > 0 && chance(0.5)) e.time.start_offset = uniform(0, 8) * 125;
    if (chance(0.2)) {
      e.params.background_color = Rgba{static_cast<std::uint8_t>(uniform(0, 255)), static_cast<std::uint8_t>(uniform(0, 255)),
                                        static_cast<std::uint8_t>(uniform(0, 255)), static_cast<std::uint8_t>(uniform(0, 255))};
    }
    if (chance(0.2)) e.params.font_scale = static_cast<double>(uniform(1, 8)) / 4.0;
    if (chance(0.2)) e.params.scale_mode = static_cast<ScaleMode>(uniform(0, 2));
    return e;
  };

  // Every non-root mob gets one parent first so the whole graph is reachable.
  std::size_t budget = opt.max_entries;
  for (std::size_t l = 1; l < mob_levels && budget > 0; ++l) {
    for (const ObjectId id : levels[l]) {
      if (budget == 0) break;
      const auto& parents = levels[l - 1];
      doc.mobs[parents[uniform(0, parents.size() - 1)]].playlist.push_back(random_entry(id));
      --budget;
    }
  }
  const std::size_t extra = uniform(0, budget);
  for (std::size_t i = 0; i < extra; ++i) {
    const std::size_t l = uniform(0, mob_levels - 1);
    const ObjectId owner = levels[l][uniform(0, levels[l].size() - 1)];
    ObjectId target = elements[uniform(0, elements.size() - 1)];
    if (l + 1 < mob_levels && chance(0.3)) {
      const std::size_t tl = uniform(l + 1, mob_levels - 1);
      target = levels[tl][uniform(0, levels[tl].size() - 1)];
    }
    doc.mobs[owner].playlist.push_back(random_entry(target));
  }
  return doc;
}

/// Mobs reachable from the root, in discovery order.
inline std::vector<ObjectId> reachable_mobs(const Document& doc, ObjectId from) {
  std::vector<ObjectId> out;
  std::set<ObjectId> seen;
  std::vector<ObjectId> todo{from};
  while (!todo.empty()) {
    const ObjectId id = todo.back();
    todo.pop_back();
    auto it = doc.mobs.find(id);
    if (it == doc.mobs.end() || !seen.insert(id).second) continue;
    out.push_back(id);
    for (const auto& e : it->second.playlist) todo.push_back(e.target);
  }
  return out;
}

/// Adds one back edge: some mob below `a` (or `a` itself) gets an entry to
/// `a`, where `a` is reachable from the root.
inline Document inject_cycle(Document doc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto from_root = reachable_mobs(doc, doc.root);
  const ObjectId a = from_root[std::uniform_int_distribution<std::size_t>(0, from_root.size() - 1)(rng)];
  const auto below = reachable_mobs(doc, a);
  const ObjectId b = below[std::uniform_int_distribution<std::size_t>(0, below.size() - 1)(rng)];
  auto& playlist = doc.mobs[b].playlist;
  PlaylistEntry back;
  back.target = a;
  const auto pos = std::uniform_int_distribution<std::size_t>(0, playlist.size())(rng);
  playlist.insert(playlist.begin() + static_cast<std::ptrdiff_t>(pos), back);
  return doc;
}

/// True when every consecutive pair in the path is a playlist edge and the
/// path closes on itself.
inline bool is_genuine_cycle(const Document& doc, const std::vector<ObjectId>& path) {
  if (path.size() < 2 || path.front() != path.back()) return false;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    auto it = doc.mobs.find(path[i]);
    if (it == doc.mobs.end()) return false;
    const auto& pl = it->second.playlist;
    if (std::none_of(pl.begin(), pl.end(), [&](const PlaylistEntry& e) { return e.target == path[i + 1]; })) {
      return false;
    }
  }
  return true;
}

/// Whether clamping changes anything: some reachable entry pokes outside
/// its parent in time or space, computed without the validator.
inline bool clamp_would_modify(const Document& doc) {
  bool modified = false;
  auto walk = [&](auto&& self, const Mob& mob, Millis p_start, Millis p_end) -> void {
    for (const auto& e : mob.playlist) {
      const Millis start = p_start + e.time.start_offset;
      const Millis raw_end = e.time.duration ? start + *e.time.duration : p_end;
      if (raw_end > p_end || start >= p_end) modified = true;
      if (e.region.x < 0 || e.region.y < 0 || e.region.x + e.region.w > 1 || e.region.y + e.region.h > 1) {
        modified = true;
      }
      if (start >= p_end) continue;
      const double x0 = std::max(e.region.x, 0.0), x1 = std::min(e.region.x + e.region.w, 1.0);
      const double y0 = std::max(e.region.y, 0.0), y1 = std::min(e.region.y + e.region.h, 1.0);
      if (x1 <= x0 || y1 <= y0) continue;
      if (auto m = doc.mobs.find(e.target); m != doc.mobs.end()) self(self, m->second, start, std::min(raw_end, p_end));
    }
  };
  walk(walk, doc.mobs.at(doc.root), 0, doc.total_duration);
  return modified;
}

inline Bytes pattern_bytes(std::size_t n, std::uint32_t seed = 1) {
  Bytes out(n);
  std::mt19937 rng(seed);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

/// Root with one static element of `size` bytes shown at `show_at` until
/// `total`.
inline Document big_element_doc(std::size_t size, Millis show_at, Millis total) {
  Document doc;
  doc.id = "big";
  doc.root = ObjectId{1};
  doc.canvas = {800, 600};
  doc.total_duration = total;
  Element e;
  e.id = ObjectId{2};
  e.name = "big";
  e.mime_type = parse_mime("video/mp4");
  e.payload = InlinePayload{pattern_bytes(size)};
  doc.elements[e.id] = e;
  PlaylistEntry entry;
  entry.target = e.id;
  entry.time.start_offset = show_at;
  doc.mobs[doc.root] = Mob{doc.root, "root", {entry}};
  return doc;
}

}  // namespace mobit::testkit
