#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mobit/model.hpp"
#include "mobit/validator.hpp"

namespace mobit {

/// Absolute rectangle in canvas pixels.
struct AbsRect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const AbsRect&) const = default;
};

/// Half-open absolute display interval [start, end).
struct Interval {
  Millis start = 0;
  Millis end = 0;

  bool empty() const { return start >= end; }
  bool contains(Millis t) const { return start <= t && t < end; }
  bool operator==(const Interval&) const = default;
};

class TemporalOverrun : public Error {
 public:
  explicit TemporalOverrun(Millis overrun)
      : Error("temporal overrun of " + std::to_string(overrun) + " ms"), overrun_(overrun) {}
  Millis overrun_ms() const { return overrun_; }

 private:
  Millis overrun_;
};

inline AbsRect compose_region(const AbsRect& parent, const Region& child,
                              ContainmentMode mode = ContainmentMode::clamp) {
  AbsRect r{parent.x + child.x * parent.w, parent.y + child.y * parent.h,
            child.w * parent.w, child.h * parent.h};
  if (mode == ContainmentMode::clamp) {
    const double left = std::max(r.x, parent.x);
    const double top = std::max(r.y, parent.y);
    const double right = std::min(r.x + r.w, parent.x + parent.w);
    const double bottom = std::min(r.y + r.h, parent.y + parent.h);
    r = {left, top, std::max(0.0, right - left), std::max(0.0, bottom - top)};
  }
  return r;
}

/// Empty result means the entry falls entirely past its parent's end.
/// Strict mode throws instead of clipping.
inline std::optional<Interval> compose_interval(Interval parent, const TimeSpec& child,
                                                ContainmentMode mode = ContainmentMode::clamp) {
  const Millis start = parent.start + child.start_offset;
  Millis end = parent.end;
  if (child.duration) {
    const Millis raw_end = start + *child.duration;
    if (raw_end > parent.end && mode == ContainmentMode::strict) {
      throw TemporalOverrun(raw_end - parent.end);
    }
    end = std::min(raw_end, parent.end);
  } else if (start >= parent.end && mode == ContainmentMode::strict) {
    throw TemporalOverrun(start - parent.end);
  }
  if (start >= end) return std::nullopt;
  return Interval{start, end};
}

struct RefObject {
  std::uint32_t local_ref = 0;
  ObjectId id;
  MimeType mime_type;
  std::uint64_t payload_size = 0;

  bool operator==(const RefObject&) const = default;
};

struct InstanceInfo {
  std::uint32_t instance_id = 0;
  std::uint32_t local_ref = 0;
  std::vector<std::uint32_t> path;  // playlist indices from the root

  bool operator==(const InstanceInfo&) const = default;
};

struct LocalRefTable {
  std::vector<RefObject> objects;
  std::vector<InstanceInfo> instances;

  bool operator==(const LocalRefTable&) const = default;
};

/// Depth-first preorder over playlist entries. An Element receives its local
/// ref on first visit; every visit is a new instance.
inline LocalRefTable assign_local_refs(const Document& doc, const PayloadSizer& sizer = inline_payload_size) {
  if (auto cycle = check_acyclic(doc)) throw CycleError(*cycle);
  LocalRefTable table;
  std::map<ObjectId, std::uint32_t> refs;
  std::vector<std::uint32_t> path;

  auto walk = [&](auto&& self, const Mob& mob) -> void {
    for (std::uint32_t i = 0; i < mob.playlist.size(); ++i) {
      path.push_back(i);
      const NodeRef node = resolve(doc, mob.playlist[i].target);
      if (const Mob* child = as_mob(node)) {
        self(self, *child);
      } else {
        const Element& e = *as_element(node);
        auto [it, fresh] = refs.try_emplace(e.id, static_cast<std::uint32_t>(table.objects.size()));
        if (fresh) table.objects.push_back({it->second, e.id, e.mime_type, sizer(e)});
        table.instances.push_back({static_cast<std::uint32_t>(table.instances.size()), it->second, path});
      }
      path.pop_back();
    }
  };
  if (const Mob* root = as_mob(resolve(doc, doc.root))) walk(walk, *root);
  return table;
}

namespace event {
struct Prefetch {
  std::uint32_t local_ref = 0;
  bool operator==(const Prefetch&) const = default;
};
struct Hide {
  std::uint32_t instance_id = 0;
  bool operator==(const Hide&) const = default;
};
struct Show {
  std::uint32_t instance_id = 0;
  std::uint32_t local_ref = 0;
  AbsRect rect;
  std::uint32_t z = 0;
  ResolvedParams params;
  bool operator==(const Show&) const = default;
};
struct End {
  bool operator==(const End&) const = default;
};
}  // namespace event

struct FlowEvent {
  // Alternative index doubles as the tie rank: Prefetch < Hide < Show < End.
  using Kind = std::variant<event::Prefetch, event::Hide, event::Show, event::End>;

  Millis at = 0;
  Kind kind;

  std::size_t rank() const { return kind.index(); }
  std::uint32_t tie_id() const {
    return std::visit(
        [](const auto& k) -> std::uint32_t {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, event::Prefetch>) return k.local_ref;
          else if constexpr (std::is_same_v<K, event::End>) return 0;
          else return k.instance_id;
        },
        kind);
  }
  bool operator==(const FlowEvent&) const = default;
};

inline bool event_order(const FlowEvent& a, const FlowEvent& b) {
  if (a.at != b.at) return a.at < b.at;
  if (a.rank() != b.rank()) return a.rank() < b.rank();
  return a.tie_id() < b.tie_id();
}

struct FlowHeader {
  std::string doc_id;
  PixelSize canvas;
  Millis total_duration = 0;
  Millis prefetch_lead_ms = 0;
  LocalRefTable ref_table;

  bool operator==(const FlowHeader&) const = default;
};

struct FlowScript {
  FlowHeader header;
  std::vector<FlowEvent> events;

  bool operator==(const FlowScript&) const = default;
};

struct LinearizeOptions {
  ContainmentMode mode = ContainmentMode::clamp;
  Millis prefetch_lead_ms = 0;
  PayloadSizer payload_size = inline_payload_size;
};

struct Compiled {
  FlowScript script;
  std::vector<std::string> warnings;  // entries dropped during clamping
};

inline Compiled compile(const Document& doc, const LinearizeOptions& opts = {}) {
  const ValidationReport report = validate(doc, opts.mode);
  for (const auto& v : report.violations) {
    if (v.kind == Violation::Kind::unknown_ref) throw UnknownId(v.path.back());
    if (v.kind == Violation::Kind::cycle) throw CycleError(v.path);
  }
  if (opts.mode == ContainmentMode::strict && !report.ok()) throw ContainmentError(report.violations);

  Compiled out;
  FlowScript& script = out.script;
  script.header.doc_id = doc.id;
  script.header.canvas = doc.canvas;
  script.header.total_duration = doc.total_duration;
  script.header.prefetch_lead_ms = opts.prefetch_lead_ms;
  auto& table = script.header.ref_table;

  std::map<ObjectId, std::uint32_t> refs;
  std::vector<Millis> first_show;
  std::vector<std::uint32_t> path;
  std::vector<ObjectId> id_path{doc.root};

  auto warn = [&](std::string_view what) {
    std::string s(what);
    s += " at ";
    for (std::size_t i = 0; i < id_path.size(); ++i) s += (i ? "/" : "") + to_string(id_path[i]);
    out.warnings.push_back(std::move(s));
  };

  auto walk = [&](auto&& self, const Mob& mob, const AbsRect& rect, Interval span,
                  const ResolvedParams& params) -> void {
    for (std::uint32_t i = 0; i < mob.playlist.size(); ++i) {
      const PlaylistEntry& entry = mob.playlist[i];
      path.push_back(i);
      id_path.push_back(entry.target);
      const auto child_span = compose_interval(span, entry.time, opts.mode);
      const AbsRect child_rect = compose_region(rect, entry.region, opts.mode);
      if (!child_span) {
        warn("dropped entry past parent end");
      } else if (!(child_rect.w > 0.0 && child_rect.h > 0.0)) {
        warn("dropped entry with empty region");
      } else {
        const ResolvedParams child_params = params.inherit(entry.params);
        const NodeRef node = resolve(doc, entry.target);
        if (const Mob* child = as_mob(node)) {
          self(self, *child, child_rect, *child_span, child_params);
        } else {
          const Element& e = *as_element(node);
          auto [it, fresh] = refs.try_emplace(e.id, static_cast<std::uint32_t>(table.objects.size()));
          const std::uint32_t ref = it->second;
          if (fresh) {
            table.objects.push_back({ref, e.id, e.mime_type, opts.payload_size(e)});
            first_show.push_back(child_span->start);
          }
          first_show[ref] = std::min(first_show[ref], child_span->start);
          const auto inst = static_cast<std::uint32_t>(table.instances.size());
          table.instances.push_back({inst, ref, path});
          script.events.push_back({child_span->start, event::Show{inst, ref, child_rect, inst, child_params}});
          script.events.push_back({child_span->end, event::Hide{inst}});
        }
      }
      id_path.pop_back();
      path.pop_back();
    }
  };

  const AbsRect canvas{0.0, 0.0, static_cast<double>(doc.canvas.width), static_cast<double>(doc.canvas.height)};
  walk(walk, *as_mob(resolve(doc, doc.root)), canvas, Interval{0, doc.total_duration}, ResolvedParams{});

  for (std::uint32_t ref = 0; ref < first_show.size(); ++ref) {
    const Millis at = first_show[ref] > opts.prefetch_lead_ms ? first_show[ref] - opts.prefetch_lead_ms : 0;
    script.events.push_back({at, event::Prefetch{ref}});
  }
  script.events.push_back({doc.total_duration, event::End{}});
  std::sort(script.events.begin(), script.events.end(), event_order);
  return out;
}

/// Merges every playlist into one time-ordered script in absolute coordinates.
inline FlowScript linearize(const Document& doc, const LinearizeOptions& opts = {}) {
  return compile(doc, opts).script;
}

// ---------------------------------------------------------------------------
// Canonical text form.
//
//   mobit-flow 1
//   doc <id>
//   canvas <w> <h>
//   duration <ms>
//   prefetch-lead <ms>
//   objects <n>
//   object <ref> <object-id> <mime> <payload-size>      (n lines)
//   instances <m>
//   instance <id> <ref> <i.j.k>                         (m lines)
//   events <k>
//   <at> prefetch <ref>
//   <at> hide <instance>
//   <at> show <instance> <ref> <x> <y> <w> <h> <z> <rrggbbaa> <font-scale> <scale-mode>
//   <at> end
//
// Decimals carry exactly three fractional digits, rounded half-to-even.
// ---------------------------------------------------------------------------

class MalformedScript : public Error {
 public:
  explicit MalformedScript(const std::string& what) : Error("malformed flow script: " + what) {}
};

/// Fixed three-digit decimal, rounded half-to-even.
inline std::string format_fixed3(double v) {
  const double scaled = std::nearbyint(v * 1000.0);
  long long milli = static_cast<long long>(scaled);
  std::string out;
  if (milli < 0) {
    out += '-';
    milli = -milli;
  }
  out += std::to_string(milli / 1000);
  out += '.';
  const auto frac = std::to_string(milli % 1000);
  out.append(3 - frac.size(), '0');
  out += frac;
  return out;
}

inline std::string format_rgba(const Rgba& c) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (std::uint8_t b : {c.r, c.g, c.b, c.a}) {
    s += hex[b >> 4];
    s += hex[b & 0xF];
  }
  return s;
}

inline std::optional<Rgba> parse_rgba_hex(std::string_view s) {
  if (s.size() != 6 && s.size() != 8) return std::nullopt;
  std::uint8_t bytes[4] = {0, 0, 0, 0xFF};
  for (std::size_t i = 0; i < s.size() / 2; ++i) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data() + 2 * i, s.data() + 2 * i + 2, v, 16);
    if (ec != std::errc{} || p != s.data() + 2 * i + 2) return std::nullopt;
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  return Rgba{bytes[0], bytes[1], bytes[2], bytes[3]};
}

inline std::string serialize_script(const FlowScript& script) {
  std::ostringstream os;
  const auto& h = script.header;
  os << "mobit-flow 1\n";
  os << "doc " << h.doc_id << '\n';
  os << "canvas " << h.canvas.width << ' ' << h.canvas.height << '\n';
  os << "duration " << h.total_duration << '\n';
  os << "prefetch-lead " << h.prefetch_lead_ms << '\n';
  os << "objects " << h.ref_table.objects.size() << '\n';
  for (const auto& o : h.ref_table.objects) {
    os << "object " << o.local_ref << ' ' << o.id.value << ' ' << o.mime_type.str() << ' ' << o.payload_size << '\n';
  }
  os << "instances " << h.ref_table.instances.size() << '\n';
  for (const auto& inst : h.ref_table.instances) {
    os << "instance " << inst.instance_id << ' ' << inst.local_ref << ' ';
    for (std::size_t i = 0; i < inst.path.size(); ++i) os << (i ? "." : "") << inst.path[i];
    os << '\n';
  }
  os << "events " << script.events.size() << '\n';
  for (const auto& ev : script.events) {
    os << ev.at << ' ';
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, event::Prefetch>) {
            os << "prefetch " << k.local_ref;
          } else if constexpr (std::is_same_v<K, event::Hide>) {
            os << "hide " << k.instance_id;
          } else if constexpr (std::is_same_v<K, event::Show>) {
            os << "show " << k.instance_id << ' ' << k.local_ref << ' ' << format_fixed3(k.rect.x) << ' '
               << format_fixed3(k.rect.y) << ' ' << format_fixed3(k.rect.w) << ' ' << format_fixed3(k.rect.h)
               << ' ' << k.z << ' ' << format_rgba(k.params.background_color) << ' '
               << format_fixed3(k.params.font_scale) << ' ' << to_string(k.params.scale_mode);
          } else {
            os << "end";
          }
        },
        ev.kind);
    os << '\n';
  }
  return os.str();
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view line() {
    if (pos_ >= text_.size()) throw MalformedScript("unexpected end of input");
    const auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos) throw MalformedScript("missing final newline");
    auto l = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    ++line_no_;
    return l;
  }
  bool done() const { return pos_ >= text_.size(); }
  std::size_t line_no() const { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

inline std::vector<std::string_view> split_fields(std::string_view l) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < l.size()) {
    const auto sp = l.find(' ', i);
    const auto end = sp == std::string_view::npos ? l.size() : sp;
    out.push_back(l.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

template <typename T>
T parse_uint(std::string_view s, std::string_view what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) {
    throw MalformedScript("bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

inline double parse_decimal(std::string_view s, std::string_view what) {
  double v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
    throw MalformedScript("bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

inline std::string_view expect_key(std::string_view line, std::string_view key) {
  if (line.size() < key.size() + 1 || line.substr(0, key.size()) != key || line[key.size()] != ' ') {
    throw MalformedScript("expected '" + std::string(key) + "'");
  }
  return line.substr(key.size() + 1);
}

}  // namespace detail

inline FlowScript parse_script(std::string_view text) {
  using namespace detail;
  LineReader in(text);
  FlowScript s;
  auto& h = s.header;
  if (in.line() != "mobit-flow 1") throw MalformedScript("bad magic");
  h.doc_id = std::string(expect_key(in.line(), "doc"));
  {
    auto f = split_fields(expect_key(in.line(), "canvas"));
    if (f.size() != 2) throw MalformedScript("canvas");
    h.canvas = {parse_uint<std::uint32_t>(f[0], "width"), parse_uint<std::uint32_t>(f[1], "height")};
  }
  h.total_duration = parse_uint<Millis>(expect_key(in.line(), "duration"), "duration");
  h.prefetch_lead_ms = parse_uint<Millis>(expect_key(in.line(), "prefetch-lead"), "prefetch-lead");

  const auto n_objects = parse_uint<std::uint32_t>(expect_key(in.line(), "objects"), "object count");
  for (std::uint32_t i = 0; i < n_objects; ++i) {
    auto f = split_fields(expect_key(in.line(), "object"));
    if (f.size() != 4) throw MalformedScript("object line");
    RefObject o{parse_uint<std::uint32_t>(f[0], "ref"), ObjectId{parse_uint<std::uint64_t>(f[1], "id")}, {},
                parse_uint<std::uint64_t>(f[3], "size")};
    try {
      o.mime_type = parse_mime(f[2]);
    } catch (const MalformedMime& e) {
      throw MalformedScript(e.what());
    }
    if (o.local_ref != i) throw MalformedScript("object refs not dense");
    h.ref_table.objects.push_back(std::move(o));
  }
  const auto n_instances = parse_uint<std::uint32_t>(expect_key(in.line(), "instances"), "instance count");
  for (std::uint32_t i = 0; i < n_instances; ++i) {
    auto f = split_fields(expect_key(in.line(), "instance"));
    if (f.size() != 3) throw MalformedScript("instance line");
    InstanceInfo inst{parse_uint<std::uint32_t>(f[0], "instance"), parse_uint<std::uint32_t>(f[1], "ref"), {}};
    if (inst.instance_id != i) throw MalformedScript("instance ids not dense");
    if (inst.local_ref >= n_objects) throw MalformedScript("instance ref out of range");
    std::string_view p = f[2];
    while (!p.empty()) {
      const auto dot = p.find('.');
      inst.path.push_back(parse_uint<std::uint32_t>(p.substr(0, dot), "path"));
      p = dot == std::string_view::npos ? std::string_view{} : p.substr(dot + 1);
    }
    h.ref_table.instances.push_back(std::move(inst));
  }
  const auto n_events = parse_uint<std::uint32_t>(expect_key(in.line(), "events"), "event count");
  for (std::uint32_t i = 0; i < n_events; ++i) {
    auto f = split_fields(in.line());
    if (f.size() < 2) throw MalformedScript("event line");
    FlowEvent ev;
    ev.at = parse_uint<Millis>(f[0], "time");
    if (f[1] == "prefetch" && f.size() == 3) {
      ev.kind = event::Prefetch{parse_uint<std::uint32_t>(f[2], "ref")};
    } else if (f[1] == "hide" && f.size() == 3) {
      ev.kind = event::Hide{parse_uint<std::uint32_t>(f[2], "instance")};
    } else if (f[1] == "show" && f.size() == 12) {
      event::Show sh;
      sh.instance_id = parse_uint<std::uint32_t>(f[2], "instance");
      sh.local_ref = parse_uint<std::uint32_t>(f[3], "ref");
      sh.rect = {parse_decimal(f[4], "x"), parse_decimal(f[5], "y"), parse_decimal(f[6], "w"),
                 parse_decimal(f[7], "h")};
      sh.z = parse_uint<std::uint32_t>(f[8], "z");
      auto bg = f[9].size() == 8 ? parse_rgba_hex(f[9]) : std::nullopt;
      if (!bg) throw MalformedScript("colour");
      sh.params.background_color = *bg;
      sh.params.font_scale = parse_decimal(f[10], "font scale");
      auto mode = scale_mode_from_string(f[11]);
      if (!mode) throw MalformedScript("scale mode");
      sh.params.scale_mode = *mode;
      ev.kind = sh;
    } else if (f[1] == "end" && f.size() == 2) {
      ev.kind = event::End{};
    } else {
      throw MalformedScript("unknown event at line " + std::to_string(in.line_no()));
    }
    if (!s.events.empty() && event_order(ev, s.events.back())) throw MalformedScript("events out of order");
    s.events.push_back(std::move(ev));
  }
  if (!in.done()) throw MalformedScript("trailing data");
  return s;
}

}  // namespace mobit
