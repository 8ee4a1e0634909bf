#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mobit/error.hpp"

namespace mobit {

using Millis = std::uint64_t;
using Bytes = std::vector<std::uint8_t>;

struct ObjectId {
  std::uint64_t value = 0;

  constexpr auto operator<=>(const ObjectId&) const = default;
};

inline std::string to_string(ObjectId id) { return std::to_string(id.value); }

class UnknownId : public Error {
 public:
  explicit UnknownId(ObjectId id)
      : Error("unknown object id " + to_string(id)), id_(id) {}
  ObjectId id() const { return id_; }

 private:
  ObjectId id_;
};

class MalformedMime : public Error {
 public:
  explicit MalformedMime(std::string_view text)
      : Error("malformed mime type '" + std::string(text) + "'") {}
};

/// Placement in time relative to the parent. An absent duration is open:
/// the child lasts until its parent ends.
struct TimeSpec {
  Millis start_offset = 0;
  std::optional<Millis> duration;

  static TimeSpec open(Millis start = 0) { return {start, std::nullopt}; }
  static TimeSpec finite(Millis start, Millis duration) {
    if (duration == 0) throw Error("finite duration must be positive");
    return {start, duration};
  }
  bool is_open() const { return !duration.has_value(); }

  bool operator==(const TimeSpec&) const = default;
};

/// Placement in space as unit fractions of the parent region.
struct Region {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  static constexpr Region full() { return {0.0, 0.0, 1.0, 1.0}; }
  bool has_area() const { return w > 0.0 && h > 0.0; }
  bool within_unit_square() const {
    return x >= 0.0 && y >= 0.0 && x + w <= 1.0 && y + h <= 1.0;
  }

  bool operator==(const Region&) const = default;
};

struct Rgba {
  std::uint8_t r = 0, g = 0, b = 0, a = 0;
  bool operator==(const Rgba&) const = default;
};

enum class ScaleMode : std::uint8_t { fit, fill, stretch };

inline std::string_view to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::fit: return "fit";
    case ScaleMode::fill: return "fill";
    case ScaleMode::stretch: return "stretch";
  }
  return "fit";
}

inline std::optional<ScaleMode> scale_mode_from_string(std::string_view s) {
  if (s == "fit") return ScaleMode::fit;
  if (s == "fill") return ScaleMode::fill;
  if (s == "stretch") return ScaleMode::stretch;
  return std::nullopt;
}

/// Per-entry presentation parameters. Absent fields inherit from the parent.
struct ParamSet {
  std::optional<Rgba> background_color;
  std::optional<double> font_scale;  // multiplies the inherited scale
  std::optional<ScaleMode> scale_mode;

  bool empty() const {
    return !background_color && !font_scale && !scale_mode;
  }
  bool operator==(const ParamSet&) const = default;
};

/// ParamSet with every field decided.
struct ResolvedParams {
  Rgba background_color{0, 0, 0, 0};
  double font_scale = 1.0;
  ScaleMode scale_mode = ScaleMode::fit;

  ResolvedParams inherit(const ParamSet& p) const {
    ResolvedParams out = *this;
    if (p.background_color) out.background_color = *p.background_color;
    if (p.font_scale) out.font_scale *= *p.font_scale;
    if (p.scale_mode) out.scale_mode = *p.scale_mode;
    return out;
  }
  bool operator==(const ResolvedParams&) const = default;
};

struct PlaylistEntry {
  ObjectId target;
  Region region = Region::full();
  TimeSpec time;
  ParamSet params;

  bool operator==(const PlaylistEntry&) const = default;
};

struct Mob {
  ObjectId id;
  std::string name;
  std::vector<PlaylistEntry> playlist;  // document order is z-order

  bool operator==(const Mob&) const = default;
};

struct MimeType {
  std::string type;
  std::string subtype;

  std::string str() const { return type + "/" + subtype; }
  /// Live types carry no static payload; a sub-server feeds them.
  bool is_live() const { return subtype.rfind("x-live", 0) == 0; }
  bool operator==(const MimeType&) const = default;
};

namespace detail {
inline bool is_mime_token_char(unsigned char c) {
  if (c <= 0x20 || c >= 0x7f) return false;
  constexpr std::string_view tspecials = "()<>@,;:\\\"/[]?=";
  return tspecials.find(static_cast<char>(c)) == std::string_view::npos;
}
}  // namespace detail

/// Splits `type/subtype` and lowercases both tokens.
inline MimeType parse_mime(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) throw MalformedMime(text);
  auto type = text.substr(0, slash);
  auto subtype = text.substr(slash + 1);
  auto token_ok = [](std::string_view t) {
    return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) {
      return detail::is_mime_token_char(static_cast<unsigned char>(c));
    });
  };
  if (!token_ok(type) || !token_ok(subtype)) throw MalformedMime(text);
  auto lower = [](std::string_view t) {
    std::string s(t);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  return {lower(type), lower(subtype)};
}

struct InlinePayload {
  Bytes bytes;
  bool operator==(const InlinePayload&) const = default;
};

/// Opaque key into an external payload store.
struct StoreKey {
  std::string key;
  bool operator==(const StoreKey&) const = default;
};

using Payload = std::variant<InlinePayload, StoreKey>;

struct PixelSize {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  bool operator==(const PixelSize&) const = default;
};

struct Element {
  ObjectId id;
  std::string name;
  MimeType mime_type;
  Payload payload = InlinePayload{};
  std::optional<PixelSize> intrinsic_size;

  bool payload_empty() const {
    if (auto* p = std::get_if<InlinePayload>(&payload)) return p->bytes.empty();
    return std::get<StoreKey>(payload).key.empty();
  }
  bool operator==(const Element&) const = default;
};

struct Document {
  std::string id;
  ObjectId root;
  PixelSize canvas;
  Millis total_duration = 0;
  std::map<ObjectId, Mob> mobs;
  std::map<ObjectId, Element> elements;

  bool operator==(const Document&) const = default;
};

using NodeRef = std::variant<const Mob*, const Element*>;

inline NodeRef resolve(const Document& doc, ObjectId id) {
  if (auto it = doc.mobs.find(id); it != doc.mobs.end()) return &it->second;
  if (auto it = doc.elements.find(id); it != doc.elements.end()) return &it->second;
  throw UnknownId(id);
}

inline const Mob* as_mob(NodeRef n) {
  auto* m = std::get_if<const Mob*>(&n);
  return m ? *m : nullptr;
}

inline const Element* as_element(NodeRef n) {
  auto* e = std::get_if<const Element*>(&n);
  return e ? *e : nullptr;
}

/// Size in bytes of an element's payload, used by the compiler's ref table.
using PayloadSizer = std::function<std::uint64_t(const Element&)>;

inline std::uint64_t inline_payload_size(const Element& e) {
  if (auto* p = std::get_if<InlinePayload>(&e.payload)) return p->bytes.size();
  return 0;
}

}  // namespace mobit

template <>
struct std::hash<mobit::ObjectId> {
  std::size_t operator()(mobit::ObjectId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
