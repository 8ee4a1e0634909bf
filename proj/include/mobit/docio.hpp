#pragma once

#include <boost/beast/core/detail/base64.hpp>
#include <boost/property_tree/detail/rapidxml.hpp>

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mobit/flow.hpp"
#include "mobit/model.hpp"

// The .mobit.xml vocabulary (schema/mobit.xsd):
//
//   <mobit version="1" id=".." root="ID" canvas="WxH" duration="MS">
//     <mob id="ID" name="..">
//       <entry ref="ID" x=".." y=".." w=".." h=".." start="MS" dur="MS|open"
//              bg="#rrggbb[aa]" font-scale=".." scale="fit|fill|stretch"/>
//     </mob>
//     <element id="ID" name=".." type="type/subtype" src="key" width="PX" height="PX"/>
//     <element id="ID" name=".." type="text/plain">BASE64</element>
//   </mobit>

namespace mobit {

class DocumentError : public Error {
 public:
  using Error::Error;
};

class XmlSyntax : public DocumentError {
 public:
  XmlSyntax(std::size_t line, std::size_t col, const std::string& what)
      : DocumentError("xml syntax error at " + std::to_string(line) + ":" + std::to_string(col) + ": " + what),
        line_(line),
        col_(col) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return col_; }

 private:
  std::size_t line_;
  std::size_t col_;
};

class SchemaError : public DocumentError {
 public:
  SchemaError(std::string path, const std::string& reason)
      : DocumentError("schema error at " + path + ": " + reason), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class DuplicateId : public DocumentError {
 public:
  explicit DuplicateId(ObjectId id) : DocumentError("duplicate id " + to_string(id)), id_(id) {}
  ObjectId id() const { return id_; }

 private:
  ObjectId id_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// -- base64 ------------------------------------------------------------------

inline std::string base64_encode(const Bytes& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

/// Whitespace is ignored; anything else that is not padded base64 fails.
inline std::optional<Bytes> base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::string s;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) s += c;
  }
  if (s.size() % 4 != 0) return std::nullopt;
  const auto body = s.find('=');
  if (body != std::string::npos) {
    if (s.size() - body > 2 || s.find_first_not_of('=', body) != std::string::npos) return std::nullopt;
  }
  const std::size_t body_len = body == std::string::npos ? s.size() : body;
  Bytes out(b64::decoded_size(s.size()) + 3);
  auto [written, read] = b64::decode(out.data(), s.data(), s.size());
  if (read != body_len) return std::nullopt;
  out.resize(written);
  return out;
}

// -- parsing -----------------------------------------------------------------

namespace detail {

namespace rx = boost::property_tree::detail::rapidxml;

inline std::string_view name_of(const rx::xml_node<char>* n) { return {n->name(), n->name_size()}; }
inline std::string_view name_of(const rx::xml_attribute<char>* a) { return {a->name(), a->name_size()}; }
inline std::string_view value_of(const rx::xml_attribute<char>* a) { return {a->value(), a->value_size()}; }

class AttrReader {
 public:
  AttrReader(const rx::xml_node<char>* node, std::string path, std::set<std::string_view> allowed)
      : node_(node), path_(std::move(path)) {
    std::set<std::string_view> seen;
    for (auto* a = node->first_attribute(); a; a = a->next_attribute()) {
      if (!allowed.count(name_of(a))) fail("unexpected attribute '" + std::string(name_of(a)) + "'");
      if (!seen.insert(name_of(a)).second) fail("repeated attribute '" + std::string(name_of(a)) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& reason) const { throw SchemaError(path_, reason); }

  std::optional<std::string_view> get(std::string_view key) const {
    for (auto* a = node_->first_attribute(); a; a = a->next_attribute()) {
      if (name_of(a) == key) return value_of(a);
    }
    return std::nullopt;
  }

  std::string_view require(std::string_view key) const {
    auto v = get(key);
    if (!v) fail("missing attribute '" + std::string(key) + "'");
    return *v;
  }

  template <typename T>
  T to_uint(std::string_view key, std::string_view v) const {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) {
      fail("attribute '" + std::string(key) + "' is not an unsigned integer");
    }
    return out;
  }

  template <typename T>
  T uint(std::string_view key) const { return to_uint<T>(key, require(key)); }

  template <typename T>
  T uint_or(std::string_view key, T fallback) const {
    auto v = get(key);
    return v ? to_uint<T>(key, *v) : fallback;
  }

  double decimal_or(std::string_view key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    double out{};
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (v->empty() || ec != std::errc{} || p != v->data() + v->size() || !std::isfinite(out)) {
      fail("attribute '" + std::string(key) + "' is not a decimal number");
    }
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  const rx::xml_node<char>* node_;
  std::string path_;
};

inline ObjectId parse_object_id(const AttrReader& attrs, std::string_view key) {
  const ObjectId id{attrs.uint<std::uint64_t>(key)};
  if (id.value == 0) attrs.fail("object ids must be positive");
  return id;
}

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

inline PlaylistEntry parse_entry(const rx::xml_node<char>* node, const std::string& path) {
  AttrReader a(node, path, {"ref", "x", "y", "w", "h", "start", "dur", "bg", "font-scale", "scale"});
  if (node->first_node()) a.fail("entry must be empty");
  PlaylistEntry e;
  e.target = parse_object_id(a, "ref");
  e.region = {a.decimal_or("x", 0.0), a.decimal_or("y", 0.0), a.decimal_or("w", 1.0), a.decimal_or("h", 1.0)};
  if (!e.region.has_area()) a.fail("region width and height must be positive");
  e.time.start_offset = a.uint_or<Millis>("start", 0);
  if (auto dur = a.get("dur"); dur && *dur != "open") {
    e.time.duration = a.to_uint<Millis>("dur", *dur);
    if (*e.time.duration == 0) a.fail("finite duration must be positive");
  }
  if (auto bg = a.get("bg")) {
    auto colour = bg->size() > 1 && bg->front() == '#' ? parse_rgba_hex(bg->substr(1)) : std::nullopt;
    if (!colour) a.fail("bg must be #rrggbb or #rrggbbaa");
    e.params.background_color = colour;
  }
  if (a.get("font-scale")) {
    const double fs = a.decimal_or("font-scale", 1.0);
    if (!(fs > 0.0)) a.fail("font-scale must be positive");
    e.params.font_scale = fs;
  }
  if (auto sm = a.get("scale")) {
    e.params.scale_mode = scale_mode_from_string(*sm);
    if (!e.params.scale_mode) a.fail("scale must be fit, fill or stretch");
  }
  return e;
}

inline Element parse_element(const rx::xml_node<char>* node, const std::string& path) {
  AttrReader a(node, path, {"id", "name", "type", "src", "width", "height"});
  Element e;
  e.id = parse_object_id(a, "id");
  e.name = std::string(a.get("name").value_or(""));
  try {
    e.mime_type = parse_mime(a.require("type"));
  } catch (const MalformedMime& err) {
    a.fail(err.what());
  }
  if (a.get("width") || a.get("height")) {
    e.intrinsic_size = PixelSize{a.uint<std::uint32_t>("width"), a.uint<std::uint32_t>("height")};
  }

  std::string text;
  for (auto* child = node->first_node(); child; child = child->next_sibling()) {
    if (child->type() == rx::node_data || child->type() == rx::node_cdata) {
      text.append(child->value(), child->value_size());
    } else if (child->type() == rx::node_element) {
      a.fail("element may only contain base64 text");
    }
  }
  const auto src = a.get("src");
  if (src && !is_blank(text)) a.fail("element has both src and inline payload");
  if (src) {
    if (src->empty()) a.fail("src must not be empty");
    e.payload = StoreKey{std::string(*src)};
  } else {
    auto bytes = base64_decode(text);
    if (!bytes) a.fail("inline payload is not valid base64");
    e.payload = InlinePayload{std::move(*bytes)};
  }
  if (e.payload_empty() && !e.mime_type.is_live()) a.fail("static element needs a payload");
  return e;
}

inline std::pair<std::size_t, std::size_t> line_col(const char* begin, const char* where) {
  std::size_t line = 1, col = 1;
  for (const char* p = begin; p < where && *p; ++p) {
    if (*p == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

/// Parses a .mobit.xml document and checks that every reference resolves.
inline Document parse_document(std::string_view xml) {
  namespace rx = detail::rx;
  if (const auto nul = xml.find('\0'); nul != std::string_view::npos) {
    auto [line, col] = detail::line_col(xml.data(), xml.data() + nul);
    throw XmlSyntax(line, col, "embedded NUL");
  }
  std::vector<char> buffer(xml.begin(), xml.end());
  buffer.push_back('\0');

  rx::xml_document<char> dom;
  try {
    dom.parse<rx::parse_validate_closing_tags>(buffer.data());
  } catch (const rx::parse_error& e) {
    // The parser writes terminators into its buffer; count on the original.
    const auto offset = static_cast<std::size_t>(e.where<char>() - buffer.data());
    auto [line, col] = detail::line_col(xml.data(), xml.data() + std::min(offset, xml.size()));
    throw XmlSyntax(line, col, e.what());
  }

  const rx::xml_node<char>* root = nullptr;
  for (auto* n = dom.first_node(); n; n = n->next_sibling()) {
    if (n->type() != rx::node_element) continue;
    if (root) throw SchemaError("/", "more than one top-level element");
    root = n;
  }
  if (!root || detail::name_of(root) != "mobit") throw SchemaError("/", "top-level element must be <mobit>");

  detail::AttrReader top(root, "/mobit", {"version", "id", "root", "canvas", "duration"});
  if (top.require("version") != "1") top.fail("unsupported version");
  Document doc;
  doc.id = std::string(top.get("id").value_or(""));
  if (doc.id.find_first_of(" \t\r\n") != std::string::npos) top.fail("document id must not contain whitespace");
  doc.root = detail::parse_object_id(top, "root");
  {
    const auto canvas = top.require("canvas");
    const auto x = canvas.find('x');
    if (x == std::string_view::npos) top.fail("canvas must be WIDTHxHEIGHT");
    doc.canvas = {top.to_uint<std::uint32_t>("canvas", canvas.substr(0, x)),
                  top.to_uint<std::uint32_t>("canvas", canvas.substr(x + 1))};
    if (doc.canvas.width == 0 || doc.canvas.height == 0) top.fail("canvas must be positive");
  }
  doc.total_duration = top.uint<Millis>("duration");
  if (doc.total_duration == 0) top.fail("duration must be positive");

  std::set<ObjectId> ids;
  auto claim = [&](ObjectId id) {
    if (!ids.insert(id).second) throw DuplicateId(id);
  };

  std::size_t index = 0;
  for (auto* n = root->first_node(); n; n = n->next_sibling()) {
    if (n->type() == rx::node_data || n->type() == rx::node_cdata) {
      if (!detail::is_blank({n->value(), n->value_size()})) throw SchemaError("/mobit", "unexpected text");
      continue;
    }
    if (n->type() != rx::node_element) continue;
    ++index;
    const auto name = detail::name_of(n);
    const std::string path = "/mobit/" + std::string(name) + "[" + std::to_string(index) + "]";
    if (name == "mob") {
      detail::AttrReader a(n, path, {"id", "name"});
      Mob mob;
      mob.id = detail::parse_object_id(a, "id");
      mob.name = std::string(a.get("name").value_or(""));
      std::size_t entry_index = 0;
      for (auto* c = n->first_node(); c; c = c->next_sibling()) {
        if (c->type() == rx::node_data || c->type() == rx::node_cdata) {
          if (!detail::is_blank({c->value(), c->value_size()})) a.fail("unexpected text");
          continue;
        }
        if (c->type() != rx::node_element) continue;
        ++entry_index;
        const std::string entry_path = path + "/entry[" + std::to_string(entry_index) + "]";
        if (detail::name_of(c) != "entry") throw SchemaError(entry_path, "mob may only contain <entry>");
        mob.playlist.push_back(detail::parse_entry(c, entry_path));
      }
      claim(mob.id);
      doc.mobs.emplace(mob.id, std::move(mob));
    } else if (name == "element") {
      Element e = detail::parse_element(n, path);
      claim(e.id);
      doc.elements.emplace(e.id, std::move(e));
    } else {
      throw SchemaError(path, "unknown element <" + std::string(name) + ">");
    }
  }

  if (!doc.mobs.count(doc.root)) throw SchemaError("/mobit", "root " + to_string(doc.root) + " is not a mob");
  for (const auto& [id, mob] : doc.mobs) {
    for (std::size_t i = 0; i < mob.playlist.size(); ++i) {
      const ObjectId target = mob.playlist[i].target;
      if (!doc.mobs.count(target) && !doc.elements.count(target)) {
        throw SchemaError("/mobit/mob[@id=" + to_string(id) + "]/entry[" + std::to_string(i + 1) + "]",
                          "unknown ref " + to_string(target));
      }
    }
  }
  return doc;
}

// -- canonical serialization -------------------------------------------------

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      case '\t': out += "&#9;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Shortest representation that parses back to the same double.
inline std::string shortest_decimal(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

/// Canonical form: fixed attribute order, mobs then elements by ascending
/// id, two-space indent, LF line endings.
inline std::string serialize_document(const Document& doc) {
  using detail::shortest_decimal;
  using detail::xml_escape;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<mobit version=\"1\"";
  if (!doc.id.empty()) os << " id=\"" << xml_escape(doc.id) << '"';
  os << " root=\"" << doc.root.value << "\" canvas=\"" << doc.canvas.width << 'x' << doc.canvas.height
     << "\" duration=\"" << doc.total_duration << "\">\n";
  for (const auto& [id, mob] : doc.mobs) {
    os << "  <mob id=\"" << id.value << "\" name=\"" << xml_escape(mob.name) << '"';
    if (mob.playlist.empty()) {
      os << "/>\n";
      continue;
    }
    os << ">\n";
    for (const auto& e : mob.playlist) {
      os << "    <entry ref=\"" << e.target.value << "\" x=\"" << shortest_decimal(e.region.x) << "\" y=\""
         << shortest_decimal(e.region.y) << "\" w=\"" << shortest_decimal(e.region.w) << "\" h=\""
         << shortest_decimal(e.region.h) << "\" start=\"" << e.time.start_offset << "\" dur=\"";
      if (e.time.duration) {
        os << *e.time.duration;
      } else {
        os << "open";
      }
      os << '"';
      if (e.params.background_color) os << " bg=\"#" << format_rgba(*e.params.background_color) << '"';
      if (e.params.font_scale) os << " font-scale=\"" << shortest_decimal(*e.params.font_scale) << '"';
      if (e.params.scale_mode) os << " scale=\"" << to_string(*e.params.scale_mode) << '"';
      os << "/>\n";
    }
    os << "  </mob>\n";
  }
  for (const auto& [id, e] : doc.elements) {
    os << "  <element id=\"" << id.value << "\" name=\"" << xml_escape(e.name) << "\" type=\""
       << e.mime_type.str() << '"';
    if (const auto* key = std::get_if<StoreKey>(&e.payload)) os << " src=\"" << xml_escape(key->key) << '"';
    if (e.intrinsic_size) {
      os << " width=\"" << e.intrinsic_size->width << "\" height=\"" << e.intrinsic_size->height << '"';
    }
    const auto* inline_payload = std::get_if<InlinePayload>(&e.payload);
    if (inline_payload && !inline_payload->bytes.empty()) {
      os << '>' << base64_encode(inline_payload->bytes) << "</element>\n";
    } else {
      os << "/>\n";
    }
  }
  os << "</mobit>\n";
  return os.str();
}

inline std::string canonicalize(std::string_view xml) { return serialize_document(parse_document(xml)); }

// -- files and payload stores ------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(content.data(), static_cast<std::streamsize>(content.size()))) {
    throw IoError("cannot write " + path.string());
  }
}

/// Loads a document file; a missing id defaults to the file name up to its
/// first dot.
inline Document load_document_file(const std::filesystem::path& path) {
  Document doc = parse_document(read_file(path));
  if (doc.id.empty()) {
    const auto name = path.filename().string();
    doc.id = name.substr(0, name.find('.'));
  }
  return doc;
}

/// Resolves store keys to files below a base directory.
class DirectoryStore {
 public:
  explicit DirectoryStore(std::filesystem::path base) : base_(std::move(base)) {}

  Bytes load(const std::string& key) const {
    const std::filesystem::path rel(key);
    if (rel.is_absolute() || std::any_of(rel.begin(), rel.end(), [](const auto& p) { return p == ".."; })) {
      throw IoError("store key escapes the store: " + key);
    }
    const std::string data = read_file(base_ / rel);
    return Bytes(data.begin(), data.end());
  }

 private:
  std::filesystem::path base_;
};

/// Materialised payload of one element: inline bytes or the store's bytes.
template <typename Store>
Bytes load_payload(const Element& e, const Store& store) {
  if (const auto* p = std::get_if<InlinePayload>(&e.payload)) return p->bytes;
  return store.load(std::get<StoreKey>(e.payload).key);
}

}  // namespace mobit
