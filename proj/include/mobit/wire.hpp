#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mobit/model.hpp"

// Frame layout, all integers big-endian:
//
//   type u8 | length u32 | payload[length]
//
//   HELLO        1  version u16, doc_id str
//   SERVER_INFO  2  count u16, count x { name str, target_mime str, nports u16, port u16... }
//   SCRIPT       3  flow script text (rest of payload)
//   DATA_REQ     4  local_ref u32
//   DATA_CHUNK   5  local_ref u32, offset u64, total u64, bytes (rest of payload)
//   STREAM_EVENT 6  port u16, at u64, bytes (rest of payload)
//   ERROR        7  code u16, msg str
//   BYE          8  (empty)
//
// str is a u16 byte count followed by UTF-8 bytes.

namespace mobit::wire {

inline constexpr std::size_t header_size = 5;
inline constexpr std::uint32_t max_payload = 16u * 1024u * 1024u;

enum class ErrorCode : std::uint16_t { unknown_doc = 1, unknown_ref = 2, protocol_violation = 3 };

struct SubserverDescriptor {
  std::string name;
  std::vector<std::uint16_t> ports;
  std::string target_mime;

  bool operator==(const SubserverDescriptor&) const = default;
};

struct Hello {
  std::uint16_t version = 1;
  std::string doc_id;
  bool operator==(const Hello&) const = default;
};

struct ServerInfo {
  std::vector<SubserverDescriptor> subservers;
  bool operator==(const ServerInfo&) const = default;
};

struct Script {
  std::string text;
  bool operator==(const Script&) const = default;
};

struct DataReq {
  std::uint32_t local_ref = 0;
  bool operator==(const DataReq&) const = default;
};

struct DataChunk {
  std::uint32_t local_ref = 0;
  std::uint64_t offset = 0;
  std::uint64_t total = 0;
  Bytes bytes;
  bool operator==(const DataChunk&) const = default;
};

struct StreamEvent {
  std::uint16_t port = 0;
  std::uint64_t at = 0;
  Bytes bytes;
  bool operator==(const StreamEvent&) const = default;
};

struct ErrorMsg {
  std::uint16_t code = 0;
  std::string message;
  bool operator==(const ErrorMsg&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

// Alternative index + 1 is the type code.
using Message = std::variant<Hello, ServerInfo, Script, DataReq, DataChunk, StreamEvent, ErrorMsg, Bye>;

inline std::uint8_t type_code(const Message& m) { return static_cast<std::uint8_t>(m.index() + 1); }

inline std::string_view type_name(const Message& m) {
  static constexpr std::string_view names[] = {"HELLO",        "SERVER_INFO", "SCRIPT", "DATA_REQ",
                                               "DATA_CHUNK",   "STREAM_EVENT", "ERROR", "BYE"};
  return names[m.index()];
}

class WireError : public Error {
 public:
  enum class Reason : std::uint8_t { truncated, bad_type, oversize, malformed };

  WireError(Reason r, const std::string& what) : Error(what), reason_(r) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { be(v, 2); }
  void u32(std::uint32_t v) { be(v, 4); }
  void u64(std::uint64_t v) { be(v, 8); }
  void str(std::string_view s) {
    if (s.size() > 0xFFFF) throw WireError(WireError::Reason::oversize, "string longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  Bytes take() { return std::move(out_); }

 private:
  void be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(be(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(be(4)); }
  std::uint64_t u64() { return be(8); }
  std::string str() {
    const auto n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Bytes rest() {
    Bytes b(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.end());
    pos_ = in_.size();
    return b;
  }
  void finish() const {
    if (pos_ != in_.size()) throw WireError(WireError::Reason::malformed, "trailing bytes in payload");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw WireError(WireError::Reason::malformed, "payload shorter than its fields");
  }
  std::uint64_t be(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline Bytes encode_payload(const Message& msg) {
  Writer w;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Hello>) {
          w.u16(m.version);
          w.str(m.doc_id);
        } else if constexpr (std::is_same_v<M, ServerInfo>) {
          if (m.subservers.size() > 0xFFFF) throw WireError(WireError::Reason::oversize, "too many subservers");
          w.u16(static_cast<std::uint16_t>(m.subservers.size()));
          for (const auto& d : m.subservers) {
            w.str(d.name);
            w.str(d.target_mime);
            if (d.ports.size() > 0xFFFF) throw WireError(WireError::Reason::oversize, "too many ports");
            w.u16(static_cast<std::uint16_t>(d.ports.size()));
            for (auto p : d.ports) w.u16(p);
          }
        } else if constexpr (std::is_same_v<M, Script>) {
          w.raw(std::string_view(m.text));
        } else if constexpr (std::is_same_v<M, DataReq>) {
          w.u32(m.local_ref);
        } else if constexpr (std::is_same_v<M, DataChunk>) {
          w.u32(m.local_ref);
          w.u64(m.offset);
          w.u64(m.total);
          w.raw(m.bytes);
        } else if constexpr (std::is_same_v<M, StreamEvent>) {
          w.u16(m.port);
          w.u64(m.at);
          w.raw(m.bytes);
        } else if constexpr (std::is_same_v<M, ErrorMsg>) {
          w.u16(m.code);
          w.str(m.message);
        }
      },
      msg);
  return w.take();
}

inline Message decode_payload(std::uint8_t type, std::span<const std::uint8_t> payload) {
  Reader r(payload);
  Message out;
  switch (type) {
    case 1: {
      Hello m;
      m.version = r.u16();
      m.doc_id = r.str();
      out = std::move(m);
      break;
    }
    case 2: {
      ServerInfo m;
      const auto n = r.u16();
      for (std::uint16_t i = 0; i < n; ++i) {
        SubserverDescriptor d;
        d.name = r.str();
        d.target_mime = r.str();
        const auto np = r.u16();
        for (std::uint16_t j = 0; j < np; ++j) d.ports.push_back(r.u16());
        m.subservers.push_back(std::move(d));
      }
      out = std::move(m);
      break;
    }
    case 3: {
      const Bytes b = r.rest();
      out = Script{std::string(b.begin(), b.end())};
      break;
    }
    case 4: out = DataReq{r.u32()}; break;
    case 5: {
      DataChunk m;
      m.local_ref = r.u32();
      m.offset = r.u64();
      m.total = r.u64();
      m.bytes = r.rest();
      if (m.offset > m.total || m.bytes.size() > m.total - m.offset) {
        throw WireError(WireError::Reason::malformed, "chunk exceeds its declared total");
      }
      out = std::move(m);
      break;
    }
    case 6: {
      StreamEvent m;
      m.port = r.u16();
      m.at = r.u64();
      m.bytes = r.rest();
      out = std::move(m);
      break;
    }
    case 7: {
      ErrorMsg m;
      m.code = r.u16();
      m.message = r.str();
      out = std::move(m);
      break;
    }
    case 8: out = Bye{}; break;
    default: throw WireError(WireError::Reason::bad_type, "unknown frame type " + std::to_string(type));
  }
  r.finish();
  return out;
}

}  // namespace detail

inline Bytes encode_frame(const Message& msg) {
  Bytes payload = detail::encode_payload(msg);
  if (payload.size() > max_payload) throw WireError(WireError::Reason::oversize, "payload exceeds 16 MiB");
  detail::Writer w;
  w.u8(type_code(msg));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  Bytes frame = w.take();
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

/// Total size of the frame at the front of `in`, or nothing while the
/// header is incomplete. Rejects bad types and oversize lengths from the
/// header alone.
inline std::optional<std::size_t> peek_frame_size(std::span<const std::uint8_t> in) {
  if (in.size() < header_size) return std::nullopt;
  if (in[0] < 1 || in[0] > 8) throw WireError(WireError::Reason::bad_type, "unknown frame type " + std::to_string(in[0]));
  const std::uint32_t len = (std::uint32_t{in[1]} << 24) | (std::uint32_t{in[2]} << 16) |
                            (std::uint32_t{in[3]} << 8) | std::uint32_t{in[4]};
  if (len > max_payload) throw WireError(WireError::Reason::oversize, "frame length exceeds 16 MiB");
  return header_size + len;
}

struct Decoded {
  Message message;
  std::size_t consumed = 0;
};

/// Decodes exactly one frame from the front of `in`.
inline Decoded decode_frame(std::span<const std::uint8_t> in) {
  const auto size = peek_frame_size(in);
  if (!size || in.size() < *size) throw WireError(WireError::Reason::truncated, "need more bytes");
  return {detail::decode_payload(in[0], in.subspan(header_size, *size - header_size)), *size};
}

/// Reassembles frames from an arbitrarily split byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  std::optional<Message> next() {
    const std::span<const std::uint8_t> pending(buf_.data() + start_, buf_.size() - start_);
    const auto size = peek_frame_size(pending);
    if (!size || pending.size() < *size) return std::nullopt;
    Decoded d = decode_frame(pending);
    start_ += d.consumed;
    if (start_ == buf_.size()) {
      buf_.clear();
      start_ = 0;
    } else if (start_ > 1u << 20) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(start_));
      start_ = 0;
    }
    return std::move(d.message);
  }

  std::size_t buffered() const { return buf_.size() - start_; }

 private:
  Bytes buf_;
  std::size_t start_ = 0;
};

}  // namespace mobit::wire
