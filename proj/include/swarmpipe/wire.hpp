#pragma once

// Framed wire messages and their payload codecs.
//
// Frame: "SWP1" | kind:u8 | session:16 bytes | length:u64 | payload | checksum:u64
// All integers little-endian; the checksum is FNV-1a over the payload bytes.
// See docs/wire.md for per-kind payload layouts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swarmpipe/tensor.hpp"

namespace swarmpipe {

enum class MessageKind : std::uint8_t {
  open_session = 0,
  step = 1,
  step_result = 2,
  restore = 3,
  reorder = 4,
  forward = 5,
  backward = 6,
  ping = 7,
  pong = 8,
  announce = 9,
  close = 10,
  error = 11,
};

const char* to_string(MessageKind kind) noexcept;

using SessionId = std::array<std::uint8_t, 16>;

std::string to_hex(const SessionId& id);

struct WireMessage {
  MessageKind kind = MessageKind::ping;
  SessionId session{};
  std::vector<std::uint8_t> payload;

  std::uint64_t checksum() const noexcept { return fnv1a(payload); }
};

constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 16 + 8;
constexpr std::size_t kFrameTrailerBytes = 8;

constexpr std::size_t framed_size(std::size_t payload_bytes) noexcept {
  return kFrameHeaderBytes + payload_bytes + kFrameTrailerBytes;
}
inline std::size_t framed_size(const WireMessage& m) noexcept { return framed_size(m.payload.size()); }

std::vector<std::uint8_t> encode_frame(const WireMessage& m);
// Throws ProtocolError on bad magic, kind, length or checksum.
WireMessage decode_frame(std::span<const std::uint8_t> frame);
// Parses the 29-byte header; returns the payload length it announces.
std::uint64_t frame_payload_length(std::span<const std::uint8_t, kFrameHeaderBytes> header);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(v); }
  void f64(double v) { put(v); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void floats(std::span<const float> f);
  void str(const std::string& s);
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::size_t size() const noexcept { return out_.size(); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void floats(std::span<float> out);
  std::span<const std::uint8_t> bytes(std::size_t n);
  std::string str();
  bool done() const noexcept { return pos_ == in_.size(); }
  void expect_done() const;

 private:
  template <class T>
  T get();
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

enum class ActivationEncoding : std::uint8_t { f32 = 0, q8 = 1 };

void write_hidden(ByteWriter& w, const HiddenStates& h, ActivationEncoding enc);
HiddenStates read_hidden(ByteReader& r);
void write_batch(ByteWriter& w, std::span<const HiddenStates> batch, ActivationEncoding enc);
std::vector<HiddenStates> read_batch(ByteReader& r);

enum class ErrorCode : std::uint16_t {
  not_serving = 1,
  desync = 2,
  session_expired = 3,
  unknown_session = 4,
  capacity = 5,
  bad_request = 6,
  no_forward_record = 7,
  index_out_of_range = 8,
  relay_missing = 9,
  checksum_mismatch = 10,
};

const char* to_string(ErrorCode code) noexcept;

struct OpenSessionRequest {
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  bool quantized = false;
};

// Where a server should push its outputs in direct-relay mode.
struct RelayTarget {
  std::string address;
  SessionId session{};
};

struct StepRequest {
  std::vector<HiddenStates> batch;  // empty when inputs arrive by relay
  bool from_relay = false;
  std::uint64_t relay_checksum = 0;  // expected checksum of the relayed payload
  std::optional<RelayTarget> relay_to;
};

struct RestoreRequest {
  std::vector<HiddenStates> batch;  // past inputs, one entry per beam
  bool want_outputs = false;        // reply with outputs for every position
};

struct ForwardRequest {
  std::vector<HiddenStates> batch;
  bool record = false;  // keep inputs for a matching BACKWARD
};

struct ErrorReply {
  ErrorCode code = ErrorCode::bad_request;
  std::string message;
};

WireMessage make_open_session(const SessionId& s, const OpenSessionRequest& req);
OpenSessionRequest parse_open_session(const WireMessage& m);

WireMessage make_step(const SessionId& s, const StepRequest& req, ActivationEncoding enc);
StepRequest parse_step(const WireMessage& m);

// STEP_RESULT carries a batch of activations; it answers STEP, RESTORE,
// FORWARD and BACKWARD.
WireMessage make_activations(MessageKind kind, const SessionId& s,
                             std::span<const HiddenStates> batch, ActivationEncoding enc);
std::vector<HiddenStates> parse_activations(const WireMessage& m);

WireMessage make_restore(const SessionId& s, const RestoreRequest& req);
RestoreRequest parse_restore(const WireMessage& m);

WireMessage make_forward(const SessionId& s, const ForwardRequest& req, ActivationEncoding enc);
ForwardRequest parse_forward(const WireMessage& m);

WireMessage make_reorder(const SessionId& s, std::span<const std::uint32_t> indices);
std::vector<std::uint32_t> parse_reorder(const WireMessage& m);

WireMessage make_error(const SessionId& s, const ErrorReply& e);
ErrorReply parse_error(const WireMessage& m);

WireMessage make_empty(MessageKind kind, const SessionId& s = {});

// STEP, STEP_RESULT, RESTORE, FORWARD and BACKWARD move activations or
// gradients; only these are subject to simulated loss.
bool carries_activations(MessageKind kind) noexcept;

// Checksum of a batch as it would be encoded in f32 form; used to verify
// relayed activations.
std::uint64_t batch_checksum(std::span<const HiddenStates> batch);

}  // namespace swarmpipe
