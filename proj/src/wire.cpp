#include "swarmpipe/wire.hpp"

#include <bit>
#include <cstring>

#include "swarmpipe/errors.hpp"
#include "swarmpipe/quantize.hpp"

namespace swarmpipe {

static_assert(std::endian::native == std::endian::little,
              "wire codec assumes a little-endian host");

namespace {
constexpr std::array<std::uint8_t, 4> kMagic{'S', 'W', 'P', '1'};
constexpr std::uint8_t kMaxKind = static_cast<std::uint8_t>(MessageKind::error);
}  // namespace

const char* to_string(MessageKind kind) noexcept {
  switch (kind) {
    case MessageKind::open_session: return "OPEN_SESSION";
    case MessageKind::step: return "STEP";
    case MessageKind::step_result: return "STEP_RESULT";
    case MessageKind::restore: return "RESTORE";
    case MessageKind::reorder: return "REORDER";
    case MessageKind::forward: return "FORWARD";
    case MessageKind::backward: return "BACKWARD";
    case MessageKind::ping: return "PING";
    case MessageKind::pong: return "PONG";
    case MessageKind::announce: return "ANNOUNCE";
    case MessageKind::close: return "CLOSE";
    case MessageKind::error: return "ERROR";
  }
  return "?";
}

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::not_serving: return "not_serving";
    case ErrorCode::desync: return "desync";
    case ErrorCode::session_expired: return "session_expired";
    case ErrorCode::unknown_session: return "unknown_session";
    case ErrorCode::capacity: return "capacity";
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::no_forward_record: return "no_forward_record";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::relay_missing: return "relay_missing";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
  }
  return "?";
}

std::string to_hex(const SessionId& id) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::uint8_t b : id) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

void ByteWriter::floats(std::span<const float> f) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(f.data());
  out_.insert(out_.end(), p, p + f.size_bytes());
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.insert(out_.end(), s.begin(), s.end());
}

template <class T>
T ByteReader::get() {
  if (in_.size() - pos_ < sizeof(T)) throw ProtocolError("truncated payload");
  T v;
  std::memcpy(&v, in_.data() + pos_, sizeof(T));
  pos_ += sizeof(T);
  return v;
}

std::uint8_t ByteReader::u8() { return get<std::uint8_t>(); }
std::uint16_t ByteReader::u16() { return get<std::uint16_t>(); }
std::uint32_t ByteReader::u32() { return get<std::uint32_t>(); }
std::uint64_t ByteReader::u64() { return get<std::uint64_t>(); }
float ByteReader::f32() { return get<float>(); }
double ByteReader::f64() { return get<double>(); }

void ByteReader::floats(std::span<float> out) {
  if (in_.size() - pos_ < out.size_bytes()) throw ProtocolError("truncated payload");
  std::memcpy(out.data(), in_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (in_.size() - pos_ < n) throw ProtocolError("truncated payload");
  auto s = in_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::str() {
  const auto n = u32();
  const auto b = bytes(n);
  return {b.begin(), b.end()};
}

void ByteReader::expect_done() const {
  if (!done()) throw ProtocolError("trailing bytes in payload");
}

std::vector<std::uint8_t> encode_frame(const WireMessage& m) {
  ByteWriter w;
  w.reserve(framed_size(m));
  w.bytes(kMagic);
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.bytes(m.session);
  w.u64(m.payload.size());
  w.bytes(m.payload);
  w.u64(m.checksum());
  return w.take();
}

std::uint64_t frame_payload_length(std::span<const std::uint8_t, kFrameHeaderBytes> header) {
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) throw ProtocolError("bad frame magic");
  if (header[4] > kMaxKind) throw ProtocolError("unknown message kind");
  std::uint64_t len;
  std::memcpy(&len, header.data() + 21, 8);
  return len;
}

WireMessage decode_frame(std::span<const std::uint8_t> frame) {
  if (frame.size() < kFrameHeaderBytes + kFrameTrailerBytes) throw ProtocolError("frame too short");
  const std::uint64_t len = frame_payload_length(frame.first<kFrameHeaderBytes>());
  if (frame.size() != framed_size(len)) throw ProtocolError("frame length mismatch");
  ByteReader r(frame);
  r.bytes(4);
  WireMessage m;
  m.kind = static_cast<MessageKind>(r.u8());
  const auto sid = r.bytes(16);
  std::copy(sid.begin(), sid.end(), m.session.begin());
  r.u64();
  const auto payload = r.bytes(len);
  m.payload.assign(payload.begin(), payload.end());
  if (r.u64() != m.checksum()) throw ProtocolError("frame checksum mismatch");
  return m;
}

void write_hidden(ByteWriter& w, const HiddenStates& h, ActivationEncoding enc) {
  w.u8(static_cast<std::uint8_t>(enc));
  w.u64(h.position_offset);
  w.u32(static_cast<std::uint32_t>(h.values.rows()));
  w.u32(static_cast<std::uint32_t>(h.values.cols()));
  if (enc == ActivationEncoding::f32) {
    w.floats(h.values.data());
    return;
  }
  const QuantizedHidden q = quantize_hidden(h);
  w.u32(static_cast<std::uint32_t>(q.block_size));
  w.floats(q.scales);
  w.bytes({reinterpret_cast<const std::uint8_t*>(q.codes.data()), q.codes.size()});
}

HiddenStates read_hidden(ByteReader& r) {
  const auto enc = r.u8();
  const std::size_t offset = r.u64();
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  if (enc == static_cast<std::uint8_t>(ActivationEncoding::f32)) {
    HiddenStates h;
    h.position_offset = offset;
    h.values = Matrix(rows, cols);
    r.floats(h.values.data());
    return h;
  }
  if (enc != static_cast<std::uint8_t>(ActivationEncoding::q8))
    throw ProtocolError("unknown activation encoding");
  QuantizedHidden q;
  q.rows = rows;
  q.cols = cols;
  q.position_offset = offset;
  q.block_size = r.u32();
  if (q.block_size == 0) throw ProtocolError("zero quantization block size");
  q.scales.resize((rows * cols + q.block_size - 1) / q.block_size);
  r.floats(q.scales);
  const auto codes = r.bytes(rows * cols);
  q.codes.resize(codes.size());
  std::memcpy(q.codes.data(), codes.data(), codes.size());
  return dequantize_hidden(q);
}

void write_batch(ByteWriter& w, std::span<const HiddenStates> batch, ActivationEncoding enc) {
  w.u32(static_cast<std::uint32_t>(batch.size()));
  for (const auto& h : batch) write_hidden(w, h, enc);
}

std::vector<HiddenStates> read_batch(ByteReader& r) {
  const auto n = r.u32();
  std::vector<HiddenStates> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_hidden(r));
  return out;
}

namespace {

void expect_kind(const WireMessage& m, MessageKind kind) {
  if (m.kind != kind)
    throw ProtocolError(std::string("expected ") + to_string(kind) + ", got " + to_string(m.kind));
}

WireMessage finish(MessageKind kind, const SessionId& s, ByteWriter& w) {
  return WireMessage{kind, s, w.take()};
}

}  // namespace

WireMessage make_open_session(const SessionId& s, const OpenSessionRequest& req) {
  ByteWriter w;
  w.u32(req.start);
  w.u32(req.end);
  w.u8(req.quantized ? 1 : 0);
  return finish(MessageKind::open_session, s, w);
}

OpenSessionRequest parse_open_session(const WireMessage& m) {
  expect_kind(m, MessageKind::open_session);
  ByteReader r(m.payload);
  OpenSessionRequest req;
  req.start = r.u32();
  req.end = r.u32();
  req.quantized = r.u8() != 0;
  r.expect_done();
  return req;
}

WireMessage make_step(const SessionId& s, const StepRequest& req, ActivationEncoding enc) {
  ByteWriter w;
  std::uint8_t flags = 0;
  if (req.from_relay) flags |= 1;
  if (req.relay_to) flags |= 2;
  w.u8(flags);
  if (req.from_relay) w.u64(req.relay_checksum);
  if (req.relay_to) {
    w.str(req.relay_to->address);
    w.bytes(req.relay_to->session);
  }
  write_batch(w, req.batch, enc);
  return finish(MessageKind::step, s, w);
}

StepRequest parse_step(const WireMessage& m) {
  expect_kind(m, MessageKind::step);
  ByteReader r(m.payload);
  StepRequest req;
  const auto flags = r.u8();
  req.from_relay = (flags & 1) != 0;
  if (req.from_relay) req.relay_checksum = r.u64();
  if (flags & 2) {
    RelayTarget t;
    t.address = r.str();
    const auto sid = r.bytes(16);
    std::copy(sid.begin(), sid.end(), t.session.begin());
    req.relay_to = std::move(t);
  }
  req.batch = read_batch(r);
  r.expect_done();
  return req;
}

WireMessage make_activations(MessageKind kind, const SessionId& s,
                             std::span<const HiddenStates> batch, ActivationEncoding enc) {
  ByteWriter w;
  write_batch(w, batch, enc);
  return finish(kind, s, w);
}

std::vector<HiddenStates> parse_activations(const WireMessage& m) {
  ByteReader r(m.payload);
  auto batch = read_batch(r);
  r.expect_done();
  return batch;
}

WireMessage make_restore(const SessionId& s, const RestoreRequest& req) {
  ByteWriter w;
  w.u8(req.want_outputs ? 1 : 0);
  write_batch(w, req.batch, ActivationEncoding::f32);
  return finish(MessageKind::restore, s, w);
}

RestoreRequest parse_restore(const WireMessage& m) {
  expect_kind(m, MessageKind::restore);
  ByteReader r(m.payload);
  RestoreRequest req;
  req.want_outputs = r.u8() != 0;
  req.batch = read_batch(r);
  r.expect_done();
  return req;
}

WireMessage make_forward(const SessionId& s, const ForwardRequest& req, ActivationEncoding enc) {
  ByteWriter w;
  w.u8(req.record ? 1 : 0);
  write_batch(w, req.batch, enc);
  return finish(MessageKind::forward, s, w);
}

ForwardRequest parse_forward(const WireMessage& m) {
  expect_kind(m, MessageKind::forward);
  ByteReader r(m.payload);
  ForwardRequest req;
  req.record = r.u8() != 0;
  req.batch = read_batch(r);
  r.expect_done();
  return req;
}

WireMessage make_reorder(const SessionId& s, std::span<const std::uint32_t> indices) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(indices.size()));
  for (auto i : indices) w.u32(i);
  return finish(MessageKind::reorder, s, w);
}

std::vector<std::uint32_t> parse_reorder(const WireMessage& m) {
  expect_kind(m, MessageKind::reorder);
  ByteReader r(m.payload);
  std::vector<std::uint32_t> out(r.u32());
  for (auto& i : out) i = r.u32();
  r.expect_done();
  return out;
}

WireMessage make_error(const SessionId& s, const ErrorReply& e) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(e.code));
  w.str(e.message);
  return finish(MessageKind::error, s, w);
}

ErrorReply parse_error(const WireMessage& m) {
  expect_kind(m, MessageKind::error);
  ByteReader r(m.payload);
  ErrorReply e;
  e.code = static_cast<ErrorCode>(r.u16());
  e.message = r.str();
  return e;
}

WireMessage make_empty(MessageKind kind, const SessionId& s) { return WireMessage{kind, s, {}}; }

bool carries_activations(MessageKind kind) noexcept {
  switch (kind) {
    case MessageKind::step:
    case MessageKind::step_result:
    case MessageKind::restore:
    case MessageKind::forward:
    case MessageKind::backward:
      return true;
    default:
      return false;
  }
}

std::uint64_t batch_checksum(std::span<const HiddenStates> batch) {
  ByteWriter w;
  write_batch(w, batch, ActivationEncoding::f32);
  const auto bytes = w.take();
  return fnv1a(bytes);
}

}  // namespace swarmpipe
