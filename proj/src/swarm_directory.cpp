#include "swarmpipe/swarm_directory.hpp"

#include <json.hpp>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

const char* to_string(ServerState s) noexcept {
  switch (s) {
    case ServerState::joining: return "joining";
    case ServerState::online: return "online";
    case ServerState::offline: return "offline";
  }
  return "?";
}

Directory::Directory(std::size_t n_blocks, double ttl) : n_blocks_(n_blocks), ttl_(ttl) {
  if (n_blocks == 0) throw ConfigError("directory needs at least one block");
  if (!(ttl > 0)) throw ConfigError("ttl must be positive");
}

void Directory::announce(ServerInfo info, double now) {
  if (info.start >= info.end || info.end > n_blocks_)
    throw RejectedAnnouncement("server " + std::to_string(info.server_id) + " announced [" +
                               std::to_string(info.start) + ", " + std::to_string(info.end) +
                               ") outside [0, " + std::to_string(n_blocks_) + ")");
  if (info.state == ServerState::online && !(info.throughput > 0))
    throw RejectedAnnouncement("online server must have positive throughput");
  info.announced_at = now;
  std::lock_guard lock(mu_);
  records_[info.server_id] = std::move(info);
  ++version_;
}

void Directory::remove(ServerId id) {
  std::lock_guard lock(mu_);
  if (records_.erase(id)) ++version_;
}

std::vector<ServerInfo> Directory::snapshot(double now) const {
  std::lock_guard lock(mu_);
  std::vector<ServerInfo> out;
  out.reserve(records_.size());
  for (const auto& [id, rec] : records_)
    if (now - rec.announced_at <= ttl_) out.push_back(rec);
  return out;
}

std::uint64_t Directory::version() const {
  std::lock_guard lock(mu_);
  return version_;
}

namespace {

nlohmann::json snapshot_doc(const std::vector<ServerInfo>& snapshot, std::size_t n_blocks) {
  nlohmann::json servers = nlohmann::json::array();
  for (const auto& s : snapshot) {
    servers.push_back({{"server_id", s.server_id},
                       {"address", s.address},
                       {"start", s.start},
                       {"end", s.end},
                       {"throughput", s.throughput},
                       {"state", to_string(s.state)},
                       {"announced_at", s.announced_at}});
  }
  return {{"n_blocks", n_blocks}, {"servers", servers}, {"block_load", block_load(snapshot, n_blocks)}};
}

}  // namespace

std::string Directory::dump_json(double now) const {
  nlohmann::json doc = snapshot_doc(snapshot(now), n_blocks_);
  doc["ttl"] = ttl_;
  doc["now"] = now;
  return doc.dump(2);
}

std::string snapshot_json(const std::vector<ServerInfo>& snapshot, std::size_t n_blocks) {
  return snapshot_doc(snapshot, n_blocks).dump(2);
}

std::vector<double> block_load(const std::vector<ServerInfo>& snapshot, std::size_t n_blocks) {
  std::vector<double> t(n_blocks, 0.0);
  for (const auto& s : snapshot) {
    if (!s.counts()) continue;
    for (std::uint32_t i = s.start; i < s.end && i < n_blocks; ++i) t[i] += s.throughput;
  }
  return t;
}

bool BanList::is_banned(ServerId id, double now) const {
  auto it = until_.find(id);
  return it != until_.end() && now < it->second;
}

void write_server_info(ByteWriter& w, const ServerInfo& s) {
  w.u32(s.server_id);
  w.str(s.address);
  w.u32(s.start);
  w.u32(s.end);
  w.f64(s.throughput);
  w.u8(static_cast<std::uint8_t>(s.state));
}

ServerInfo read_server_info(ByteReader& r) {
  ServerInfo s;
  s.server_id = r.u32();
  s.address = r.str();
  s.start = r.u32();
  s.end = r.u32();
  s.throughput = r.f64();
  const std::uint8_t st = r.u8();
  if (st > 2) throw ProtocolError("bad server state");
  s.state = static_cast<ServerState>(st);
  return s;
}

WireMessage make_announce(const ServerInfo& s) {
  ByteWriter w;
  write_server_info(w, s);
  WireMessage m;
  m.kind = MessageKind::announce;
  m.payload = w.take();
  return m;
}

WireMessage make_snapshot_reply(const std::vector<ServerInfo>& snapshot) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(snapshot.size()));
  for (const auto& s : snapshot) write_server_info(w, s);
  WireMessage m;
  m.kind = MessageKind::announce;
  m.payload = w.take();
  return m;
}

std::vector<ServerInfo> parse_snapshot_reply(const WireMessage& m) {
  if (m.kind != MessageKind::announce) throw ProtocolError("expected ANNOUNCE reply");
  ByteReader r(m.payload);
  std::vector<ServerInfo> out(r.u32());
  for (auto& s : out) s = read_server_info(r);
  r.expect_done();
  return out;
}

WireMessage DirectoryEndpoint::handle(const WireMessage& request, const std::string&) {
  if (request.kind == MessageKind::ping) return make_empty(MessageKind::pong, request.session);
  if (request.kind != MessageKind::announce)
    return make_error(request.session, {ErrorCode::bad_request, "directory accepts ANNOUNCE only"});
  if (!request.payload.empty()) {
    ByteReader r(request.payload);
    ServerInfo info = read_server_info(r);
    try {
      dir_.announce(std::move(info), clock_.now());
    } catch (const RejectedAnnouncement& e) {
      return make_error(request.session, {ErrorCode::bad_request, e.what()});
    }
  }
  return make_snapshot_reply(dir_.snapshot(clock_.now()));
}

}  // namespace swarmpipe

namespace swarmpipe {

void RemoteDirectoryView::announce(const ServerInfo& info) {
  const WireMessage reply = transport_.call(address_, make_announce(info));
  if (reply.kind == MessageKind::error) throw RejectedAnnouncement(parse_error(reply).message);
}

std::vector<ServerInfo> RemoteDirectoryView::snapshot() {
  return parse_snapshot_reply(transport_.call(address_, make_empty(MessageKind::announce)));
}

}  // namespace swarmpipe
