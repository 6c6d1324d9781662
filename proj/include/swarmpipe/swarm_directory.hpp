#pragma once

// Announcement board: servers publish the blocks they hold and their
// throughput; clients and balancers read consistent snapshots.

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "swarmpipe/netsim.hpp"

namespace swarmpipe {

using ServerId = std::uint32_t;

enum class ServerState : std::uint8_t { joining = 0, online = 1, offline = 2 };

const char* to_string(ServerState s) noexcept;

struct ServerInfo {
  ServerId server_id = 0;
  std::string address;
  std::uint32_t start = 0;  // block interval [start, end)
  std::uint32_t end = 0;
  double throughput = 0.0;  // tokens/s
  ServerState state = ServerState::online;
  double announced_at = 0.0;

  std::uint32_t length() const noexcept { return end - start; }
  bool covers(std::uint32_t block) const noexcept { return block >= start && block < end; }
  // Online or loading blocks: both count toward per-block load.
  bool counts() const noexcept { return state != ServerState::offline; }
};

constexpr double kAnnouncePeriod = 10.0;
constexpr double kDirectoryTtl = 3 * kAnnouncePeriod;

class Directory {
 public:
  explicit Directory(std::size_t n_blocks, double ttl = kDirectoryTtl);

  std::size_t n_blocks() const noexcept { return n_blocks_; }
  double ttl() const noexcept { return ttl_; }

  // Upserts the record and stamps it with `now`. Throws RejectedAnnouncement
  // for an interval outside [0, L) or non-positive throughput when online.
  void announce(ServerInfo info, double now);
  void remove(ServerId id);
  // Unexpired records sorted by server id.
  std::vector<ServerInfo> snapshot(double now) const;
  // Bumped on every change; lets routers skip rebuilding.
  std::uint64_t version() const;
  std::string dump_json(double now) const;

 private:
  std::size_t n_blocks_;
  double ttl_;
  mutable std::mutex mu_;
  std::map<ServerId, ServerInfo> records_;
  std::uint64_t version_ = 0;
};

// t_i = sum of throughput over online-or-joining servers whose interval holds i.
std::vector<double> block_load(const std::vector<ServerInfo>& snapshot, std::size_t n_blocks);

// Same layout as Directory::dump_json without the clock fields.
std::string snapshot_json(const std::vector<ServerInfo>& snapshot, std::size_t n_blocks);

/// Client-local set of servers to avoid. Entries expire after the cooldown.
class BanList {
 public:
  explicit BanList(double cooldown_s = 60.0) : cooldown_(cooldown_s) {}
  void ban(ServerId id, double now) { until_[id] = now + cooldown_; }
  void unban(ServerId id) { until_.erase(id); }
  void clear() { until_.clear(); }
  bool is_banned(ServerId id, double now) const;
  std::size_t size() const noexcept { return until_.size(); }
  double cooldown() const noexcept { return cooldown_; }

 private:
  double cooldown_;
  std::map<ServerId, double> until_;
};

// ANNOUNCE payloads: a single record to publish, or (reply to an empty
// ANNOUNCE) the full snapshot.
void write_server_info(ByteWriter& w, const ServerInfo& s);
ServerInfo read_server_info(ByteReader& r);
WireMessage make_announce(const ServerInfo& s);
WireMessage make_snapshot_reply(const std::vector<ServerInfo>& snapshot);
std::vector<ServerInfo> parse_snapshot_reply(const WireMessage& m);

/// Directory reachable over a Transport (the real-transport deployment and
/// end-to-end tests).
class DirectoryEndpoint final : public Endpoint {
 public:
  DirectoryEndpoint(Directory& dir, Clock& clock) : dir_(dir), clock_(clock) {}
  WireMessage handle(const WireMessage& request, const std::string& from) override;

 private:
  Directory& dir_;
  Clock& clock_;
};

/// How servers and clients reach the directory: in-process or over a Transport.
class DirectoryView {
 public:
  virtual ~DirectoryView() = default;
  virtual void announce(const ServerInfo& info) = 0;
  virtual std::vector<ServerInfo> snapshot() = 0;
};

class LocalDirectoryView final : public DirectoryView {
 public:
  LocalDirectoryView(Directory& dir, const Clock& clock) : dir_(dir), clock_(clock) {}
  void announce(const ServerInfo& info) override { dir_.announce(info, clock_.now()); }
  std::vector<ServerInfo> snapshot() override { return dir_.snapshot(clock_.now()); }

 private:
  Directory& dir_;
  const Clock& clock_;
};

class RemoteDirectoryView final : public DirectoryView {
 public:
  RemoteDirectoryView(Transport& transport, std::string address)
      : transport_(transport), address_(std::move(address)) {}
  void announce(const ServerInfo& info) override;
  std::vector<ServerInfo> snapshot() override;

 private:
  Transport& transport_;
  std::string address_;
};

}  // namespace swarmpipe
