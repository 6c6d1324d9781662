#pragma once

// Server node. Holds a contiguous block interval and serves inference
// sessions, restores, cache reordering and training forward/backward.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "swarmpipe/balancer.hpp"
#include "swarmpipe/core_model.hpp"
#include "swarmpipe/netsim.hpp"
#include "swarmpipe/swarm_directory.hpp"

namespace swarmpipe {

// Simulated compute cost, charged to the clock on every request.
struct ComputeModel {
  double step_s = 0.010;              // per block, one new position per sequence
  double pass_base_s = 0.010;         // per block, multi-position pass
  double pass_per_token_s = 0.0005;   // per block and position

  double step_time(std::size_t blocks) const noexcept { return static_cast<double>(blocks) * step_s; }
  double pass_time(std::size_t blocks, std::size_t tokens) const noexcept {
    return static_cast<double>(blocks) * (pass_base_s + pass_per_token_s * static_cast<double>(tokens));
  }
};

struct ServerConfig {
  ServerId id = 0;
  std::string address;
  std::uint32_t capacity = 1;           // K blocks
  std::optional<std::uint32_t> start;   // picked with choose_start when absent
  double compute_throughput = 0.0;      // tokens/s override, 0 = measure
  bool timed_benchmark = false;         // measure compute on the wall clock
  double bandwidth_bps = 1e9;           // used for the network throughput
  double session_ttl_s = 300.0;
  bool balance = false;
  RebalanceConfig rebalance;
  std::optional<double> crash_at;       // stop answering from this time on
  std::optional<double> drop_prob;      // link failure override, applied by the harness
  bool passthrough = false;             // identity blocks; lengths tracked only
  std::size_t micro_batch_tokens = 1024;
  ComputeModel compute;

  void validate(std::size_t n_blocks) const;  // throws ConfigError
  static ServerConfig from_json(const std::string& text);
  std::string to_json() const;
};

class BlockServer final : public Endpoint {
 public:
  BlockServer(ServerConfig config, std::shared_ptr<const Model> model, Transport& transport,
              DirectoryView& directory);
  ~BlockServer() override;

  // Chooses the interval if needed, announces JOINING, loads, announces ONLINE.
  void join();
  // Graceful leave: the directory record goes offline.
  void leave();
  // Stops answering at once, without telling anyone.
  void crash();

  // Session expiry, re-announcement and the rebalance check, whichever are due.
  void tick();
  // Drives tick() from a simulation loop: announcements every period and a
  // rebalance check every check period (phase staggered by server id).
  void schedule(EventLoop& loop);

  WireMessage handle(const WireMessage& request, const std::string& from) override;
  void deliver(const WireMessage& message, const std::string& from) override;
  void on_link_failure(const SessionId& session) override;
  bool online() const override;

  const ServerConfig& config() const noexcept { return config_; }
  std::uint32_t first_block() const noexcept { return start_; }
  std::uint32_t end_block() const noexcept { return start_ + config_.capacity; }
  double throughput() const noexcept { return throughput_; }
  ServerInfo info() const;

  // min(network, compute) tokens/s.
  double self_measure();
  std::uint64_t params_hash() const;

  std::size_t session_count() const;
  // Cached positions of a session, if it exists.
  std::optional<std::size_t> session_length(const SessionId& id) const;
  std::optional<std::size_t> session_width(const SessionId& id) const;
  // Completed moves to a new interval.
  std::size_t block_changes() const noexcept { return block_changes_; }
  std::string dump_json() const;

 private:
  struct Session {
    std::uint32_t start = 0;
    std::uint32_t end = 0;
    bool quantized = false;
    std::vector<std::vector<KVCache>> beams;  // [beam][block in session]
    std::size_t positions = 0;
    double last_activity = 0.0;
  };
  struct ForwardRecord {
    std::vector<HiddenStates> inputs;
  };

  WireMessage on_open(const WireMessage& m);
  WireMessage on_step(const WireMessage& m);
  WireMessage on_restore(const WireMessage& m);
  WireMessage on_reorder(const WireMessage& m);
  WireMessage on_forward(const WireMessage& m);
  WireMessage on_backward(const WireMessage& m);

  Session* find_session(const SessionId& id, WireMessage& error);
  bool serves(std::uint32_t a, std::uint32_t b) const noexcept { return a >= start_ && b <= end_block() && a < b; }
  void run_cached(Session& s, std::vector<HiddenStates>& batch);
  HiddenStates run_full(std::uint32_t a, std::uint32_t b, const HiddenStates& in);
  void check_invariant(const Session& s) const;
  void announce(ServerState state);
  void arm(EventLoop& loop, double period);
  void maybe_rebalance();
  void move_to(std::uint32_t new_start);
  double now() const { return transport_.clock().now(); }

  ServerConfig config_;
  std::shared_ptr<const Model> model_;
  Transport& transport_;
  DirectoryView& directory_;
  std::uint32_t start_ = 0;
  double throughput_ = 0.0;
  bool joined_ = false;
  bool crashed_ = false;
  double next_announce_ = 0.0;
  double next_check_ = 0.0;
  std::size_t block_changes_ = 0;
  mutable std::mutex mu_;
  std::map<SessionId, Session> sessions_;
  std::map<SessionId, std::vector<HiddenStates>> relay_inbox_;
  std::map<SessionId, ForwardRecord> records_;
  std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

}  // namespace swarmpipe
