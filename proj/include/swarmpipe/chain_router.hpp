#pragma once

// Routing over block boundaries 0..L. A server holding [a, b) contributes an
// edge i -> j for every [i, j) inside [a, b); the edge weight is the predicted
// per-step time for that span. Shortest paths are maintained incrementally
// with D* Lite (zero heuristic), one planner per destination boundary.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "swarmpipe/swarm_directory.hpp"

namespace swarmpipe {

// rtt + blocks * (1000 / throughput), in milliseconds.
double edge_cost(double client_rtt_ms, std::size_t blocks, double throughput_tokens_per_s);

struct RouteServer {
  ServerId server_id = 0;
  std::string address;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  double throughput = 0.0;
  double rtt_ms = 0.0;

  bool operator==(const RouteServer&) const = default;
};

struct ChainHop {
  ServerId server_id = 0;
  std::string address;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  double cost_ms = 0.0;
};

struct Chain {
  std::vector<ChainHop> hops;
  double cost_ms = 0.0;  // accumulated from the last hop backwards
};

/// Exponentially smoothed ping history per address.
class LatencyTracker {
 public:
  explicit LatencyTracker(double alpha = 0.5) : alpha_(alpha) {}
  void observe(const std::string& address, double rtt_ms);
  std::optional<double> estimate(const std::string& address) const;

 private:
  double alpha_;
  std::map<std::string, double> ewma_;
};

class ChainRouter {
 public:
  explicit ChainRouter(std::size_t n_blocks);
  ~ChainRouter();
  ChainRouter(ChainRouter&&) noexcept;
  ChainRouter& operator=(ChainRouter&&) noexcept;

  std::size_t n_blocks() const noexcept { return n_blocks_; }

  // Graph events. Each repairs every planner lazily on the next query.
  void upsert(const RouteServer& server);  // join, move or latency change
  void remove(ServerId id);                // leave
  void ban(ServerId id);
  void unban(ServerId id);
  void clear_bans();
  bool is_banned(ServerId id) const { return banned_.count(id) != 0; }

  // Brings the graph in line with a directory snapshot: online servers that
  // are not banned at `now`. `rtt_ms` supplies client latency per server.
  void sync(const std::vector<ServerInfo>& snapshot, const BanList& bans, double now,
            const std::function<double(const ServerInfo&)>& rtt_ms);

  // Minimum-cost chain covering [start, end). Throws NoRouteError.
  Chain find_best_chain(std::uint32_t start, std::uint32_t end);
  Chain find_best_chain() { return find_best_chain(0, static_cast<std::uint32_t>(n_blocks_)); }

  // Servers currently contributing edges (not banned).
  std::vector<RouteServer> active_servers() const;
  std::size_t planner_count() const noexcept { return planners_.size(); }
  // Vertex expansions across all planners, for tests of incrementality.
  std::uint64_t expansions() const noexcept { return expansions_; }

 private:
  struct Planner;
  struct EdgeOption {
    double cost;
    ServerId server_id;
    bool operator<(const EdgeOption& o) const {
      return cost != o.cost ? cost < o.cost : server_id < o.server_id;
    }
  };

  void add_edges(const RouteServer& s);
  void drop_edges(const RouteServer& s);
  void touch(std::uint32_t from);
  double best_edge(std::uint32_t i, std::uint32_t j) const;
  Planner& planner_for(std::uint32_t goal);

  std::size_t n_blocks_;
  std::map<ServerId, RouteServer> servers_;
  std::set<ServerId> banned_;
  // edges_[i][j - i - 1]: options for the span [i, j).
  std::vector<std::vector<std::set<EdgeOption>>> edges_;
  std::map<std::uint32_t, std::unique_ptr<Planner>> planners_;
  std::uint64_t expansions_ = 0;
};

}  // namespace swarmpipe
