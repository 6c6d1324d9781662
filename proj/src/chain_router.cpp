#include "swarmpipe/chain_router.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double edge_cost(double client_rtt_ms, std::size_t blocks, double throughput_tokens_per_s) {
  return client_rtt_ms + static_cast<double>(blocks) * (1000.0 / throughput_tokens_per_s);
}

void LatencyTracker::observe(const std::string& address, double rtt_ms) {
  auto [it, inserted] = ewma_.try_emplace(address, rtt_ms);
  if (!inserted) it->second = alpha_ * rtt_ms + (1.0 - alpha_) * it->second;
}

std::optional<double> LatencyTracker::estimate(const std::string& address) const {
  auto it = ewma_.find(address);
  if (it == ewma_.end()) return std::nullopt;
  return it->second;
}

// D* Lite towards a fixed goal boundary. With a zero heuristic and a fixed
// goal the key modifier stays 0; g(u) is the cost from u to the goal.
struct ChainRouter::Planner {
  std::uint32_t goal;
  std::vector<double> g, rhs;
  std::set<std::pair<double, std::uint32_t>> open;
  std::vector<double> key;  // key currently in `open`, or NaN

  explicit Planner(std::uint32_t goal_)
      : goal(goal_), g(goal_ + 1, kInf), rhs(goal_ + 1, kInf), key(goal_ + 1, std::nan("")) {
    rhs[goal] = 0.0;
    push(goal, 0.0);
  }

  void push(std::uint32_t u, double k) {
    open.emplace(k, u);
    key[u] = k;
  }
  void erase(std::uint32_t u) {
    if (!std::isnan(key[u])) {
      open.erase({key[u], u});
      key[u] = std::nan("");
    }
  }

  void update_vertex(ChainRouter& r, std::uint32_t u) {
    if (u > goal) return;
    if (u != goal) {
      double best = kInf;
      for (std::uint32_t v = u + 1; v <= goal; ++v) {
        if (g[v] == kInf) continue;
        const double c = r.best_edge(u, v);
        if (c == kInf) continue;
        best = std::min(best, c + g[v]);
      }
      rhs[u] = best;
    }
    erase(u);
    if (g[u] != rhs[u]) push(u, std::min(g[u], rhs[u]));
  }

  void compute(ChainRouter& r, std::uint32_t start) {
    while (!open.empty()) {
      const auto top = *open.begin();
      const double start_key = std::min(g[start], rhs[start]);
      if (!(top < std::make_pair(start_key, start) || rhs[start] != g[start])) break;
      const std::uint32_t u = top.second;
      open.erase(open.begin());
      key[u] = std::nan("");
      ++r.expansions_;
      if (g[u] > rhs[u]) {
        g[u] = rhs[u];
        for (std::uint32_t p = 0; p < u; ++p) update_vertex(r, p);
      } else {
        g[u] = kInf;
        for (std::uint32_t p = 0; p < u; ++p) update_vertex(r, p);
        update_vertex(r, u);
      }
    }
  }
};

ChainRouter::ChainRouter(std::size_t n_blocks) : n_blocks_(n_blocks), edges_(n_blocks) {
  if (n_blocks == 0) throw ConfigError("router needs at least one block");
  for (std::size_t i = 0; i < n_blocks; ++i) edges_[i].resize(n_blocks - i);
}

ChainRouter::~ChainRouter() = default;
ChainRouter::ChainRouter(ChainRouter&&) noexcept = default;
ChainRouter& ChainRouter::operator=(ChainRouter&&) noexcept = default;

double ChainRouter::best_edge(std::uint32_t i, std::uint32_t j) const {
  const auto& opts = edges_[i][j - i - 1];
  return opts.empty() ? kInf : opts.begin()->cost;
}

void ChainRouter::touch(std::uint32_t from) {
  for (auto& [goal, p] : planners_) p->update_vertex(*this, from);
}

void ChainRouter::add_edges(const RouteServer& s) {
  for (std::uint32_t i = s.start; i < s.end; ++i) {
    for (std::uint32_t j = i + 1; j <= s.end; ++j)
      edges_[i][j - i - 1].insert({edge_cost(s.rtt_ms, j - i, s.throughput), s.server_id});
    touch(i);
  }
}

void ChainRouter::drop_edges(const RouteServer& s) {
  for (std::uint32_t i = s.start; i < s.end; ++i) {
    for (std::uint32_t j = i + 1; j <= s.end; ++j)
      edges_[i][j - i - 1].erase({edge_cost(s.rtt_ms, j - i, s.throughput), s.server_id});
    touch(i);
  }
}

void ChainRouter::upsert(const RouteServer& server) {
  if (server.start >= server.end || server.end > n_blocks_)
    throw ConfigError("route server interval outside the model");
  if (!(server.throughput > 0) || !(server.rtt_ms >= 0))
    throw ConfigError("route server needs positive throughput and non-negative rtt");
  auto it = servers_.find(server.server_id);
  if (it != servers_.end()) {
    if (it->second == server) return;
    if (!banned_.count(server.server_id)) drop_edges(it->second);
    it->second = server;
  } else {
    servers_.emplace(server.server_id, server);
  }
  if (!banned_.count(server.server_id)) add_edges(server);
}

void ChainRouter::remove(ServerId id) {
  auto it = servers_.find(id);
  if (it == servers_.end()) return;
  if (!banned_.count(id)) drop_edges(it->second);
  servers_.erase(it);
}

void ChainRouter::ban(ServerId id) {
  if (!banned_.insert(id).second) return;
  auto it = servers_.find(id);
  if (it != servers_.end()) drop_edges(it->second);
}

void ChainRouter::unban(ServerId id) {
  if (!banned_.erase(id)) return;
  auto it = servers_.find(id);
  if (it != servers_.end()) add_edges(it->second);
}

void ChainRouter::clear_bans() {
  const std::set<ServerId> was = banned_;
  for (ServerId id : was) unban(id);
}

void ChainRouter::sync(const std::vector<ServerInfo>& snapshot, const BanList& bans, double now,
                       const std::function<double(const ServerInfo&)>& rtt_ms) {
  std::set<ServerId> seen;
  for (const auto& s : snapshot) {
    if (s.state != ServerState::online || s.end > n_blocks_ || s.start >= s.end || !(s.throughput > 0))
      continue;
    seen.insert(s.server_id);
    upsert(RouteServer{s.server_id, s.address, s.start, s.end, s.throughput, rtt_ms(s)});
    if (bans.is_banned(s.server_id, now))
      ban(s.server_id);
    else
      unban(s.server_id);
  }
  std::vector<ServerId> gone;
  for (const auto& [id, s] : servers_)
    if (!seen.count(id)) gone.push_back(id);
  for (ServerId id : gone) remove(id);
}

ChainRouter::Planner& ChainRouter::planner_for(std::uint32_t goal) {
  auto it = planners_.find(goal);
  if (it == planners_.end()) it = planners_.emplace(goal, std::make_unique<Planner>(goal)).first;
  return *it->second;
}

Chain ChainRouter::find_best_chain(std::uint32_t start, std::uint32_t end) {
  if (start >= end || end > n_blocks_) throw ConfigError("requested interval outside the model");
  Planner& p = planner_for(end);
  p.compute(*this, start);
  if (p.g[start] == kInf)
    throw NoRouteError("no chain covers blocks [" + std::to_string(start) + ", " + std::to_string(end) + ")");

  Chain chain;
  chain.cost_ms = p.g[start];
  std::uint32_t u = start;
  while (u != end) {
    // Successor that realises g(u); longest span first, then lowest id.
    std::uint32_t next = 0;
    const EdgeOption* pick = nullptr;
    for (std::uint32_t v = end; v > u; --v) {
      const auto& opts = edges_[u][v - u - 1];
      if (opts.empty() || p.g[v] == kInf) continue;
      if (opts.begin()->cost + p.g[v] == p.g[u]) {
        next = v;
        pick = &*opts.begin();
        break;
      }
    }
    if (!pick) {
      // Planner state near u is stale; fall back to the best-looking edge.
      double best = kInf;
      for (std::uint32_t v = end; v > u; --v) {
        const auto& opts = edges_[u][v - u - 1];
        if (opts.empty() || p.g[v] == kInf) continue;
        if (opts.begin()->cost + p.g[v] < best) {
          best = opts.begin()->cost + p.g[v];
          next = v;
          pick = &*opts.begin();
        }
      }
      if (!pick) throw NoRouteError("route reconstruction failed");
    }
    const RouteServer& s = servers_.at(pick->server_id);
    chain.hops.push_back({s.server_id, s.address, u, next, pick->cost});
    u = next;
  }
  return chain;
}

std::vector<RouteServer> ChainRouter::active_servers() const {
  std::vector<RouteServer> out;
  for (const auto& [id, s] : servers_)
    if (!banned_.count(id)) out.push_back(s);
  return out;
}

}  // namespace swarmpipe
