#include "swarmpipe/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

void RebalanceConfig::validate() const {
  if (!(threshold_percent > 0)) throw ConfigError("rebalance threshold must be positive");
  if (!(check_period_s > 0)) throw ConfigError("check period must be positive");
}

double measure_throughput(double net_tokens_per_s, double compute_tokens_per_s) {
  if (!(net_tokens_per_s > 0) || !(compute_tokens_per_s > 0))
    throw ConfigError("throughputs must be positive");
  return std::min(net_tokens_per_s, compute_tokens_per_s);
}

std::size_t choose_start(std::span<const double> load, std::size_t k) {
  const std::size_t n = load.size();
  if (k < 1 || k > n) throw ConfigError("window size must satisfy 1 <= K <= L");
  // Slide a sorted copy of the window; keep the best sorted window seen.
  std::vector<double> window(load.begin(), load.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(window.begin(), window.end());
  std::vector<double> best = window;
  std::size_t best_start = 0;
  for (std::size_t s = 1; s + k <= n; ++s) {
    window.erase(std::lower_bound(window.begin(), window.end(), load[s - 1]));
    const double incoming = load[s + k - 1];
    window.insert(std::upper_bound(window.begin(), window.end(), incoming), incoming);
    if (window < best) {
      best = window;
      best_start = s;
    }
  }
  return best_start;
}

double swarm_throughput(std::span<const double> load) {
  if (load.empty()) return 0.0;
  return std::max(0.0, *std::min_element(load.begin(), load.end()));
}

double swarm_throughput(const std::vector<ServerInfo>& servers, std::size_t n_blocks) {
  return swarm_throughput(block_load(servers, n_blocks));
}

namespace {

// Throughputs are compared on a micro-token grid so that adding and removing
// a server's contribution is exact.
constexpr double kGrid = 1e6;

double quantize(double thr) { return std::round(thr * kGrid); }

struct SimServer {
  ServerId id;
  std::size_t start;
  std::size_t length;
  double q;  // quantized throughput
};

void add(std::vector<double>& load, const SimServer& s, double sign) {
  for (std::size_t i = s.start; i < s.start + s.length; ++i) load[i] += sign * s.q;
}

std::vector<double> sorted_window(const std::vector<double>& load, std::size_t start, std::size_t k) {
  std::vector<double> w(load.begin() + static_cast<std::ptrdiff_t>(start),
                        load.begin() + static_cast<std::ptrdiff_t>(start + k));
  std::sort(w.begin(), w.end());
  return w;
}

// Where `s` would go given the others' load; nullopt when its current
// window is already a minimum.
std::optional<std::size_t> better_start(std::vector<double>& load, const SimServer& s) {
  add(load, s, -1.0);
  const std::size_t cand = choose_start(load, s.length);
  std::optional<std::size_t> out;
  if (cand != s.start && sorted_window(load, cand, s.length) < sorted_window(load, s.start, s.length))
    out = cand;
  add(load, s, +1.0);
  return out;
}

}  // namespace

std::optional<RebalanceProposal> propose_rebalance(ServerId self_id,
                                                   const std::vector<ServerInfo>& snapshot,
                                                   std::size_t n_blocks,
                                                   const RebalanceConfig& config) {
  config.validate();
  std::vector<SimServer> servers;
  std::size_t self = std::numeric_limits<std::size_t>::max();
  for (const auto& s : snapshot) {
    if (!s.counts() || s.end > n_blocks || s.start >= s.end) continue;
    if (s.server_id == self_id) self = servers.size();
    servers.push_back({s.server_id, s.start, s.length(), quantize(s.throughput)});
  }
  if (self == std::numeric_limits<std::size_t>::max()) return std::nullopt;
  std::sort(servers.begin(), servers.end(),
            [](const SimServer& a, const SimServer& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < servers.size(); ++i)
    if (servers[i].id == self_id) self = i;

  std::vector<double> load(n_blocks, 0.0);
  for (const auto& s : servers) add(load, s, +1.0);
  const double current = swarm_throughput(load) / kGrid;

  const auto first = better_start(load, servers[self]);
  if (!first) return std::nullopt;
  add(load, servers[self], -1.0);
  servers[self].start = *first;
  add(load, servers[self], +1.0);

  std::size_t moves = 0;
  const std::size_t max_sweeps = 2 * servers.size();
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (auto& s : servers) {
      const auto next = better_start(load, s);
      if (!next) continue;
      add(load, s, -1.0);
      s.start = *next;
      add(load, s, +1.0);
      moved = true;
      ++moves;
    }
    if (!moved) break;
  }

  const double eventual = swarm_throughput(load) / kGrid;
  if (!(eventual > current) || eventual < (1.0 + config.threshold_percent / 100.0) * current)
    return std::nullopt;
  return RebalanceProposal{static_cast<std::uint32_t>(*first), current, eventual, moves};
}

namespace {

class BranchAndBound {
 public:
  BranchAndBound(const std::vector<ServerSpec>& servers, std::size_t n_blocks)
      : servers_(servers), n_(n_blocks), k_(servers.size()), allowed_(servers.size()),
        starts_(servers.size(), 0), assigned_(servers.size(), false), cov_(n_blocks, 0.0) {
    for (std::size_t s = 0; s < servers.size(); ++s) {
      k_[s] = std::min<std::size_t>(std::max<std::uint32_t>(servers[s].capacity, 1), n_);
      allowed_[s] = (1u << (n_ - k_[s] + 1)) - 1;
    }
  }

  PlacementResult solve(const PlacementResult& seed) {
    best_ = seed;
    recurse();
    return best_;
  }

 private:
  std::uint32_t covering_starts(std::size_t s, std::size_t b) const {
    const std::size_t lo = b + 1 >= k_[s] ? b + 1 - k_[s] : 0;
    const std::size_t hi = std::min(b, n_ - k_[s]);
    if (lo > hi) return 0;
    return ((1u << (hi + 1)) - 1) & ~((1u << lo) - 1);
  }

  void place(std::size_t s, std::size_t start, double sign) {
    for (std::size_t i = start; i < start + k_[s]; ++i) cov_[i] += sign * servers_[s].throughput;
  }

  void consider_completion() {
    std::vector<std::uint32_t> starts = starts_;
    std::vector<double> cov = cov_;
    for (std::size_t s = 0; s < servers_.size(); ++s) {
      if (assigned_[s]) continue;
      if (allowed_[s] == 0) return;
      const auto st = static_cast<std::uint32_t>(__builtin_ctz(allowed_[s]));
      starts[s] = st;
      for (std::size_t i = st; i < st + k_[s]; ++i) cov[i] += servers_[s].throughput;
    }
    const double value = swarm_throughput(cov);
    if (value > best_.throughput) best_ = PlacementResult{starts, value};
  }

  void recurse() {
    double total_mass = 0.0;
    bool any_left = false;
    for (std::size_t s = 0; s < servers_.size(); ++s) {
      const double m = servers_[s].throughput * static_cast<double>(k_[s]);
      total_mass += m;
      if (!assigned_[s]) {
        if (allowed_[s] == 0) return;
        any_left = true;
      }
    }
    if (!any_left) {
      consider_completion();
      return;
    }
    double ub = total_mass / static_cast<double>(n_);
    std::size_t bottleneck = 0;
    for (std::size_t b = 0; b < n_; ++b) {
      double reach = cov_[b];
      for (std::size_t s = 0; s < servers_.size(); ++s)
        if (!assigned_[s] && (allowed_[s] & covering_starts(s, b))) reach += servers_[s].throughput;
      ub = std::min(ub, reach);
      if (cov_[b] < cov_[bottleneck]) bottleneck = b;
    }
    if (ub <= best_.throughput * (1.0 + 1e-12) + 1e-12) return;

    consider_completion();

    // Some unassigned server must cover the bottleneck for the value to rise.
    // Branch on the first such server in index order; earlier ones are then
    // barred from covering it, so each placement is visited once.
    const std::vector<std::uint32_t> saved = allowed_;
    for (std::size_t s = 0; s < servers_.size(); ++s) {
      if (assigned_[s]) continue;
      const std::uint32_t options = allowed_[s] & covering_starts(s, bottleneck);
      for (std::size_t st = 0; st <= n_ - k_[s]; ++st) {
        if (!(options & (1u << st))) continue;
        assigned_[s] = true;
        starts_[s] = static_cast<std::uint32_t>(st);
        place(s, st, +1.0);
        recurse();
        place(s, st, -1.0);
        assigned_[s] = false;
      }
      allowed_[s] &= ~covering_starts(s, bottleneck);
      if (allowed_[s] == 0) break;
    }
    allowed_ = saved;
  }

  const std::vector<ServerSpec>& servers_;
  std::size_t n_;
  std::vector<std::size_t> k_;
  std::vector<std::uint32_t> allowed_;
  std::vector<std::uint32_t> starts_;
  std::vector<bool> assigned_;
  std::vector<double> cov_;
  PlacementResult best_;
};

std::vector<double> load_of(const std::vector<ServerSpec>& servers, const PlacementResult& p,
                            std::size_t n_blocks) {
  std::vector<double> load(n_blocks, 0.0);
  for (std::size_t s = 0; s < servers.size(); ++s) {
    const std::size_t k = std::min<std::size_t>(servers[s].capacity, n_blocks);
    for (std::size_t i = p.starts[s]; i < p.starts[s] + k; ++i) load[i] += servers[s].throughput;
  }
  return load;
}

}  // namespace

PlacementResult optimal_assignment_bruteforce(const std::vector<ServerSpec>& servers,
                                              std::size_t n_blocks) {
  if (servers.size() > 10 || n_blocks > 14)
    throw InstanceTooLarge("exhaustive placement is limited to 10 servers and 14 blocks");
  if (n_blocks == 0) throw ConfigError("need at least one block");
  PlacementResult seed = greedy_join(servers, n_blocks);
  if (servers.empty()) return seed;
  seed.throughput = swarm_throughput(load_of(servers, seed, n_blocks));
  BranchAndBound bb(servers, n_blocks);
  return bb.solve(seed);
}

PlacementResult greedy_join(const std::vector<ServerSpec>& servers, std::size_t n_blocks) {
  if (n_blocks == 0) throw ConfigError("need at least one block");
  PlacementResult out;
  out.starts.resize(servers.size(), 0);
  std::vector<double> load(n_blocks, 0.0);
  for (std::size_t s = 0; s < servers.size(); ++s) {
    const std::size_t k = std::min<std::size_t>(std::max<std::uint32_t>(servers[s].capacity, 1), n_blocks);
    const std::size_t st = choose_start(load, k);
    out.starts[s] = static_cast<std::uint32_t>(st);
    for (std::size_t i = st; i < st + k; ++i) load[i] += servers[s].throughput;
  }
  out.throughput = swarm_throughput(load);
  return out;
}

std::vector<ServerInfo> to_server_infos(const std::vector<ServerSpec>& servers,
                                        const PlacementResult& placement) {
  std::vector<ServerInfo> out;
  out.reserve(servers.size());
  std::uint32_t max_end = 0;
  for (std::size_t s = 0; s < servers.size(); ++s)
    max_end = std::max(max_end, placement.starts[s] + std::max<std::uint32_t>(servers[s].capacity, 1));
  for (std::size_t s = 0; s < servers.size(); ++s) {
    ServerInfo info;
    info.server_id = static_cast<ServerId>(s);
    info.start = placement.starts[s];
    info.end = std::min<std::uint32_t>(placement.starts[s] + std::max<std::uint32_t>(servers[s].capacity, 1),
                                       static_cast<std::uint32_t>(max_end));
    info.throughput = servers[s].throughput;
    out.push_back(info);
  }
  return out;
}

std::size_t rebalance_to_fixpoint(const std::vector<ServerSpec>& servers, PlacementResult& placement,
                                  std::size_t n_blocks, const RebalanceConfig& config,
                                  std::size_t max_sweeps) {
  std::size_t moves = 0;
  std::vector<ServerSpec> clamped = servers;
  for (auto& s : clamped) s.capacity = std::min<std::uint32_t>(std::max<std::uint32_t>(s.capacity, 1),
                                                               static_cast<std::uint32_t>(n_blocks));
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (std::size_t s = 0; s < servers.size(); ++s) {
      const auto proposal =
          propose_rebalance(static_cast<ServerId>(s), to_server_infos(clamped, placement), n_blocks, config);
      if (!proposal) continue;
      placement.starts[s] = proposal->new_start;
      moved = true;
      ++moves;
    }
    if (!moved) break;
  }
  placement.throughput = swarm_throughput(load_of(clamped, placement, n_blocks));
  return moves;
}

}  // namespace swarmpipe
