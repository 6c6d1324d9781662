#pragma once

// Block placement: Eq.-style greedy start selection, threshold-gated
// rebalancing with cascade simulation, and an exact small-instance optimum.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "swarmpipe/swarm_directory.hpp"

namespace swarmpipe {

struct RebalanceConfig {
  double threshold_percent = 20.0;
  double check_period_s = 60.0;

  void validate() const;
};

// Server throughput is the smaller of what the link and the compute can do.
double measure_throughput(double net_tokens_per_s, double compute_tokens_per_s);

// Start of the K-block window whose sorted load vector is lexicographically
// smallest; leftmost on ties. Throws ConfigError unless 1 <= K <= L.
std::size_t choose_start(std::span<const double> load, std::size_t k);

// min over blocks of covering throughput; 0 when any block is uncovered.
double swarm_throughput(const std::vector<ServerInfo>& servers, std::size_t n_blocks);
double swarm_throughput(std::span<const double> load);

struct RebalanceProposal {
  std::uint32_t new_start = 0;
  double current_throughput = 0.0;
  double eventual_throughput = 0.0;
  std::size_t cascade_moves = 0;  // moves by other servers in the simulation
};

// Decides whether `self_id` should move. Others' reactions are simulated in
// ascending id order until nobody moves or 2 * #servers sweeps pass. The move
// is returned only when the simulated swarm throughput beats the current one
// by at least threshold_percent.
std::optional<RebalanceProposal> propose_rebalance(ServerId self_id,
                                                   const std::vector<ServerInfo>& snapshot,
                                                   std::size_t n_blocks,
                                                   const RebalanceConfig& config);

struct ServerSpec {
  std::uint32_t capacity = 1;  // blocks
  double throughput = 0.0;
};

struct PlacementResult {
  std::vector<std::uint32_t> starts;  // per server, same order as the input
  double throughput = 0.0;
};

// Exact optimum over all contiguous placements. Throws InstanceTooLarge above
// 10 servers or 14 blocks.
PlacementResult optimal_assignment_bruteforce(const std::vector<ServerSpec>& servers,
                                              std::size_t n_blocks);

// Servers join one at a time in the given order, each taking choose_start
// over the load left by the earlier ones.
PlacementResult greedy_join(const std::vector<ServerSpec>& servers, std::size_t n_blocks);

// Runs rebalance sweeps (ascending index) on a placement until no server
// moves or `max_sweeps` pass. Returns the number of moves.
std::size_t rebalance_to_fixpoint(const std::vector<ServerSpec>& servers, PlacementResult& placement,
                                  std::size_t n_blocks, const RebalanceConfig& config,
                                  std::size_t max_sweeps = 3);

std::vector<ServerInfo> to_server_infos(const std::vector<ServerSpec>& servers,
                                        const PlacementResult& placement);

}  // namespace swarmpipe
