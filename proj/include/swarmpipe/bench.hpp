#pragma once

// Experiment harness: failure-rate grid, churn/load-balancing study and the
// offloading bound. Results are deterministic per seed; wall time is
// reported separately so output files stay byte-identical.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "swarmpipe/block_server.hpp"
#include "swarmpipe/inference_client.hpp"

namespace swarmpipe {

// ---- failure rate ---------------------------------------------------------

struct FailureRateConfig {
  std::vector<double> probabilities{0.0, 1e-4, 1e-3, 1e-2, 5e-2};
  std::vector<std::size_t> lengths{128, 1024, 2048};
  std::vector<Strategy> strategies{Strategy::restart, Strategy::cacheless, Strategy::dual_cache};
  std::size_t stages = 4;
  std::uint32_t blocks_per_stage = 2;
  std::size_t replicas = 2;
  double rtt_ms = 1.0;
  double bandwidth_bps = 1e9;
  double budget_s = 1e6;
  // Servers echo activations. Byte counts and simulated time only depend on
  // shapes, so the numbers are the same as with the real blocks.
  bool passthrough = true;
  std::size_t prefix_len = 1;
  ComputeModel compute;
  std::size_t jobs = 1;  // cells run on this many threads

  void validate() const;  // throws ConfigError
  static FailureRateConfig from_json(const std::string& text);
  std::string to_json() const;
};

struct FailureRateRecord {
  std::uint64_t seed = 0;
  double p = 0.0;
  std::size_t length = 0;
  Strategy strategy = Strategy::dual_cache;
  std::size_t tokens = 0;   // generated in the last attempt
  double sim_start = 0.0;
  double sim_end = 0.0;
  double steps_per_s = 0.0; // tokens / (sim_end - sim_start); 0 when not completed
  std::uint64_t bytes_total = 0;  // client bytes sent and received
  std::size_t failures = 0;
  std::size_t recoveries = 0;
  std::size_t restarts = 0;
  bool completed = false;
  double wall_s = 0.0;      // not written to result files
};

// One grid cell. The cell's network seed is derived from `seed` and the
// cell coordinates so cells are independent of grid order.
FailureRateRecord run_failure_rate_cell(const FailureRateConfig& config, std::uint64_t seed, double p,
                                        std::size_t length, Strategy strategy);
std::vector<FailureRateRecord> run_failure_rate_experiment(const FailureRateConfig& config,
                                                           std::uint64_t seed);

// Recomputes steps/s from the logged start/end times and token count.
bool audit_failure_rate(const std::vector<FailureRateRecord>& records);

std::string failure_rate_csv(const std::vector<FailureRateRecord>& records);
std::string failure_rate_jsonl(const std::vector<FailureRateRecord>& records);

// ---- load balancing under churn -------------------------------------------

enum class BalanceStrategy { none, new_only, full, upper_bound };

struct BalanceArm {
  BalanceStrategy strategy = BalanceStrategy::full;
  double threshold_percent = 20.0;  // full balancing only
  std::string label() const;
};

struct LoadBalanceConfig {
  std::size_t n_servers = 52;
  std::size_t n_blocks = 18;
  std::uint32_t min_blocks = 1;
  std::uint32_t max_blocks = 10;
  double max_throughput = 100.0;
  // Active-server targets at the sine peaks and troughs, each drawn
  // uniformly from its range.
  double peak_low = 25, peak_high = 28;
  double trough_low = 4, trough_high = 6;
  std::size_t minutes = 240;
  double period_minutes = 60.0;
  std::size_t upper_bound_orders = 50;
  std::vector<BalanceArm> arms{{BalanceStrategy::none},
                               {BalanceStrategy::new_only},
                               {BalanceStrategy::full, 1.0},
                               {BalanceStrategy::full, 20.0},
                               {BalanceStrategy::upper_bound}};

  static LoadBalanceConfig desk();
  static LoadBalanceConfig full_scale();
  void validate() const;
  static LoadBalanceConfig from_json(const std::string& text, bool full_scale = false);
  std::string to_json() const;
};

struct ChurnServer {
  std::uint32_t capacity = 1;
  double throughput = 0.0;
};

// Which servers are on at each minute; shared by every arm.
struct ChurnPlan {
  std::vector<ChurnServer> servers;
  std::vector<std::vector<std::uint32_t>> active;  // per minute, ascending ids
  std::vector<std::vector<std::uint32_t>> joins;   // per minute, join order
};

ChurnPlan make_churn_plan(const LoadBalanceConfig& config, std::uint64_t seed);

// A full cover exists iff the active capacities add up to at least L.
bool cover_feasible(const std::vector<ChurnServer>& servers, const std::vector<std::uint32_t>& active,
                    std::size_t n_blocks);

// Best of `orders` greedy join orders, each followed by rebalancing, or the
// exact optimum for small instances (<= 8 servers, L <= 14).
double upper_bound_estimate(const std::vector<ServerSpec>& servers, std::size_t n_blocks,
                            std::size_t orders, std::uint64_t seed);

struct MinuteRecord {
  std::size_t minute = 0;
  std::size_t active = 0;
  bool feasible = false;
  double throughput = 0.0;
  std::size_t replacements = 0;  // block-interval changes this minute
};

struct ArmResult {
  BalanceArm arm;
  std::vector<MinuteRecord> minutes;

  std::size_t total_replacements() const;
  double zero_fraction() const;
};

struct LoadBalanceResult {
  std::uint64_t seed = 0;
  std::vector<ArmResult> arms;
  const ArmResult* find(BalanceStrategy s, double threshold = 20.0) const;
};

LoadBalanceResult run_load_balance_experiment(const LoadBalanceConfig& config, std::uint64_t seed);

std::string load_balance_csv(const LoadBalanceResult& result);
std::string load_balance_jsonl(const LoadBalanceResult& result);

// ---- offloading bound -----------------------------------------------------

struct OffloadEstimate {
  double seconds_per_pass = 0.0;
  double tokens_per_s = 0.0;
};

// Streaming all parameters once per token over the link. Throws ConfigError
// for non-positive inputs.
OffloadEstimate estimate_offload_bound(double params_bytes, double link_bits_per_s);
std::string offload_csv(double params_bytes, double link_bits_per_s, const OffloadEstimate& e);

// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace swarmpipe
