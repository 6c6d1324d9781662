#include "swarmpipe/bench.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "json.hpp"
#include "swarmpipe/balancer.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/sim_swarm.hpp"

namespace swarmpipe {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json parse_object(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bench config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("bench config must be a JSON object");
  return j;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown bench config key: " + it.key());
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for ") + key);
  }
}

}  // namespace

// ---- failure rate ---------------------------------------------------------

void FailureRateConfig::validate() const {
  if (probabilities.empty() || lengths.empty() || strategies.empty()) throw ConfigError("empty grid axis");
  for (double p : probabilities)
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("failure probability must be in [0, 1)");
  for (std::size_t l : lengths)
    if (l == 0) throw ConfigError("lengths must be positive");
  if (stages == 0 || blocks_per_stage == 0 || replicas == 0) throw ConfigError("empty pipeline");
  if (!(rtt_ms >= 0) || !(bandwidth_bps > 0)) throw ConfigError("bad network profile");
  if (!(budget_s > 0)) throw ConfigError("budget must be positive");
  if (prefix_len == 0) throw ConfigError("prefix must hold at least one token");
  if (!(compute.step_s > 0) || !(compute.pass_base_s >= 0) || !(compute.pass_per_token_s >= 0))
    throw ConfigError("bad compute model");
  if (jobs == 0) throw ConfigError("jobs must be positive");
}

FailureRateConfig FailureRateConfig::from_json(const std::string& text) {
  const json j = parse_object(text);
  reject_unknown(j, {"probabilities", "lengths", "strategies", "stages", "blocks_per_stage", "replicas",
                     "rtt_ms", "bandwidth_bps", "budget_s", "passthrough", "prefix_len", "compute", "jobs"});
  FailureRateConfig c;
  read(j, "probabilities", c.probabilities);
  read(j, "lengths", c.lengths);
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    read(j, "strategies", names);
    c.strategies.clear();
    for (const auto& n : names) c.strategies.push_back(parse_strategy(n));
  }
  read(j, "stages", c.stages);
  read(j, "blocks_per_stage", c.blocks_per_stage);
  read(j, "replicas", c.replicas);
  read(j, "rtt_ms", c.rtt_ms);
  read(j, "bandwidth_bps", c.bandwidth_bps);
  read(j, "budget_s", c.budget_s);
  read(j, "passthrough", c.passthrough);
  read(j, "prefix_len", c.prefix_len);
  read(j, "jobs", c.jobs);
  if (j.contains("compute")) {
    const json& cj = j.at("compute");
    if (!cj.is_object()) throw ConfigError("compute must be an object");
    reject_unknown(cj, {"step_s", "pass_base_s", "pass_per_token_s"});
    read(cj, "step_s", c.compute.step_s);
    read(cj, "pass_base_s", c.compute.pass_base_s);
    read(cj, "pass_per_token_s", c.compute.pass_per_token_s);
  }
  c.validate();
  return c;
}

std::string FailureRateConfig::to_json() const {
  json j;
  j["probabilities"] = probabilities;
  j["lengths"] = lengths;
  std::vector<std::string> names;
  for (Strategy s : strategies) names.emplace_back(to_string(s));
  j["strategies"] = names;
  j["stages"] = stages;
  j["blocks_per_stage"] = blocks_per_stage;
  j["replicas"] = replicas;
  j["rtt_ms"] = rtt_ms;
  j["bandwidth_bps"] = bandwidth_bps;
  j["budget_s"] = budget_s;
  j["passthrough"] = passthrough;
  j["prefix_len"] = prefix_len;
  j["compute"] = {{"step_s", compute.step_s},
                  {"pass_base_s", compute.pass_base_s},
                  {"pass_per_token_s", compute.pass_per_token_s}};
  j["jobs"] = jobs;
  return j.dump(2);
}

FailureRateRecord run_failure_rate_cell(const FailureRateConfig& config, std::uint64_t seed, double p,
                                        std::size_t length, Strategy strategy) {
  config.validate();
  const auto wall0 = std::chrono::steady_clock::now();

  ModelConfig mc;
  mc.n_blocks = config.stages * config.blocks_per_stage;
  mc.max_seq_len = std::max<std::size_t>(mc.max_seq_len, config.prefix_len + length);
  mc.seed = seed;
  auto model = std::make_shared<const Model>(init_model(mc));

  // Same failure draws for every strategy in a (p, length) cell.
  const std::uint64_t net_seed = SplitMix64::keyed(seed, std::bit_cast<std::uint64_t>(p), length).next();
  SimSwarm swarm(model, NetProfile{config.bandwidth_bps, config.rtt_ms, p}, net_seed);
  ServerConfig base;
  base.passthrough = config.passthrough;
  base.compute = config.compute;
  base.bandwidth_bps = config.bandwidth_bps;
  swarm.add_pipeline(config.stages, config.replicas, config.blocks_per_stage, base);

  ClientConfig cc;
  cc.strategy = strategy;
  cc.budget_s = config.budget_s;
  cc.passthrough = config.passthrough;
  cc.seed = seed;
  auto& client = swarm.add_client(cc);

  std::vector<Token> prefix(config.prefix_len);
  for (std::size_t i = 0; i < prefix.size(); ++i) prefix[i] = static_cast<Token>(1 + i % (mc.vocab_size - 1));

  FailureRateRecord r;
  r.seed = seed;
  r.p = p;
  r.length = length;
  r.strategy = strategy;
  try {
    client.generate(prefix, length);
  } catch (const BudgetExceeded&) {
  } catch (const SwarmUnavailable&) {
  }
  const auto& st = client.stats();
  r.tokens = st.tokens;
  r.sim_start = st.start_time;
  r.sim_end = st.end_time;
  r.completed = st.completed;
  r.steps_per_s = r.completed ? st.steps_per_s() : 0.0;
  r.bytes_total = st.bytes_sent + st.bytes_received;
  r.failures = st.failures;
  r.recoveries = st.recoveries;
  r.restarts = st.restarts;
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return r;
}

std::vector<FailureRateRecord> run_failure_rate_experiment(const FailureRateConfig& config,
                                                           std::uint64_t seed) {
  config.validate();
  struct Cell {
    double p;
    std::size_t length;
    Strategy strategy;
  };
  std::vector<Cell> cells;
  for (double p : config.probabilities)
    for (std::size_t l : config.lengths)
      for (Strategy s : config.strategies) cells.push_back({p, l, s});

  std::vector<FailureRateRecord> out(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      out[i] = run_failure_rate_cell(config, seed, cells[i].p, cells[i].length, cells[i].strategy);
  };
  const std::size_t n_threads = std::min(config.jobs, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

bool audit_failure_rate(const std::vector<FailureRateRecord>& records) {
  for (const auto& r : records) {
    if (!r.completed) {
      if (r.steps_per_s != 0.0) return false;
      continue;
    }
    const double dt = r.sim_end - r.sim_start;
    if (!(dt > 0) || r.tokens != r.length) return false;
    const double want = static_cast<double>(r.tokens) / dt;
    if (std::abs(want - r.steps_per_s) > 1e-9 * want) return false;
  }
  return true;
}

std::string failure_rate_csv(const std::vector<FailureRateRecord>& records) {
  std::string s = "experiment,seed,p,length,strategy,steps_per_s,bytes_total,recoveries,completed\n";
  for (const auto& r : records) {
    s += "failure_rate," + std::to_string(r.seed) + "," + num(r.p) + "," + std::to_string(r.length) + "," +
         to_string(r.strategy) + "," + num(r.steps_per_s) + "," + std::to_string(r.bytes_total) + "," +
         std::to_string(r.recoveries) + "," + (r.completed ? "true" : "false") + "\n";
  }
  return s;
}

std::string failure_rate_jsonl(const std::vector<FailureRateRecord>& records) {
  std::string s;
  for (const auto& r : records) {
    json j;
    j["experiment"] = "failure_rate";
    j["seed"] = r.seed;
    j["p"] = r.p;
    j["length"] = r.length;
    j["strategy"] = to_string(r.strategy);
    j["tokens"] = r.tokens;
    j["sim_start"] = r.sim_start;
    j["sim_end"] = r.sim_end;
    j["steps_per_s"] = r.steps_per_s;
    j["bytes_total"] = r.bytes_total;
    j["failures"] = r.failures;
    j["recoveries"] = r.recoveries;
    j["restarts"] = r.restarts;
    j["completed"] = r.completed;
    s += j.dump() + "\n";
  }
  return s;
}

// ---- load balancing -------------------------------------------------------

std::string BalanceArm::label() const {
  switch (strategy) {
    case BalanceStrategy::none: return "none";
    case BalanceStrategy::new_only: return "new_only";
    case BalanceStrategy::full: return "full_p" + num(threshold_percent);
    case BalanceStrategy::upper_bound: return "upper_bound";
  }
  return "?";
}

LoadBalanceConfig LoadBalanceConfig::desk() { return LoadBalanceConfig{}; }

LoadBalanceConfig LoadBalanceConfig::full_scale() {
  LoadBalanceConfig c;
  c.n_servers = 206;
  c.n_blocks = 70;
  c.peak_low = 100;
  c.peak_high = 110;
  c.trough_low = 15;
  c.trough_high = 25;
  c.minutes = 720;
  c.period_minutes = 240.0;
  return c;
}

void LoadBalanceConfig::validate() const {
  if (n_blocks == 0 || n_servers == 0) throw ConfigError("need servers and blocks");
  if (min_blocks == 0 || min_blocks > max_blocks || max_blocks > n_blocks)
    throw ConfigError("block capacity range must satisfy 1 <= min <= max <= L");
  if (!(max_throughput > 0)) throw ConfigError("max throughput must be positive");
  if (!(0 <= trough_low && trough_low <= trough_high && trough_high <= peak_low && peak_low <= peak_high &&
        peak_high <= static_cast<double>(n_servers)))
    throw ConfigError("active-server targets must satisfy 0 <= trough <= peak <= n_servers");
  if (minutes == 0 || !(period_minutes >= 2)) throw ConfigError("bad schedule length");
  if (upper_bound_orders == 0) throw ConfigError("need at least one greedy order");
  if (arms.empty()) throw ConfigError("no strategies to run");
  for (const auto& a : arms)
    if (a.strategy == BalanceStrategy::full && !(a.threshold_percent > 0))
      throw ConfigError("rebalance threshold must be positive");
}

namespace {

BalanceArm parse_arm(const std::string& name) {
  if (name == "none") return {BalanceStrategy::none};
  if (name == "new_only" || name == "new-only") return {BalanceStrategy::new_only};
  if (name == "upper_bound" || name == "upper-bound") return {BalanceStrategy::upper_bound};
  for (const char* prefix : {"full_p", "full-p"}) {
    const std::string pre(prefix);
    if (name.rfind(pre, 0) == 0) {
      try {
        std::size_t used = 0;
        const double t = std::stod(name.substr(pre.size()), &used);
        if (used == name.size() - pre.size()) return {BalanceStrategy::full, t};
      } catch (const std::exception&) {
      }
    }
  }
  throw ConfigError("unknown balancing strategy: " + name);
}

}  // namespace

LoadBalanceConfig LoadBalanceConfig::from_json(const std::string& text, bool full) {
  const json j = parse_object(text);
  reject_unknown(j, {"n_servers", "n_blocks", "min_blocks", "max_blocks", "max_throughput", "peak_low",
                     "peak_high", "trough_low", "trough_high", "minutes", "period_minutes",
                     "upper_bound_orders", "strategies"});
  LoadBalanceConfig c = full ? full_scale() : desk();
  read(j, "n_servers", c.n_servers);
  read(j, "n_blocks", c.n_blocks);
  read(j, "min_blocks", c.min_blocks);
  read(j, "max_blocks", c.max_blocks);
  read(j, "max_throughput", c.max_throughput);
  read(j, "peak_low", c.peak_low);
  read(j, "peak_high", c.peak_high);
  read(j, "trough_low", c.trough_low);
  read(j, "trough_high", c.trough_high);
  read(j, "minutes", c.minutes);
  read(j, "period_minutes", c.period_minutes);
  read(j, "upper_bound_orders", c.upper_bound_orders);
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    read(j, "strategies", names);
    c.arms.clear();
    for (const auto& n : names) c.arms.push_back(parse_arm(n));
  }
  c.validate();
  return c;
}

std::string LoadBalanceConfig::to_json() const {
  json j;
  j["n_servers"] = n_servers;
  j["n_blocks"] = n_blocks;
  j["min_blocks"] = min_blocks;
  j["max_blocks"] = max_blocks;
  j["max_throughput"] = max_throughput;
  j["peak_low"] = peak_low;
  j["peak_high"] = peak_high;
  j["trough_low"] = trough_low;
  j["trough_high"] = trough_high;
  j["minutes"] = minutes;
  j["period_minutes"] = period_minutes;
  j["upper_bound_orders"] = upper_bound_orders;
  std::vector<std::string> names;
  for (const auto& a : arms) names.push_back(a.label());
  j["strategies"] = names;
  return j.dump(2);
}

ChurnPlan make_churn_plan(const LoadBalanceConfig& config, std::uint64_t seed) {
  config.validate();
  ChurnPlan plan;
  SplitMix64 rng = SplitMix64::keyed(seed, 0x6368726eULL);
  const std::uint32_t span = config.max_blocks - config.min_blocks + 1;
  for (std::size_t i = 0; i < config.n_servers; ++i) {
    ChurnServer s;
    s.capacity = config.min_blocks + static_cast<std::uint32_t>(rng.below(span));
    s.throughput = std::max(rng.uniform() * config.max_throughput, 1e-6);
    plan.servers.push_back(s);
  }

  // Extremes every half period, troughs first; cosine in between.
  const double half = config.period_minutes / 2.0;
  const std::size_t n_ext = static_cast<std::size_t>(std::ceil(static_cast<double>(config.minutes) / half)) + 2;
  std::vector<double> level(n_ext);
  for (std::size_t k = 0; k < n_ext; ++k) {
    const bool peak = k % 2 == 1;
    const double lo = peak ? config.peak_low : config.trough_low;
    const double hi = peak ? config.peak_high : config.trough_high;
    level[k] = lo + rng.uniform() * (hi - lo);
  }

  std::vector<std::uint32_t> on;
  std::vector<std::uint32_t> off(config.n_servers);
  std::iota(off.begin(), off.end(), 0u);
  for (std::size_t m = 0; m < config.minutes; ++m) {
    const double x = static_cast<double>(m) / half;
    const auto k = static_cast<std::size_t>(x);
    const double frac = x - static_cast<double>(k);
    const double w = (1.0 - std::cos(frac * 3.14159265358979323846)) / 2.0;
    const double target_d = level[k] + (level[k + 1] - level[k]) * w;
    const auto target = static_cast<std::size_t>(std::lround(target_d));

    while (on.size() > target) {
      const std::size_t i = rng.below(on.size());
      off.push_back(on[i]);
      on.erase(on.begin() + static_cast<std::ptrdiff_t>(i));
    }
    std::vector<std::uint32_t> joined;
    while (on.size() < target && !off.empty()) {
      const std::size_t i = rng.below(off.size());
      joined.push_back(off[i]);
      on.push_back(off[i]);
      off.erase(off.begin() + static_cast<std::ptrdiff_t>(i));
    }
    std::vector<std::uint32_t> sorted = on;
    std::sort(sorted.begin(), sorted.end());
    plan.active.push_back(std::move(sorted));
    plan.joins.push_back(std::move(joined));
  }
  return plan;
}

bool cover_feasible(const std::vector<ChurnServer>& servers, const std::vector<std::uint32_t>& active,
                    std::size_t n_blocks) {
  std::size_t total = 0;
  for (std::uint32_t id : active)
    if (servers[id].throughput > 0) total += std::min<std::size_t>(servers[id].capacity, n_blocks);
  return total >= n_blocks;
}

double upper_bound_estimate(const std::vector<ServerSpec>& servers, std::size_t n_blocks, std::size_t orders,
                            std::uint64_t seed) {
  if (servers.empty()) return 0.0;
  if (servers.size() <= 8 && n_blocks <= 14) return optimal_assignment_bruteforce(servers, n_blocks).throughput;

  RebalanceConfig rc;
  rc.threshold_percent = 1e-6;
  std::vector<std::size_t> order(servers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng = SplitMix64::keyed(seed, 0x7562ULL, servers.size());
  double best = 0.0;
  for (std::size_t o = 0; o < orders; ++o) {
    if (o == 0) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return servers[a].throughput > servers[b].throughput; });
    } else {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    std::vector<ServerSpec> permuted;
    for (std::size_t i : order) permuted.push_back(servers[i]);
    PlacementResult placement = greedy_join(permuted, n_blocks);
    rebalance_to_fixpoint(permuted, placement, n_blocks, rc);
    best = std::max(best, placement.throughput);
  }
  return best;
}

std::size_t ArmResult::total_replacements() const {
  std::size_t n = 0;
  for (const auto& m : minutes) n += m.replacements;
  return n;
}

double ArmResult::zero_fraction() const {
  if (minutes.empty()) return 0.0;
  std::size_t z = 0;
  for (const auto& m : minutes) z += m.throughput <= 0.0;
  return static_cast<double>(z) / static_cast<double>(minutes.size());
}

const ArmResult* LoadBalanceResult::find(BalanceStrategy s, double threshold) const {
  for (const auto& a : arms)
    if (a.arm.strategy == s && (s != BalanceStrategy::full || a.arm.threshold_percent == threshold)) return &a;
  return nullptr;
}

namespace {

ArmResult run_arm(const LoadBalanceConfig& config, const ChurnPlan& plan, const BalanceArm& arm,
                  std::uint64_t seed) {
  const std::size_t n_blocks = config.n_blocks;
  ArmResult result{arm, {}};
  std::vector<std::optional<std::uint32_t>> start(plan.servers.size());
  SplitMix64 rng = SplitMix64::keyed(seed, 0x72616e64ULL);
  RebalanceConfig rc;
  rc.threshold_percent = arm.threshold_percent;

  auto infos = [&] {
    std::vector<ServerInfo> out;
    for (std::uint32_t id = 0; id < plan.servers.size(); ++id) {
      if (!start[id]) continue;
      ServerInfo s;
      s.server_id = id;
      s.start = *start[id];
      s.end = *start[id] + plan.servers[id].capacity;
      s.throughput = plan.servers[id].throughput;
      out.push_back(s);
    }
    return out;
  };

  for (std::size_t m = 0; m < config.minutes; ++m) {
    const auto& active = plan.active[m];
    MinuteRecord rec;
    rec.minute = m;
    rec.active = active.size();
    rec.feasible = cover_feasible(plan.servers, active, n_blocks);

    if (arm.strategy == BalanceStrategy::upper_bound) {
      std::vector<ServerSpec> specs;
      for (std::uint32_t id : active) specs.push_back({plan.servers[id].capacity, plan.servers[id].throughput});
      rec.throughput = upper_bound_estimate(specs, n_blocks, config.upper_bound_orders,
                                            SplitMix64::keyed(seed, 0x7570ULL, m).next());
      result.minutes.push_back(rec);
      continue;
    }

    const std::set<std::uint32_t> now_on(active.begin(), active.end());
    for (std::uint32_t id = 0; id < start.size(); ++id)
      if (start[id] && !now_on.count(id)) start[id].reset();

    for (std::uint32_t id : plan.joins[m]) {
      const std::uint32_t k = plan.servers[id].capacity;
      if (arm.strategy == BalanceStrategy::none) {
        start[id] = static_cast<std::uint32_t>(rng.below(n_blocks - k + 1));
      } else {
        const auto load = block_load(infos(), n_blocks);
        start[id] = static_cast<std::uint32_t>(choose_start(load, k));
      }
    }

    if (arm.strategy == BalanceStrategy::full) {
      for (std::uint32_t id : active) {
        const auto proposal = propose_rebalance(id, infos(), n_blocks, rc);
        if (!proposal) continue;
        start[id] = proposal->new_start;
        ++rec.replacements;
      }
    }
    rec.throughput = swarm_throughput(infos(), n_blocks);
    result.minutes.push_back(rec);
  }
  return result;
}

}  // namespace

LoadBalanceResult run_load_balance_experiment(const LoadBalanceConfig& config, std::uint64_t seed) {
  config.validate();
  const ChurnPlan plan = make_churn_plan(config, seed);
  LoadBalanceResult out;
  out.seed = seed;
  for (const auto& arm : config.arms) out.arms.push_back(run_arm(config, plan, arm, seed));
  return out;
}

std::string load_balance_csv(const LoadBalanceResult& result) {
  std::string s = "experiment,seed,strategy,minute,active,feasible,throughput,replacements\n";
  for (const auto& a : result.arms)
    for (const auto& m : a.minutes)
      s += "load_balance," + std::to_string(result.seed) + "," + a.arm.label() + "," + std::to_string(m.minute) +
           "," + std::to_string(m.active) + "," + (m.feasible ? "true" : "false") + "," + num(m.throughput) + "," +
           std::to_string(m.replacements) + "\n";
  return s;
}

std::string load_balance_jsonl(const LoadBalanceResult& result) {
  std::string s;
  for (const auto& a : result.arms) {
    for (const auto& m : a.minutes) {
      json j;
      j["experiment"] = "load_balance";
      j["seed"] = result.seed;
      j["strategy"] = a.arm.label();
      j["minute"] = m.minute;
      j["active"] = m.active;
      j["feasible"] = m.feasible;
      j["throughput"] = m.throughput;
      j["replacements"] = m.replacements;
      s += j.dump() + "\n";
    }
    double mean = 0.0;
    for (const auto& m : a.minutes) mean += m.throughput;
    if (!a.minutes.empty()) mean /= static_cast<double>(a.minutes.size());
    json j;
    j["experiment"] = "load_balance";
    j["seed"] = result.seed;
    j["strategy"] = a.arm.label();
    j["summary"] = {{"mean_throughput", mean},
                    {"zero_fraction", a.zero_fraction()},
                    {"replacements", a.total_replacements()}};
    s += j.dump() + "\n";
  }
  return s;
}

// ---- offloading -----------------------------------------------------------

OffloadEstimate estimate_offload_bound(double params_bytes, double link_bits_per_s) {
  if (!(params_bytes > 0)) throw ConfigError("parameter size must be positive");
  if (!(link_bits_per_s > 0)) throw ConfigError("link bandwidth must be positive");
  OffloadEstimate e;
  e.seconds_per_pass = params_bytes * 8.0 / link_bits_per_s;
  e.tokens_per_s = 1.0 / e.seconds_per_pass;
  return e;
}

std::string offload_csv(double params_bytes, double link_bits_per_s, const OffloadEstimate& e) {
  return "experiment,params_bytes,link_bits_per_s,seconds_per_pass,tokens_per_s\noffload_estimate," +
         num(params_bytes) + "," + num(link_bits_per_s) + "," + num(e.seconds_per_pass) + "," +
         num(e.tokens_per_s) + "\n";
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f << content;
    if (!f.flush()) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace swarmpipe
