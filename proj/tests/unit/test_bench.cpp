#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "swarmpipe/bench.hpp"
#include "swarmpipe/errors.hpp"

using namespace swarmpipe;

namespace {

FailureRateConfig small_grid() {
  FailureRateConfig c;
  c.probabilities = {0.0, 1e-2};
  c.lengths = {64};
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("offload bound") {
  const auto e = estimate_offload_bound(176e9, 256e9);
  CHECK(e.seconds_per_pass == doctest::Approx(5.5).epsilon(1e-12));
  CHECK(e.tokens_per_s == doctest::Approx(0.1818).epsilon(1e-3));
  const auto half = estimate_offload_bound(176e9, 128e9);
  CHECK(half.seconds_per_pass == doctest::Approx(2 * e.seconds_per_pass));
  const auto unit = estimate_offload_bound(1e9, 8e9);
  CHECK(unit.seconds_per_pass == 1.0);
  CHECK(unit.tokens_per_s == 1.0);
  CHECK_THROWS_AS(estimate_offload_bound(1e9, 0.0), ConfigError);
  CHECK_THROWS_AS(estimate_offload_bound(-1.0, 1e9), ConfigError);
}

TEST_CASE("failure-rate grid: schema, audit and determinism") {
  const auto cfg = small_grid();
  const auto a = run_failure_rate_experiment(cfg, 3);
  REQUIRE(a.size() == 2 * 1 * 3);
  CHECK(audit_failure_rate(a));
  for (const auto& r : a) CHECK(r.completed);
  const std::string csv = failure_rate_csv(a);
  CHECK(csv.rfind("experiment,seed,p,length,strategy,steps_per_s,bytes_total,recoveries,completed\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  auto par = cfg;
  par.jobs = 3;
  const auto b = run_failure_rate_experiment(par, 3);
  CHECK(failure_rate_csv(b) == csv);
  CHECK(failure_rate_jsonl(b) == failure_rate_jsonl(a));

  // Tampered record fails the audit.
  auto bad = a;
  bad[0].steps_per_s *= 1.01;
  CHECK_FALSE(audit_failure_rate(bad));
}

TEST_CASE("failure-rate cells: strategy ordering at p=0 and lossy dual cache") {
  const auto cfg = small_grid();
  const auto dual = run_failure_rate_cell(cfg, 1, 0.0, 64, Strategy::dual_cache);
  const auto restart = run_failure_rate_cell(cfg, 1, 0.0, 64, Strategy::restart);
  const auto cacheless = run_failure_rate_cell(cfg, 1, 0.0, 64, Strategy::cacheless);
  CHECK(dual.steps_per_s == restart.steps_per_s);
  CHECK(cacheless.steps_per_s < dual.steps_per_s);
  CHECK(cacheless.bytes_total > dual.bytes_total);
  const auto lossy = run_failure_rate_cell(cfg, 1, 0.05, 64, Strategy::dual_cache);
  CHECK(lossy.completed);
  CHECK(lossy.recoveries > 0);
  CHECK(lossy.steps_per_s < dual.steps_per_s);
}

TEST_CASE("budget cutoff marks non-completion") {
  auto cfg = small_grid();
  cfg.budget_s = 5.0;
  const auto r = run_failure_rate_cell(cfg, 1, 0.0, 128, Strategy::cacheless);
  CHECK_FALSE(r.completed);
  CHECK(r.steps_per_s == 0.0);
  CHECK(audit_failure_rate({r}));
}

TEST_CASE("bench config JSON") {
  const auto c = FailureRateConfig::from_json(
      R"({"probabilities": [0, 0.01], "lengths": [32], "strategies": ["restart", "dual-cache"],
          "compute": {"step_s": 0.02}})");
  CHECK(c.probabilities.size() == 2);
  CHECK(c.strategies == std::vector<Strategy>{Strategy::restart, Strategy::dual_cache});
  CHECK(c.compute.step_s == 0.02);
  CHECK(FailureRateConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(FailureRateConfig::from_json(R"({"lenghts": [3]})"), ConfigError);
  CHECK_THROWS_AS(FailureRateConfig::from_json(R"({"probabilities": [1.5]})"), ConfigError);
  CHECK_THROWS_AS(FailureRateConfig::from_json("[1]"), ConfigError);

  const auto lb = LoadBalanceConfig::from_json(R"({"minutes": 30, "strategies": ["none", "full_p5"]})");
  CHECK(lb.minutes == 30);
  REQUIRE(lb.arms.size() == 2);
  CHECK(lb.arms[1].strategy == BalanceStrategy::full);
  CHECK(lb.arms[1].threshold_percent == 5.0);
  CHECK(LoadBalanceConfig::from_json("{}", true).n_servers == 206);
  CHECK_THROWS_AS(LoadBalanceConfig::from_json(R"({"strategies": ["fastest"]})"), ConfigError);
  CHECK_THROWS_AS(LoadBalanceConfig::from_json(R"({"max_blocks": 40})"), ConfigError);
}

TEST_CASE("churn plan follows the sine targets") {
  const auto cfg = LoadBalanceConfig::desk();
  const auto plan = make_churn_plan(cfg, 9);
  REQUIRE(plan.active.size() == cfg.minutes);
  for (const auto& s : plan.servers) {
    CHECK(s.capacity >= cfg.min_blocks);
    CHECK(s.capacity <= cfg.max_blocks);
    CHECK(s.throughput > 0);
    CHECK(s.throughput <= cfg.max_throughput);
  }
  // Troughs at multiples of the period, peaks half a period later.
  const auto half = static_cast<std::size_t>(cfg.period_minutes / 2);
  for (std::size_t m = 0; m < cfg.minutes; m += half) {
    const double n = static_cast<double>(plan.active[m].size());
    if ((m / half) % 2 == 0) {
      CHECK(n >= std::floor(cfg.trough_low));
      CHECK(n <= std::ceil(cfg.trough_high));
    } else {
      CHECK(n >= std::floor(cfg.peak_low));
      CHECK(n <= std::ceil(cfg.peak_high));
    }
  }
  // Different peaks, different crowds.
  CHECK(plan.active[half] != plan.active[3 * half]);
  CHECK(make_churn_plan(cfg, 9).active == plan.active);
}

TEST_CASE("cover feasibility and the upper-bound estimate") {
  const std::vector<ChurnServer> servers{{3, 10.0}, {2, 5.0}, {4, 1.0}};
  CHECK(cover_feasible(servers, {0, 1}, 5));
  CHECK_FALSE(cover_feasible(servers, {0, 1}, 6));
  CHECK(cover_feasible(servers, {0, 1, 2}, 9));

  // Small instance: exact optimum.
  const std::vector<ServerSpec> specs{{3, 10.0}, {2, 5.0}, {4, 1.0}, {2, 7.0}};
  CHECK(upper_bound_estimate(specs, 6, 5, 1) == optimal_assignment_bruteforce(specs, 6).throughput);
  // Larger: greedy orders never beat the best of themselves plus more orders.
  std::vector<ServerSpec> many;
  for (std::uint32_t i = 0; i < 12; ++i) many.push_back({1 + i % 5, 10.0 + 7.0 * i});
  const double few = upper_bound_estimate(many, 16, 1, 4);
  const double more = upper_bound_estimate(many, 16, 30, 4);
  CHECK(more >= few);
  CHECK(few > 0);
}

TEST_CASE("load-balance experiment: output shape and determinism") {
  auto cfg = LoadBalanceConfig::desk();
  cfg.minutes = 60;
  cfg.upper_bound_orders = 5;
  const auto a = run_load_balance_experiment(cfg, 2);
  REQUIRE(a.arms.size() == 5);
  for (const auto& arm : a.arms) CHECK(arm.minutes.size() == 60);
  CHECK(a.find(BalanceStrategy::full, 1.0) != nullptr);
  CHECK(a.find(BalanceStrategy::full, 7.0) == nullptr);
  CHECK(a.find(BalanceStrategy::none)->total_replacements() == 0);
  CHECK(a.find(BalanceStrategy::new_only)->total_replacements() == 0);
  const auto b = run_load_balance_experiment(cfg, 2);
  CHECK(load_balance_csv(a) == load_balance_csv(b));
  CHECK(load_balance_jsonl(a) == load_balance_jsonl(b));
  // JSONL lines parse; one summary per arm.
  std::istringstream in(load_balance_jsonl(a));
  std::string line;
  std::size_t summaries = 0;
  while (std::getline(in, line)) summaries += nlohmann::json::parse(line).contains("summary");
  CHECK(summaries == 5);
}

TEST_CASE("atomic write replaces the file") {
  const auto dir = std::filesystem::temp_directory_path() / "swarmpipe_bench_test";
  const std::string path = (dir / "sub" / "out.csv").string();
  write_file_atomic(path, "a\n");
  write_file_atomic(path, "b\n");
  CHECK(slurp(path) == "b\n");
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove_all(dir);
}
