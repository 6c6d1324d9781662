// Acceptance run: one PASS/FAIL line per criterion with the measured numbers.
// Exit status is 0 once every criterion has been evaluated; --strict makes
// any FAIL line an error exit; --out FILE also writes the lines to FILE.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "swarmpipe/balancer.hpp"
#include "swarmpipe/bench.hpp"
#include "swarmpipe/chain_router.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/quantize.hpp"
#include "swarmpipe/random.hpp"
#include "swarmpipe/sim_swarm.hpp"

using namespace swarmpipe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::shared_ptr<const Model> toy_model() {
  static auto m = std::make_shared<const Model>(init_model(ModelConfig{}));
  return m;
}

std::vector<Token> random_prefix(std::uint64_t seed, std::size_t vocab) {
  SplitMix64 rng = SplitMix64::keyed(seed, 0x707265ULL);
  std::vector<Token> p(1 + rng.below(8));
  for (auto& t : p) t = static_cast<Token>(rng.below(vocab));
  return p;
}

std::unique_ptr<SimSwarm> pipeline(double p, std::uint64_t net_seed, const ServerConfig& base = {}) {
  auto s = std::make_unique<SimSwarm>(toy_model(), NetProfile{1e9, 1.0, p}, net_seed);
  s->add_pipeline(4, 2, 2, base);
  return s;
}

// ---- 1 ------------------------------------------------------------------

Outcome semantics() {
  const double ps[] = {0.0, 1e-3, 1e-2};
  std::size_t same = 0, recoveries = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto prefix = random_prefix(seed, toy_model()->config.vocab_size);
    auto swarm = pipeline(ps[seed % 3], 1000 + seed);
    auto& client = swarm->add_client({.seed = seed});
    same += client.generate(prefix, 256) == reference_generate(*toy_model(), prefix, 256, DecodeMode::greedy());
    recoveries += client.stats().recoveries;
  }
  return {same == 50, fmt("%zu/50 runs identical to the local model (%zu recoveries in total)", same, recoveries)};
}

// ---- 2 ------------------------------------------------------------------

Outcome failure_rate_patterns() {
  FailureRateConfig cfg;
  const std::uint64_t seed = 0;
  std::map<std::tuple<double, std::size_t, Strategy>, FailureRateRecord> cell;
  auto run = [&](double p, std::size_t len, Strategy s) -> const FailureRateRecord& {
    const auto key = std::make_tuple(p, len, s);
    if (!cell.count(key)) cell[key] = run_failure_rate_cell(cfg, seed, p, len, s);
    return cell[key];
  };

  // (a) cacheless steps/s across p, per length.
  bool a = true;
  std::string a_txt;
  for (std::size_t len : {std::size_t{128}, std::size_t{1024}}) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (double p : cfg.probabilities) {
      const auto& r = run(p, len, Strategy::cacheless);
      lo = std::min(lo, r.steps_per_s);
      hi = std::max(hi, r.steps_per_s);
    }
    const double spread = lo > 0 ? (hi - lo) / hi : 1.0;
    a = a && spread < 0.02;
    a_txt += fmt(" len %zu spread %.2f%%;", len, 100 * spread);
  }

  // (b) restart, 1024 tokens at p=1e-2.
  const auto& rb = run(1e-2, 1024, Strategy::restart);
  const bool b = !rb.completed;

  // (c) dual cache completes every cell; p=0 ordering.
  bool c = true;
  std::size_t done = 0;
  for (double p : cfg.probabilities)
    for (std::size_t len : cfg.lengths) done += run(p, len, Strategy::dual_cache).completed;
  c = done == cfg.probabilities.size() * cfg.lengths.size();
  std::string c_txt;
  for (std::size_t len : cfg.lengths) {
    const double d = run(0.0, len, Strategy::dual_cache).steps_per_s;
    const double cl = run(0.0, len, Strategy::cacheless).steps_per_s;
    const double rs = run(0.0, len, Strategy::restart).steps_per_s;
    c = c && d >= std::min(cl, rs) && d <= std::max(cl, rs);
    c_txt += fmt(" len %zu: cacheless %.3f <= dual %.3f <= restart %.3f;", len, cl, d, rs);
  }
  std::vector<FailureRateRecord> all;
  for (const auto& [_, r] : cell) all.push_back(r);
  const bool audit = audit_failure_rate(all);
  return {a && b && c && audit,
          fmt("(a)%s (b) restart 1024@1e-2 %s after %zu tokens, %zu restarts; (c) dual cache completed %zu/15,%s audit %s",
              a_txt.c_str(), rb.completed ? "completed" : "did not complete", rb.tokens, rb.restarts, done,
              c_txt.c_str(), audit ? "ok" : "failed")};
}

// ---- 3 ------------------------------------------------------------------

// Least-squares fit of y on powers of x up to `degree`; returns R^2 and coefficients.
std::pair<double, std::vector<double>> poly_fit(const std::vector<double>& x, const std::vector<double>& y,
                                                std::size_t degree) {
  const std::size_t n = degree + 1;
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> pw(n, 1.0);
    for (std::size_t k = 1; k < n; ++k) pw[k] = pw[k - 1] * x[i];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) a[r][c] += pw[r] * pw[c];
      a[r][n] += pw[r] * y[i];
    }
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> coef(n);
  for (std::size_t k = 0; k < n; ++k) coef[k] = a[k][n] / a[k][k];
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double f = 0, pw = 1;
    for (std::size_t k = 0; k < n; ++k, pw *= x[i]) f += coef[k] * pw;
    ss_res += (y[i] - f) * (y[i] - f);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return {ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0, coef};
}

Outcome communication() {
  const std::size_t T = 1024;
  const std::vector<Token> prefix{7};

  // Dual cache: per-token STEP payload.
  auto swarm = pipeline(0.0, 1);
  auto& dual = swarm->add_client({.strategy = Strategy::dual_cache});
  dual.generate(prefix, T);
  const auto& db = dual.stats().step_bytes;
  std::vector<double> x, y;
  for (std::size_t t = 0; t < db.size(); ++t) {
    x.push_back(static_cast<double>(t + 1));
    y.push_back(static_cast<double>(db[t]));
  }
  const auto [r2_lin, lin] = poly_fit(x, y, 1);
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  // Drift across the whole range, the stricter reading of "slope".
  const double slope_rel = std::fabs(lin[1]) * static_cast<double>(T - 1) / mean;
  (void)r2_lin;

  // Cacheless: cumulative payload. Echoing servers give the same byte counts
  // without the quadratic compute.
  ServerConfig echo;
  echo.passthrough = true;
  auto swarm2 = pipeline(0.0, 1, echo);
  auto& cl = swarm2->add_client({.strategy = Strategy::cacheless, .passthrough = true});
  cl.generate(prefix, T);
  const auto& cb = cl.stats().step_bytes;
  std::vector<double> cx, cy;
  double cum = 0;
  for (std::size_t t = 0; t < cb.size(); ++t) {
    cum += static_cast<double>(cb[t]);
    cx.push_back(static_cast<double>(t + 1));
    cy.push_back(cum);
  }
  const auto [r2_quad, quad] = poly_fit(cx, cy, 2);

  // Recoveries on a lossy run.
  auto swarm3 = pipeline(0.01, 7);
  auto& lossy = swarm3->add_client({});
  const auto tokens = lossy.generate(prefix, T);
  std::size_t exact = 0;
  const auto& log = lossy.stats().recovery_log;
  for (const auto& r : log) exact += r.restore_payload_bytes == 22 + r.history_tokens * 64 * 4;
  const bool same = tokens == reference_generate(*toy_model(), prefix, T, DecodeMode::greedy());

  const bool pass = db.size() == T && slope_rel <= 0.01 && r2_quad >= 0.999 && quad[2] > 0 && !log.empty() &&
                    exact == log.size() && same;
  return {pass, fmt("dual cache step bytes mean %.1f, slope %.3g per token (drift over the range %.4f%% of mean); cacheless cumulative "
                    "bytes quadratic fit R^2 %.6f, c %.2f; %zu/%zu recoveries moved exactly 22 + history x 64 x 4 "
                    "bytes",
                    mean, lin[1], 100 * slope_rel, r2_quad, quad[2], exact, log.size())};
}

// ---- 4 ------------------------------------------------------------------

std::size_t windows_oracle(const std::vector<double>& t, std::size_t k) {
  std::size_t best = 0;
  std::vector<double> best_w;
  for (std::size_t s = 0; s + k <= t.size(); ++s) {
    std::vector<double> w(t.begin() + s, t.begin() + s + k);
    std::sort(w.begin(), w.end());
    if (s == 0 || std::lexicographical_compare(w.begin(), w.end(), best_w.begin(), best_w.end())) {
      best = s;
      best_w = w;
    }
  }
  return best;
}

Outcome choose_start_agreement() {
  SplitMix64 rng(2024);
  std::size_t agree = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t L = 1 + rng.below(32);
    const std::size_t K = 1 + rng.below(L);
    std::vector<double> t(L);
    for (auto& v : t) v = i % 2 ? double(rng.below(4)) : rng.uniform() * 100;
    agree += choose_start(t, K) == windows_oracle(t, K);
  }
  return {agree == 10000, fmt("%zu/10000 instances agree", agree)};
}

// ---- 5 ------------------------------------------------------------------

Outcome greedy_quality() {
  SplitMix64 rng(5);
  const std::size_t L = 12;
  std::vector<double> greedy, rebalanced;
  std::size_t skipped = 0;
  while (greedy.size() < 1000) {
    std::vector<ServerSpec> specs(2 + rng.below(7));
    for (auto& s : specs) {
      s.throughput = rng.uniform() * 100.0;
      s.capacity = 1 + static_cast<std::uint32_t>(rng.below(6));
    }
    const double opt = optimal_assignment_bruteforce(specs, L).throughput;
    if (!(opt > 0)) {
      ++skipped;
      continue;
    }
    auto g = greedy_join(specs, L);
    greedy.push_back(g.throughput / opt);
    rebalance_to_fixpoint(specs, g, L, RebalanceConfig{}, 8);
    rebalanced.push_back(swarm_throughput(to_server_infos(specs, g), L) / opt);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double mg = median(greedy);
  std::size_t at_least_09 = 0;
  for (double r : greedy) at_least_09 += r >= 0.9;
  return {mg >= 0.9, fmt("arrival-order greedy median %.4f (mean %.4f, %zu/1000 at >= 0.9); after rebalancing "
                         "median %.4f (mean %.4f); %zu infeasible instances skipped",
                         mg, mean(greedy), at_least_09, median(rebalanced), mean(rebalanced), skipped)};
}

// ---- 6 ------------------------------------------------------------------

Outcome load_balance_patterns() {
  const auto cfg = LoadBalanceConfig::desk();
  std::size_t zero_none = 0, steps = 0, feasible = 0, feasible_zero = 0, within = 0;
  std::size_t repl_p1 = 0, repl_p20 = 0, seeds_p1_more = 0;
  std::string slack;
  std::string misses;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto res = run_load_balance_experiment(cfg, seed);
    const auto* none = res.find(BalanceStrategy::none);
    const auto* p1 = res.find(BalanceStrategy::full, 1.0);
    const auto* p20 = res.find(BalanceStrategy::full, 20.0);
    const auto* ub = res.find(BalanceStrategy::upper_bound);
    const auto plan = make_churn_plan(cfg, seed);
    std::size_t seed_miss = 0;
    for (std::size_t m = 0; m < cfg.minutes; ++m) {
      ++steps;
      zero_none += none->minutes[m].throughput <= 0;
      if (p20->minutes[m].feasible) {
        ++feasible;
        if (p20->minutes[m].throughput <= 0) {
          ++seed_miss;
          std::size_t cap = 0;
          for (auto id : plan.active[m]) cap += std::min<std::size_t>(plan.servers[id].capacity, cfg.n_blocks);
          slack += fmt("%s%zu", slack.empty() ? "" : ",", cap - cfg.n_blocks);
        }
      }
      const double bound = ub->minutes[m].throughput;
      within += bound <= 0 ? p20->minutes[m].throughput >= 0 : p20->minutes[m].throughput >= 0.75 * bound;
    }
    feasible_zero += seed_miss;
    if (seed_miss) misses += fmt("%sseed %llu: %zu", misses.empty() ? "" : ", ", static_cast<unsigned long long>(seed), seed_miss);
    repl_p1 += p1->total_replacements();
    repl_p20 += p20->total_replacements();
    seeds_p1_more += p1->total_replacements() > p20->total_replacements();
  }
  const double zf = double(zero_none) / double(steps);
  const double wf = double(within) / double(steps);
  const bool pass = zf > 0.5 && feasible_zero == 0 && repl_p1 > repl_p20 && seeds_p1_more == 20 && wf >= 0.8;
  const std::string miss_txt =
      feasible_zero ? fmt(" (%s; active capacity minus L at those timesteps: %s)", misses.c_str(), slack.c_str()) : "";
  return {pass, fmt("20 seeds, %zu timesteps: no balancing zero %.3f of the time; full p=20%% zero on %zu of %zu "
                    "feasible timesteps%s; replacements p=1%% %zu vs p=20%% %zu (more in %zu/20 seeds); within "
                    "25%% of the upper bound %.3f of the time",
                    steps, zf, feasible_zero, feasible, miss_txt.c_str(), repl_p1, repl_p20, seeds_p1_more, wf)};
}

// ---- 7 ------------------------------------------------------------------

double fresh_cost(const std::vector<RouteServer>& servers, std::uint32_t start, std::uint32_t end) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(end + 1, inf);
  g[end] = 0;
  for (int u = static_cast<int>(end) - 1; u >= static_cast<int>(start); --u)
    for (std::uint32_t v = u + 1; v <= end; ++v) {
      double c = inf;
      for (const auto& s : servers)
        if (s.start <= static_cast<std::uint32_t>(u) && v <= s.end)
          c = std::min(c, s.rtt_ms + static_cast<double>(v - u) * (1000.0 / s.throughput));
      if (c < inf && g[v] < inf) g[u] = std::min(g[u], c + g[v]);
    }
  return g[start];
}

Outcome router_equivalence() {
  SplitMix64 rng(99);
  const std::uint32_t L = 16;
  ChainRouter r(L);
  std::map<ServerId, RouteServer> live;
  std::set<ServerId> banned;
  std::size_t agree = 0, total = 0;
  for (int step = 0; step < 1000; ++step) {
    const auto op = rng.below(5);
    const auto id = static_cast<ServerId>(rng.below(24));
    if (op <= 1) {
      const auto a = static_cast<std::uint32_t>(rng.below(L));
      const auto b = a + 1 + static_cast<std::uint32_t>(rng.below(std::min<std::uint64_t>(L - a, 6)));
      live[id] = RouteServer{id, "s" + std::to_string(id), a, b, 10 + rng.uniform() * 100, rng.uniform() * 30};
      r.upsert(live[id]);
    } else if (op == 2) {
      live.erase(id);
      r.remove(id);
    } else if (op == 3) {
      banned.insert(id);
      r.ban(id);
    } else if (live.count(id)) {
      if (banned.erase(id)) {
        r.unban(id);
      } else {
        live[id].rtt_ms = rng.uniform() * 30;
        r.upsert(live[id]);
      }
    }
    std::vector<RouteServer> active;
    for (const auto& [sid, s] : live)
      if (!banned.count(sid)) active.push_back(s);
    const double want = fresh_cost(active, 0, L);
    ++total;
    try {
      agree += r.find_best_chain(0, L).cost_ms == want;
    } catch (const NoRouteError&) {
      agree += std::isinf(want);
    }
  }
  return {agree == total, fmt("%zu/%zu mutations: incremental cost equals fresh recompute", agree, total)};
}

// ---- 8 ------------------------------------------------------------------

Outcome beam_reorder() {
  // Gather on a live server: step five beams, reorder by [2,2,1,3,2] (1-based),
  // then compare the next step with a session fed the gathered beams directly.
  const auto model = toy_model();
  const std::size_t d = model->config.hidden_dim;
  SimSwarm swarm(model, NetProfile{}, 1);
  ServerConfig sc;
  sc.start = 0;
  sc.capacity = 2;
  auto& server = swarm.add_server(sc);
  auto& t = swarm.transport_for("probe");
  auto rows = [&](std::size_t n, std::uint64_t seed, std::size_t offset) {
    SplitMix64 rng(seed);
    HiddenStates h;
    h.position_offset = offset;
    h.values = Matrix(n, d);
    for (float& v : h.values.data()) v = static_cast<float>(rng.uniform() * 2 - 1);
    return h;
  };
  auto session = [](std::uint8_t n) {
    SessionId s{};
    s[0] = n;
    return s;
  };
  const auto addr = server.config().address;
  auto step = [&](const SessionId& s, std::vector<HiddenStates> batch) {
    return parse_activations(t.call(addr, make_step(s, {std::move(batch), false, 0, std::nullopt}, ActivationEncoding::f32)));
  };
  std::vector<HiddenStates> beams, nxt;
  for (std::uint64_t i = 0; i < 5; ++i) beams.push_back(rows(3, 100 + i, 0));
  for (int i = 0; i < 5; ++i) nxt.push_back(rows(1, 7, 3));
  const std::vector<std::uint32_t> idx{2, 2, 1, 3, 2};
  t.call(addr, make_open_session(session(1), {0, 2, false}));
  step(session(1), beams);
  const bool reorder_ok = t.call(addr, make_reorder(session(1), idx)).kind == MessageKind::reorder;
  const auto got = step(session(1), nxt);
  t.call(addr, make_open_session(session(2), {0, 2, false}));
  std::vector<HiddenStates> gathered;
  for (auto i : idx) gathered.push_back(beams[i - 1]);
  step(session(2), gathered);
  const auto want = step(session(2), nxt);
  bool gather = reorder_ok && got.size() == 5;
  for (std::size_t i = 0; gather && i < 5; ++i) gather = got[i].values == want[i].values;

  std::size_t clean = 0, lossy = 0, recoveries = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto prefix = random_prefix(500 + seed, model->config.vocab_size);
    const auto ref = reference_beam_search(*model, prefix, 24, 4);
    for (double p : {0.0, 0.02}) {
      auto sw = pipeline(p, 2000 + seed);
      auto& client = sw->add_client({.seed = seed});
      const auto hyp = client.beam_generate(prefix, 24, 4);
      bool same = hyp.size() == ref.size();
      for (std::size_t i = 0; same && i < ref.size(); ++i) same = hyp[i].tokens == ref[i].tokens;
      (p > 0 ? lossy : clean) += same;
      if (p > 0) recoveries += client.stats().recoveries;
    }
  }
  return {gather && clean == 20 && lossy == 20,
          fmt("[2,2,1,3,2] gather %s; k=4 beams match the local oracle in %zu/20 runs at p=0 and %zu/20 at "
              "p=0.02 (%zu recoveries)",
              gather ? "exact" : "WRONG", clean, lossy, recoveries)};
}

// ---- 9 ------------------------------------------------------------------

Outcome training() {
  // Backward of a 3-block stage on a small model against finite differences.
  ModelConfig small;
  small.hidden_dim = 8;
  small.n_heads = 4;
  auto model = std::make_shared<const Model>(init_model(small));
  SimSwarm swarm(model, NetProfile{}, 1);
  ServerConfig sc;
  sc.start = 1;
  sc.capacity = 3;
  auto& server = swarm.add_server(sc);
  auto& t = swarm.transport_for("probe");
  const auto addr = server.config().address;
  SplitMix64 rng(21);
  HiddenStates x, gy;
  x.values = Matrix(4, 8);
  gy.values = Matrix(4, 8);
  for (float& v : x.values.data()) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (float& v : gy.values.data()) v = static_cast<float>(rng.uniform() * 2 - 1);
  SessionId sid{};
  sid[0] = 9;
  t.call(addr, make_open_session(sid, {1, 4, false}));
  t.call(addr, make_forward(sid, {{x}, true}, ActivationEncoding::f32));
  const auto g = parse_activations(
      t.call(addr, make_activations(MessageKind::backward, sid, std::vector{gy}, ActivationEncoding::f32)));
  const auto blocks = std::span<const BlockParams>(model->blocks).subspan(1, 3);
  const double rel = oracle::relative_error(
      g[0].values, oracle::stage_finite_difference_grad(blocks, oracle::to_dense(x.values), oracle::to_dense(gy.values)));

  // 200 soft-prompt steps, clean and lossy.
  const auto batch = make_copy_task(4, 3, toy_model()->config.vocab_size, 5);
  std::vector<Matrix> prompts;
  bool hashes_ok = true;
  std::size_t repeats = 0;
  double first = 0, last = 0;
  for (double p : {0.0, 0.01}) {
    auto sw = pipeline(p, 21);
    std::vector<std::uint64_t> hashes;
    for (const auto& s : sw->servers()) hashes.push_back(s->params_hash());
    FinetuneSession ft(sw->model(), sw->transport_for("trainer"), sw->directory_view(), {});
    for (int i = 0; i < 200; ++i) ft.step(batch);
    for (std::size_t i = 0; i < hashes.size(); ++i) hashes_ok = hashes_ok && sw->servers()[i]->params_hash() == hashes[i];
    if (p > 0) repeats = ft.repeated_passes();
    first = ft.losses().front();
    last = ft.losses().back();
    prompts.push_back(ft.soft_prompt());
  }
  const double diff = max_abs_diff(prompts[0], prompts[1]);
  return {rel <= 1e-4 && diff <= 1e-5 && hashes_ok,
          fmt("backward vs finite differences relative error %.2e; 200 steps, p=0.01 vs p=0 prompt max diff %.2e "
              "(%zu repeated passes, loss %.3f -> %.3f); server params %s",
              rel, diff, repeats, first, last, hashes_ok ? "unchanged" : "CHANGED")};
}

// ---- 10 -----------------------------------------------------------------

Outcome offload() {
  const auto e = estimate_offload_bound(176e9, 256e9);
  const std::string s3 = fmt("%.3g", e.seconds_per_pass), t3 = fmt("%.3g", e.tokens_per_s);
  const std::string t2 = fmt("%.2g", e.tokens_per_s);
  return {fmt("%.2f", e.seconds_per_pass) == "5.50" && t2 == "0.18",
          fmt("176 GB over 256 Gbit/s: %s s per pass, %s tokens/s (%s to two figures)", s3.c_str(), t3.c_str(),
              t2.c_str())};
}

// ---- 11 -----------------------------------------------------------------

Outcome quantized() {
  // Round trip on gaussian, heavy-tailed and real activation matrices.
  std::size_t matrices = 0, violations = 0;
  auto check = [&](const HiddenStates& h) {
    ++matrices;
    const auto back = dequantize_hidden(quantize_hidden(h));
    const auto a = h.values.data(), b = back.values.data();
    for (std::size_t blk = 0; blk * kQuantBlockSize < a.size(); ++blk) {
      const std::size_t lo = blk * kQuantBlockSize, hi = std::min(a.size(), lo + kQuantBlockSize);
      double absmax = 0;
      for (std::size_t i = lo; i < hi; ++i) absmax = std::max(absmax, std::fabs(double(a[i])));
      for (std::size_t i = lo; i < hi; ++i)
        violations += std::fabs(double(a[i]) - double(b[i])) > absmax / 127.0 * (1 + 1e-6);
    }
  };
  SplitMix64 rng(11);
  for (int m = 0; m < 200; ++m) {
    HiddenStates h;
    h.values = Matrix(1 + rng.below(64), 1 + rng.below(128));
    const double scale = std::pow(10.0, rng.uniform() * 6 - 3);
    for (float& v : h.values.data()) {
      const double u = rng.uniform() * 2 - 1;
      v = static_cast<float>(m % 2 ? scale * u : scale * u * u * u / std::max(1e-3, 1 - std::fabs(u)));
    }
    check(h);
  }
  const auto model = toy_model();
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto prefix = random_prefix(s, model->config.vocab_size);
    HiddenStates h = embed_tokens(model->client, prefix, 0);
    check(h);
    std::vector<KVCache> caches(4);
    check(forward_blocks(std::span<const BlockParams>(model->blocks).subspan(0, 4), h, caches));
  }

  // Greedy agreement, free running: the quantized run is compared position by
  // position with the exact run from the same prefix.
  std::size_t same = 0, total = 0, identical_runs = 0;
  std::vector<std::size_t> first_diff;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto prefix = random_prefix(900 + seed, model->config.vocab_size);
    auto sw = pipeline(0.0, 3000 + seed);
    auto& q = sw->add_client({.quantized = true, .seed = seed}, "q");
    auto& e = sw->add_client({.seed = seed}, "e");
    const auto a = q.generate(prefix, 128);
    const auto b = e.generate(prefix, 128);
    std::size_t run_same = 0, fd = 128;
    for (std::size_t i = prefix.size(); i < a.size(); ++i) {
      run_same += a[i] == b[i];
      if (a[i] != b[i] && fd == 128) fd = i - prefix.size();
    }
    same += run_same;
    total += 128;
    identical_runs += run_same == 128;
    first_diff.push_back(fd);
  }
  std::sort(first_diff.begin(), first_diff.end());
  const double agreement = double(same) / double(total);
  return {violations == 0 && agreement >= 0.95,
          fmt("%zu matrices, %zu elements over absmax/127; greedy agreement %.4f over 20 x 128 tokens (%zu runs "
              "identical, median first divergence at token %zu)",
              matrices, violations, agreement, identical_runs, first_diff[first_diff.size() / 2])};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::string out_path;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0)
      strict = true;
    else if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc)
      out_path = argv[++i];
    else
      only.insert(std::atoi(argv[i]));
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, semantics},         {2, failure_rate_patterns}, {3, communication},   {4, choose_start_agreement},
      {5, greedy_quality},    {6, load_balance_patterns}, {7, router_equivalence}, {8, beam_reorder},
      {9, training},          {10, offload},              {11, quantized}};
  std::FILE* out = out_path.empty() ? nullptr : std::fopen(out_path.c_str(), "w");
  std::size_t failed = 0;
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    for (std::FILE* f : {stdout, out}) {
      if (!f) continue;
      std::fprintf(f, "[%s] criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str(), wall);
      std::fflush(f);
    }
  }
  if (out) std::fclose(out);
  return strict && failed ? 1 : 0;
}
