#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "swarmpipe/chain_router.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/random.hpp"

using namespace swarmpipe;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

RouteServer rs(ServerId id, std::uint32_t a, std::uint32_t b, double thr, double rtt) {
  return RouteServer{id, "s" + std::to_string(id), a, b, thr, rtt};
}

double span_cost(const RouteServer& s, std::uint32_t i, std::uint32_t j) {
  return s.rtt_ms + static_cast<double>(j - i) * (1000.0 / s.throughput);
}

// From-scratch backward recurrence over the boundary DAG.
double fresh_cost(const std::vector<RouteServer>& servers, std::uint32_t start, std::uint32_t end) {
  std::vector<double> g(end + 1, kInf);
  g[end] = 0;
  for (int u = static_cast<int>(end) - 1; u >= static_cast<int>(start); --u) {
    for (std::uint32_t v = u + 1; v <= end; ++v) {
      double c = kInf;
      for (const auto& s : servers)
        if (s.start <= static_cast<std::uint32_t>(u) && v <= s.end) c = std::min(c, span_cost(s, u, v));
      if (c < kInf && g[v] < kInf) g[u] = std::min(g[u], c + g[v]);
    }
  }
  return g[start];
}

// Every chain of (server, span) hops, summed front to back.
double enumerate_chains(const std::vector<RouteServer>& servers, std::uint32_t end) {
  double best = kInf;
  std::function<void(std::uint32_t, double)> rec = [&](std::uint32_t u, double acc) {
    if (u == end) {
      best = std::min(best, acc);
      return;
    }
    for (const auto& s : servers)
      if (s.start <= u && u < s.end)
        for (std::uint32_t v = u + 1; v <= std::min(s.end, end); ++v) rec(v, acc + span_cost(s, u, v));
  };
  rec(0, 0.0);
  return best;
}

void check_chain_shape(const Chain& c, std::uint32_t start, std::uint32_t end,
                       const std::vector<RouteServer>& servers) {
  REQUIRE_FALSE(c.hops.empty());
  CHECK(c.hops.front().start == start);
  CHECK(c.hops.back().end == end);
  double sum = 0;
  for (std::size_t i = 0; i < c.hops.size(); ++i) {
    if (i) CHECK(c.hops[i].start == c.hops[i - 1].end);
    const auto it = std::find_if(servers.begin(), servers.end(),
                                 [&](const RouteServer& s) { return s.server_id == c.hops[i].server_id; });
    REQUIRE(it != servers.end());
    CHECK(it->start <= c.hops[i].start);
    CHECK(c.hops[i].end <= it->end);
    sum += c.hops[i].cost_ms;
  }
  CHECK(sum == doctest::Approx(c.cost_ms).epsilon(1e-12));
}

}  // namespace

TEST_CASE("edge cost formula") {
  CHECK(edge_cost(100, 4, 100) == doctest::Approx(140));
  CHECK(edge_cost(0, 1, 100) == doctest::Approx(10));
  CHECK(edge_cost(5, 6, 50) - 5 == doctest::Approx(2 * (edge_cost(5, 3, 50) - 5)));
}

TEST_CASE("two short hops beat one slow long hop") {
  ChainRouter r(4);
  r.upsert(rs(1, 0, 4, 100, 100));  // 140 ms
  r.upsert(rs(2, 0, 2, 200, 20));   // 30 ms
  r.upsert(rs(3, 2, 4, 200, 20));   // 30 ms
  const Chain c = r.find_best_chain();
  REQUIRE(c.hops.size() == 2);
  CHECK(c.hops[0].server_id == 2);
  CHECK(c.hops[1].server_id == 3);
  CHECK(c.cost_ms == doctest::Approx(60));
}

TEST_CASE("single server, gaps and bans") {
  ChainRouter r(4);
  r.upsert(rs(1, 0, 4, 100, 10));
  CHECK(r.find_best_chain().hops.size() == 1);
  r.upsert(rs(2, 0, 3, 1000, 1));
  r.ban(1);
  CHECK_THROWS_AS(r.find_best_chain(), NoRouteError);
  CHECK(r.find_best_chain(0, 3).hops[0].server_id == 2);
  r.unban(1);
  CHECK(r.find_best_chain().hops.back().server_id == 1);
  r.ban(999);  // unknown id
  r.remove(1);
  CHECK_THROWS_AS(r.find_best_chain(), NoRouteError);
  r.upsert(rs(3, 0, 4, 1000, 0.5));  // strictly cheaper full span
  const Chain c = r.find_best_chain();
  CHECK(c.hops.size() == 1);
  CHECK(c.hops[0].server_id == 3);
}

TEST_CASE("optimal on small graphs by enumeration") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto L = static_cast<std::uint32_t>(1 + rng.below(8));
    std::vector<RouteServer> servers;
    ChainRouter r(L);
    for (ServerId id = 0; id < 1 + rng.below(6); ++id) {
      const auto a = static_cast<std::uint32_t>(rng.below(L));
      const auto b = a + 1 + static_cast<std::uint32_t>(rng.below(L - a));
      servers.push_back(rs(id, a, b, 10 + rng.uniform() * 200, rng.uniform() * 50));
      r.upsert(servers.back());
    }
    const double expect = enumerate_chains(servers, L);
    if (expect == kInf) {
      CHECK_THROWS_AS(r.find_best_chain(), NoRouteError);
    } else {
      const Chain c = r.find_best_chain();
      CHECK(c.cost_ms == doctest::Approx(expect).epsilon(1e-12));
      check_chain_shape(c, 0, L, servers);
    }
  }
}

TEST_CASE("incremental planner equals fresh recompute after every mutation") {
  for (std::uint64_t seed : {1, 2, 3}) {
    SplitMix64 rng(seed);
    const std::uint32_t L = 12;
    ChainRouter r(L);
    std::map<ServerId, RouteServer> live;
    std::set<ServerId> banned;
    std::size_t checked = 0;
    for (int step = 0; step < 1000; ++step) {
      const auto op = rng.below(5);
      const auto id = static_cast<ServerId>(rng.below(20));
      if (op <= 1) {  // join or move
        const auto a = static_cast<std::uint32_t>(rng.below(L));
        const auto b = a + 1 + static_cast<std::uint32_t>(rng.below(std::min<std::uint64_t>(L - a, 5)));
        live[id] = rs(id, a, b, 10 + rng.uniform() * 100, rng.uniform() * 30);
        r.upsert(live[id]);
      } else if (op == 2) {
        live.erase(id);
        r.remove(id);
      } else if (op == 3) {
        banned.insert(id);
        r.ban(id);
      } else if (live.count(id)) {  // latency change or unban
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
      const auto start = static_cast<std::uint32_t>(rng.below(L));
      const auto end = static_cast<std::uint32_t>(start + 1 + rng.below(L - start));
      for (auto [a, b] : {std::pair<std::uint32_t, std::uint32_t>{0, L}, {start, end}}) {
        const double expect = fresh_cost(active, a, b);
        if (expect == kInf) {
          CHECK_THROWS_AS(r.find_best_chain(a, b), NoRouteError);
        } else {
          const Chain c = r.find_best_chain(a, b);
          CHECK(c.cost_ms == expect);
          for (const auto& h : c.hops) CHECK_FALSE(banned.count(h.server_id));
          check_chain_shape(c, a, b, active);
        }
        ++checked;
      }
    }
    CHECK(checked == 2000);
  }
}

TEST_CASE("repeated queries reuse planner state") {
  ChainRouter r(8);
  for (ServerId id = 0; id < 8; ++id) r.upsert(rs(id, id, id + 1, 100, 1));
  r.find_best_chain();
  const auto before = r.expansions();
  r.find_best_chain();
  CHECK(r.expansions() == before);
  r.upsert(rs(8, 6, 8, 500, 1));  // local change near the goal
  r.find_best_chain();
  CHECK(r.expansions() - before < 9);
}

TEST_CASE("sync follows the directory and the ban list") {
  ChainRouter r(4);
  std::vector<ServerInfo> snap(2);
  snap[0].server_id = 1;
  snap[0].start = 0;
  snap[0].end = 4;
  snap[0].throughput = 100;
  snap[1] = snap[0];
  snap[1].server_id = 2;
  snap[1].throughput = 50;
  BanList bans(10);
  auto rtt = [](const ServerInfo&) { return 5.0; };
  r.sync(snap, bans, 0, rtt);
  CHECK(r.find_best_chain().hops[0].server_id == 1);
  bans.ban(1, 0);
  r.sync(snap, bans, 1, rtt);
  CHECK(r.find_best_chain().hops[0].server_id == 2);
  r.sync(snap, bans, 11, rtt);  // cooldown over
  CHECK(r.find_best_chain().hops[0].server_id == 1);
  snap.erase(snap.begin());
  r.sync(snap, bans, 12, rtt);
  CHECK(r.find_best_chain().hops[0].server_id == 2);
  CHECK(r.active_servers().size() == 1);
}

TEST_CASE("latency tracker smooths with alpha 0.5") {
  LatencyTracker t;
  CHECK_FALSE(t.estimate("a").has_value());
  t.observe("a", 100);
  CHECK(*t.estimate("a") == 100);
  t.observe("a", 50);
  CHECK(*t.estimate("a") == 75);
  t.observe("a", 75);
  CHECK(*t.estimate("a") == 75);
}
