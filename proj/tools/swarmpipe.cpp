// swarmpipe command line: generate, bench, serve, directory.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "swarmpipe/bench.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/sim_swarm.hpp"
#include "swarmpipe/tcp_transport.hpp"

using namespace swarmpipe;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct ModelOptions {
  ModelConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--blocks", cfg.n_blocks, "Transformer blocks")->capture_default_str();
    app->add_option("--hidden", cfg.hidden_dim, "Hidden size")->capture_default_str();
    app->add_option("--heads", cfg.n_heads, "Attention heads")->capture_default_str();
    app->add_option("--vocab", cfg.vocab_size, "Vocabulary size")->capture_default_str();
    app->add_option("--max-seq-len", cfg.max_seq_len, "Longest sequence")->capture_default_str();
    app->add_option("--model-seed", cfg.seed, "Weight seed")->capture_default_str();
  }
};

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string jsonl_path(const std::string& out) {
  std::filesystem::path p(out);
  p.replace_extension(".jsonl");
  return p.string();
}

void run_until_stopped(double duration_s, const std::function<void()>& tick) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    if (tick) tick();
    if (duration_s > 0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= duration_s)
      break;
  }
}

// ---- generate ---------------------------------------------------------------

struct GenerateOptions {
  ModelOptions model;
  std::vector<Token> prefix{5, 17, 42, 9};
  std::size_t steps = 32;
  std::string strategy = "dual-cache";
  std::uint64_t seed = 0;
  double p = 0.0;
  double rtt_ms = 1.0;
  double bandwidth_bps = 1e9;
  std::size_t stages = 4;
  std::size_t replicas = 2;
  bool quantized = false;
  bool relay = false;
  bool sample = false;
  std::size_t beam = 0;
  bool check = false;
  std::string directory;
};

int cmd_generate(const GenerateOptions& o) {
  ClientConfig cc;
  cc.strategy = parse_strategy(o.strategy);
  cc.quantized = o.quantized;
  cc.relay = o.relay;
  cc.seed = o.seed;
  const DecodeMode mode = o.sample ? DecodeMode::sample(o.seed) : DecodeMode::greedy();
  auto model = std::make_shared<const Model>(init_model(o.model.cfg));

  std::unique_ptr<SimSwarm> sim;
  std::unique_ptr<TcpTransport> tcp;
  std::unique_ptr<RemoteDirectoryView> remote;
  InferenceClient* client = nullptr;
  std::unique_ptr<InferenceClient> owned;
  if (o.directory.empty()) {
    if (o.model.cfg.n_blocks % o.stages != 0) throw ConfigError("--stages must divide --blocks");
    sim = std::make_unique<SimSwarm>(model, NetProfile{o.bandwidth_bps, o.rtt_ms, o.p},
                                     SplitMix64::keyed(o.seed, 0x6e6574ULL).next());
    sim->add_pipeline(o.stages, o.replicas, static_cast<std::uint32_t>(o.model.cfg.n_blocks / o.stages));
    client = &sim->add_client(cc);
  } else {
    tcp = std::make_unique<TcpTransport>("client");
    remote = std::make_unique<RemoteDirectoryView>(*tcp, o.directory);
    owned = std::make_unique<InferenceClient>(model, *tcp, *remote, cc);
    client = owned.get();
  }

  json out;
  std::vector<Token> tokens;
  if (o.beam > 0) {
    const auto hyps = client->beam_generate(o.prefix, o.steps, o.beam);
    json beams = json::array();
    for (const auto& h : hyps) beams.push_back({{"tokens", h.tokens}, {"score", h.score}});
    out["beams"] = beams;
    tokens = hyps.front().tokens;
    if (o.check) {
      const auto want = reference_beam_search(*model, o.prefix, o.steps, o.beam);
      bool same = want.size() == hyps.size();
      for (std::size_t i = 0; same && i < want.size(); ++i) same = want[i].tokens == hyps[i].tokens;
      out["matches_local"] = same;
    }
  } else {
    tokens = client->generate(o.prefix, o.steps, mode);
    if (o.check) out["matches_local"] = tokens == reference_generate(*model, o.prefix, o.steps, mode);
  }
  const auto& st = client->stats();
  out["tokens"] = tokens;
  out["generated"] = std::vector<Token>(tokens.begin() + static_cast<std::ptrdiff_t>(o.prefix.size()), tokens.end());
  out["strategy"] = to_string(cc.strategy);
  out["steps_per_s"] = st.steps_per_s();
  out["elapsed_s"] = st.elapsed();
  out["bytes_sent"] = st.bytes_sent;
  out["bytes_received"] = st.bytes_received;
  out["failures"] = st.failures;
  out["recoveries"] = st.recoveries;
  out["restarts"] = st.restarts;
  std::cout << out.dump() << "\n";
  return (o.check && !out["matches_local"].get<bool>()) ? 1 : 0;
}

// ---- bench ------------------------------------------------------------------

struct BenchOptions {
  std::uint64_t seed = 0;
  std::string out;
  bool full_scale = false;
  std::string config;
  std::size_t jobs = 1;
  double params_bytes = 176e9;
  double link_bps = 256e9;
};

int cmd_failure_rate(const BenchOptions& o) {
  FailureRateConfig cfg = o.config.empty() ? FailureRateConfig{} : FailureRateConfig::from_json(read_text(o.config));
  if (o.jobs > 1) cfg.jobs = o.jobs;
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = run_failure_rate_experiment(cfg, o.seed);
  write_file_atomic(o.out, failure_rate_csv(records));
  write_file_atomic(jsonl_path(o.out), failure_rate_jsonl(records));
  std::printf("%-8s %6s %-11s %10s %9s %s\n", "p", "length", "strategy", "steps/s", "recover", "completed");
  for (const auto& r : records)
    std::printf("%-8g %6zu %-11s %10.4f %9zu %s\n", r.p, r.length, to_string(r.strategy), r.steps_per_s,
                r.recoveries, r.completed ? "yes" : "no");
  std::fprintf(stderr, "audit %s, wall %.1f s\n", audit_failure_rate(records) ? "ok" : "FAILED",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_load_balance(const BenchOptions& o) {
  LoadBalanceConfig cfg = o.config.empty()
                              ? (o.full_scale ? LoadBalanceConfig::full_scale() : LoadBalanceConfig::desk())
                              : LoadBalanceConfig::from_json(read_text(o.config), o.full_scale);
  const auto result = run_load_balance_experiment(cfg, o.seed);
  write_file_atomic(o.out, load_balance_csv(result));
  write_file_atomic(jsonl_path(o.out), load_balance_jsonl(result));
  std::printf("%-12s %14s %14s %13s\n", "strategy", "mean thr", "zero fraction", "replacements");
  for (const auto& a : result.arms) {
    double mean = 0;
    for (const auto& m : a.minutes) mean += m.throughput;
    mean /= static_cast<double>(std::max<std::size_t>(a.minutes.size(), 1));
    std::printf("%-12s %14.2f %14.3f %13zu\n", a.arm.label().c_str(), mean, a.zero_fraction(),
                a.total_replacements());
  }
  return 0;
}

int cmd_offload(const BenchOptions& o) {
  const auto e = estimate_offload_bound(o.params_bytes, o.link_bps);
  write_file_atomic(o.out, offload_csv(o.params_bytes, o.link_bps, e));
  json j = {{"experiment", "offload_estimate"},
            {"params_bytes", o.params_bytes},
            {"link_bits_per_s", o.link_bps},
            {"seconds_per_pass", e.seconds_per_pass},
            {"tokens_per_s", e.tokens_per_s}};
  write_file_atomic(jsonl_path(o.out), j.dump() + "\n");
  std::printf("%.3g s per pass, %.3g tokens/s\n", e.seconds_per_pass, e.tokens_per_s);
  return 0;
}

// ---- serve / directory ------------------------------------------------------

int cmd_serve(const ModelOptions& mo, const std::string& config_path, const std::string& listen,
              const std::string& directory, double duration) {
  ServerConfig cfg = ServerConfig::from_json(read_text(config_path));
  const auto [host, port] = split_address(listen);
  TcpListener listener(host, port);
  if (cfg.address.empty()) cfg.address = listener.address();
  auto model = std::make_shared<const Model>(init_model(mo.cfg));
  TcpTransport transport(cfg.address);
  RemoteDirectoryView view(transport, directory);
  BlockServer server(cfg, model, transport, view);
  server.join();
  listener.start(server);
  std::printf("server %u on %s serving blocks [%u, %u)\n", cfg.id, cfg.address.c_str(), server.first_block(),
              server.end_block());
  std::fflush(stdout);
  run_until_stopped(duration, [&] { server.tick(); });
  server.leave();
  listener.stop();
  return 0;
}

int cmd_directory_serve(std::size_t n_blocks, const std::string& listen, double duration) {
  WallClock clock;
  Directory dir(n_blocks);
  DirectoryEndpoint endpoint(dir, clock);
  const auto [host, port] = split_address(listen);
  TcpListener listener(host, port);
  listener.start(endpoint);
  std::printf("directory on %s for %zu blocks\n", listener.address().c_str(), n_blocks);
  std::fflush(stdout);
  run_until_stopped(duration, {});
  listener.stop();
  return 0;
}

int cmd_directory_dump(std::size_t n_blocks, const std::string& address) {
  TcpTransport t("dump");
  RemoteDirectoryView view(t, address);
  std::cout << snapshot_json(view.snapshot(), n_blocks) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swarmpipe: fault-tolerant pipeline-parallel inference over a swarm of servers"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Generate tokens through a swarm (simulated unless --directory)");
  gen.model.add(g);
  g->add_option("--prefix", gen.prefix, "Prefix tokens, comma separated")->delimiter(',')->capture_default_str();
  g->add_option("--steps", gen.steps, "Tokens to generate")->capture_default_str();
  g->add_option("--strategy", gen.strategy, "dual-cache, restart or cacheless")->capture_default_str();
  g->add_option("--seed", gen.seed, "Network, session and sampling seed")->capture_default_str();
  g->add_option("--p", gen.p, "Per-message failure probability")->capture_default_str();
  g->add_option("--rtt-ms", gen.rtt_ms, "Round-trip time")->capture_default_str();
  g->add_option("--bandwidth", gen.bandwidth_bps, "Link bandwidth, bits/s")->capture_default_str();
  g->add_option("--stages", gen.stages, "Pipeline stages")->capture_default_str();
  g->add_option("--replicas", gen.replicas, "Servers per stage")->capture_default_str();
  g->add_flag("--quantized", gen.quantized, "8-bit blockwise activations on the wire");
  g->add_flag("--relay", gen.relay, "Servers push activations to the next hop");
  g->add_flag("--sample", gen.sample, "Sample instead of greedy decoding");
  g->add_option("--beam", gen.beam, "Beam width (0 = off)");
  g->add_flag("--check", gen.check, "Compare with local single-process generation");
  g->add_option("--directory", gen.directory, "host:port of a running directory");

  BenchOptions bench;
  auto* b = app.add_subcommand("bench", "Run an experiment and write CSV + JSONL results");
  b->require_subcommand(1);
  auto add_common = [&](CLI::App* sub, bool needs_seed) {
    if (needs_seed) sub->add_option("--seed", bench.seed, "Experiment seed")->capture_default_str();
    sub->add_option("--out", bench.out, "CSV output path; JSON lines go next to it (.jsonl)")->required();
    sub->add_option("--config", bench.config, "JSON config file (see docs/bench.md)");
  };
  auto* fr = b->add_subcommand("failure-rate", "Steps/s under message loss, three strategies");
  add_common(fr, true);
  fr->add_option("--jobs", bench.jobs, "Grid cells run in parallel")->capture_default_str();
  fr->add_flag("--full-scale", bench.full_scale, "Accepted for symmetry; the grid has one scale");
  auto* lb = b->add_subcommand("load-balance", "Throughput under churn for the balancing strategies");
  add_common(lb, true);
  lb->add_flag("--full-scale", bench.full_scale, "206 servers / 70 blocks instead of 52 / 18");
  auto* off = b->add_subcommand("offload", "Upper bound for offloading-based inference");
  add_common(off, true);
  off->add_option("--params-bytes", bench.params_bytes, "Model size in bytes")->capture_default_str();
  off->add_option("--link-bps", bench.link_bps, "Link bandwidth in bits/s")->capture_default_str();
  off->add_flag("--full-scale", bench.full_scale, "Ignored");

  ModelOptions serve_model;
  std::string serve_config, serve_listen = "127.0.0.1:0", serve_directory;
  double serve_duration = 0;
  auto* sv = app.add_subcommand("serve", "Run a block server over TCP");
  serve_model.add(sv);
  sv->add_option("--config", serve_config, "Server config JSON")->required();
  sv->add_option("--listen", serve_listen, "host:port to listen on")->capture_default_str();
  sv->add_option("--directory", serve_directory, "host:port of the directory")->required();
  sv->add_option("--duration", serve_duration, "Stop after this many seconds (0 = until SIGINT)");

  std::size_t dir_blocks = 8;
  std::string dir_listen = "127.0.0.1:0", dir_connect;
  double dir_duration = 0;
  auto* d = app.add_subcommand("directory", "Run or inspect the announcement directory");
  d->require_subcommand(1);
  auto* ds = d->add_subcommand("serve", "Run the directory over TCP");
  ds->add_option("--blocks", dir_blocks, "Blocks in the model")->capture_default_str();
  ds->add_option("--listen", dir_listen, "host:port to listen on")->capture_default_str();
  ds->add_option("--duration", dir_duration, "Stop after this many seconds (0 = until SIGINT)");
  auto* dd = d->add_subcommand("dump", "Print a running directory's snapshot as JSON");
  dd->add_option("--blocks", dir_blocks, "Blocks in the model")->capture_default_str();
  dd->add_option("--connect", dir_connect, "host:port of the directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (fr->parsed()) return cmd_failure_rate(bench);
    if (lb->parsed()) return cmd_load_balance(bench);
    if (off->parsed()) return cmd_offload(bench);
    if (sv->parsed()) return cmd_serve(serve_model, serve_config, serve_listen, serve_directory, serve_duration);
    if (ds->parsed()) return cmd_directory_serve(dir_blocks, dir_listen, dir_duration);
    if (dd->parsed()) return cmd_directory_dump(dir_blocks, dir_connect);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
