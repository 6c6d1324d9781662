#pragma once

// Client side: chain management, the three generation strategies, failure
// recovery by restoring replacement servers from client-side history, beam
// search with cache reordering, and soft-prompt fine-tuning.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "swarmpipe/chain_router.hpp"
#include "swarmpipe/core_model.hpp"
#include "swarmpipe/netsim.hpp"
#include "swarmpipe/swarm_directory.hpp"

namespace swarmpipe {

enum class Strategy { dual_cache, restart, cacheless };

const char* to_string(Strategy s) noexcept;
// Accepts "dual-cache", "restart", "cacheless" (underscores too).
Strategy parse_strategy(const std::string& name);

struct ClientConfig {
  Strategy strategy = Strategy::dual_cache;
  bool quantized = false;        // q8 activations on STEP/FORWARD
  bool relay = false;            // servers push outputs to the next hop
  std::size_t max_retries = 10;  // chain re-selections per step
  double budget_s = std::numeric_limits<double>::infinity();  // simulated seconds per call
  double ban_cooldown_s = 60.0;
  // Servers echo activations; tokens are not computed from logits. Only for
  // timing and byte-count experiments.
  bool passthrough = false;
  std::uint64_t seed = 0;  // session ids
};

struct RecoveryRecord {
  std::size_t stage_index = 0;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  std::size_t history_tokens = 0;  // positions the failed stage had processed
  std::size_t restore_payload_bytes = 0;
  std::size_t replacement_servers = 0;
  double time = 0.0;
};

struct GenerationStats {
  std::size_t tokens = 0;                // generated in the finished attempt
  std::uint64_t step_payload_bytes = 0;  // STEP/FORWARD activation payloads sent
  std::uint64_t restore_payload_bytes = 0;
  std::uint64_t bytes_sent = 0;          // framed, every request
  std::uint64_t bytes_received = 0;
  std::size_t failures = 0;
  std::size_t recoveries = 0;
  std::size_t restarts = 0;
  std::size_t relay_fallbacks = 0;
  std::vector<std::uint64_t> step_bytes;  // activation payload per generated token
  std::vector<RecoveryRecord> recovery_log;
  double start_time = 0.0;
  double end_time = 0.0;
  bool completed = false;

  double elapsed() const noexcept { return end_time - start_time; }
  double steps_per_s() const noexcept { return elapsed() > 0 ? static_cast<double>(tokens) / elapsed() : 0.0; }
};

class InferenceClient {
 public:
  InferenceClient(std::shared_ptr<const Model> model, Transport& transport, DirectoryView& directory,
                  ClientConfig config = {});
  ~InferenceClient();

  // Prefix plus n_new generated tokens. Throws SwarmUnavailable when no chain
  // can be formed within the retry budget and BudgetExceeded past budget_s.
  std::vector<Token> generate(std::span<const Token> prefix, std::size_t n_new,
                              const DecodeMode& mode = DecodeMode::greedy());

  // Width-k beam search with cache reordering. Returns k hypotheses, best
  // first. Uses dual-cache recovery regardless of the configured strategy.
  std::vector<BeamHypothesis> beam_generate(std::span<const Token> prefix, std::size_t n_new, std::size_t k);

  const GenerationStats& stats() const noexcept { return stats_; }
  const ClientConfig& config() const noexcept { return config_; }
  ChainRouter& router() noexcept { return router_; }
  BanList& bans() noexcept { return bans_; }
  // Servers of the current chain, in order.
  std::vector<ChainHop> current_chain() const;

 private:
  struct Stage {
    ChainHop hop;
    SessionId session{};
    std::vector<HiddenStates> history;  // per beam: inputs the server has cached
  };

  friend class FinetuneSession;

  void refresh();
  Chain route(std::uint32_t a, std::uint32_t b, std::size_t& retries);
  std::vector<Stage> open_chain(std::uint32_t a, std::uint32_t b, std::size_t& retries);
  void open_stage(Stage& s);
  void close_all();
  void fail_server(ServerId id);

  std::vector<HiddenStates> run_step(std::vector<HiddenStates> batch, std::size_t& retries);
  std::vector<HiddenStates> run_forward(std::vector<HiddenStates> batch, std::size_t& retries);
  // Swaps stage i for a freshly restored chain segment; returns its length.
  std::size_t replace_failed(std::size_t i, std::size_t& retries);
  void reorder_all(const std::vector<std::uint32_t>& indices, std::size_t& retries);

  std::vector<Token> generate_once(std::span<const Token> prefix, std::size_t n_new, const DecodeMode& mode);
  std::vector<Token> generate_cacheless(std::span<const Token> prefix, std::size_t n_new, const DecodeMode& mode);
  Token next_token(TokenChooser& chooser, const HiddenStates& out, const std::vector<Token>& seq,
                   std::size_t prefix_len);
  HiddenStates as_seen(const HiddenStates& h) const;
  SessionId new_session();
  WireMessage call(const std::string& dest, const WireMessage& m);
  void check_budget() const;
  void begin_stats();
  ActivationEncoding encoding() const noexcept {
    return config_.quantized ? ActivationEncoding::q8 : ActivationEncoding::f32;
  }

  std::shared_ptr<const Model> model_;
  Transport& transport_;
  DirectoryView& directory_;
  ClientConfig config_;
  ChainRouter router_;
  BanList bans_;
  LatencyTracker latency_;
  SplitMix64 session_rng_;
  std::vector<Stage> stages_;
  GenerationStats stats_;
};

struct TrainExample {
  std::vector<Token> tokens;
  std::vector<std::int32_t> targets;  // next-token label per position, -1 to ignore
};

// Copy task: random tokens, a separator, then the same tokens again; labels
// on the second half.
std::vector<TrainExample> make_copy_task(std::size_t batch, std::size_t length, std::size_t vocab,
                                         std::uint64_t seed);

struct FinetuneConfig {
  std::size_t prompt_len = 4;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  std::size_t max_pass_retries = 20;
};

/// Trains a soft prompt prepended to every sequence. Servers only run the
/// frozen blocks; the prompt and optimiser live here.
class FinetuneSession {
 public:
  FinetuneSession(std::shared_ptr<const Model> model, Transport& transport, DirectoryView& directory,
                  FinetuneConfig config, ClientConfig client = {});

  // One SGD step; returns the loss before the update. A failure anywhere in
  // the pass discards it and repeats forward and backward from scratch.
  double step(const std::vector<TrainExample>& batch);

  const Matrix& soft_prompt() const noexcept { return prompt_; }
  const std::vector<double>& losses() const noexcept { return losses_; }
  std::size_t repeated_passes() const noexcept { return repeats_; }
  // Mean cross-entropy without touching the prompt, local computation.
  static double local_loss(const Model& model, const Matrix& prompt, const std::vector<TrainExample>& batch);

 private:
  double pass(const std::vector<TrainExample>& batch, Matrix& grad);

  std::shared_ptr<const Model> model_;
  FinetuneConfig config_;
  InferenceClient client_;
  Matrix prompt_;
  std::vector<double> losses_;
  std::size_t repeats_ = 0;
};

}  // namespace swarmpipe
