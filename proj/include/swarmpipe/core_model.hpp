#pragma once

// Deterministic toy transformer used as the compute payload of the swarm.
//
// Blocks are pre-norm residual units:
//   x' = x + Attn(LN1(x))      (causal multi-head attention, KV-cached)
//   y  = x' + W2 * gelu(W1 * LN2(x'))
// Every row is computed with the same fixed summation order regardless of how
// a sequence is chunked, so cached and uncached forwards agree bit-for-bit.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "swarmpipe/tensor.hpp"

namespace swarmpipe {

using Token = std::uint32_t;

struct ModelConfig {
  std::size_t n_blocks = 8;
  std::size_t hidden_dim = 64;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 2048;
  std::uint64_t seed = 0;

  std::size_t head_dim() const noexcept { return hidden_dim / n_heads; }
  // Throws ConfigError.
  void validate() const;
};

struct BlockParams {
  std::size_t index = 0;
  std::size_t hidden = 0;
  std::size_t n_heads = 0;
  Matrix wq, wk, wv, wo;  // [d x d]
  Matrix w1;              // [d x 4d]
  Matrix w2;              // [4d x d]
  std::vector<float> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [d]

  std::size_t parameter_count() const noexcept;
};

struct ClientParams {
  Matrix embedding;    // [vocab x d], tied with the output projection
  Matrix positional;   // [max_seq_len x d], fixed sinusoidal table
  Matrix soft_prompt;  // [p_len x d], optional, trainable by the client
};

struct Model {
  ModelConfig config;
  std::vector<BlockParams> blocks;
  ClientParams client;

  std::size_t parameter_count() const noexcept;
};

// Builds weights from splitmix64 streams keyed by (seed, block, tensor role),
// uniform in [-a, a] with a = 1/sqrt(hidden_dim).
Model init_model(const ModelConfig& config);

std::uint64_t params_hash(std::span<const BlockParams> blocks) noexcept;

struct BlockOutput {
  HiddenStates outputs;  // new positions only
  KVCache delta;         // K/V rows to append to the cache
};

// Causal forward over cache + new rows. Requires cache.length() ==
// inputs.position_offset (StateDesyncError otherwise).
BlockOutput block_forward(const BlockParams& params, const HiddenStates& inputs,
                          const KVCache& cache);

// Runs blocks [first, last) with per-block caches, appending K/V in place.
HiddenStates forward_blocks(std::span<const BlockParams> blocks, HiddenStates inputs,
                            std::span<KVCache> caches);

// Gradient of sum(grad_out * block(recorded_inputs)) with respect to the
// inputs. Full-sequence (training) mode, no KV cache. Internals run in double.
HiddenStates block_backward(const BlockParams& params, const HiddenStates& recorded_inputs,
                            const HiddenStates& grad_out);

// Embeds tokens at absolute positions offset, offset+1, ...
HiddenStates embed_tokens(const ClientParams& client, std::span<const Token> tokens,
                          std::size_t position_offset);

// Tied unembedding of a single hidden row.
std::vector<float> compute_logits(const ClientParams& client, std::span<const float> hidden);

// Greedy argmax, ties toward the lowest token id.
Token argmax_token(std::span<const float> logits) noexcept;

std::vector<double> log_softmax(std::span<const float> logits);

// Seeded top-k sampler. Distributed and local runs consume the same stream.
class TokenSampler {
 public:
  explicit TokenSampler(std::uint64_t seed, std::size_t top_k = 8, double temperature = 1.0);
  Token sample(std::span<const float> logits);

 private:
  std::uint64_t state_;
  std::size_t top_k_;
  double temperature_;
};

struct DecodeMode {
  enum class Kind { greedy, sample, beam };
  Kind kind = Kind::greedy;
  std::uint64_t seed = 0;
  std::size_t beam_width = 1;

  static DecodeMode greedy() { return {}; }
  static DecodeMode sample(std::uint64_t seed) { return {Kind::sample, seed, 1}; }
  static DecodeMode beam(std::size_t k) { return {Kind::beam, 0, k}; }
};

// Chooses tokens for greedy/sample modes; shared by the oracle and the client.
class TokenChooser {
 public:
  explicit TokenChooser(const DecodeMode& mode);
  Token choose(std::span<const float> logits);

 private:
  DecodeMode mode_;
  TokenSampler sampler_;
};

struct BeamHypothesis {
  std::vector<Token> tokens;  // prefix + generated
  double score = 0.0;         // cumulative log-probability of generated tokens
};

struct BeamCandidate {
  double score;
  std::size_t parent;
  Token token;
};

// Top `width` continuations over all beams. Ordering: score descending, then
// parent ascending, then token ascending.
std::vector<BeamCandidate> select_beam_candidates(std::span<const double> beam_scores,
                                                  std::span<const std::vector<double>> log_probs,
                                                  std::size_t width);

// Single-process ground truth. Beam mode returns the best hypothesis.
std::vector<Token> reference_generate(const Model& model, std::span<const Token> prefix,
                                      std::size_t n_new, const DecodeMode& mode);

// Local beam search that recomputes every hypothesis from scratch each step
// (no cache reordering). Returns `width` hypotheses, best first.
std::vector<BeamHypothesis> reference_beam_search(const Model& model,
                                                  std::span<const Token> prefix,
                                                  std::size_t n_new, std::size_t width);

// Last-row hidden state of a full uncached pass through every block.
std::vector<float> full_sequence_last_hidden(const Model& model, std::span<const Token> tokens);

}  // namespace swarmpipe
