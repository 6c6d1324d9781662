#include "swarmpipe/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "swarmpipe/errors.hpp"
#include "swarmpipe/random.hpp"

namespace swarmpipe {
namespace {

constexpr float kLayerNormEps = 1e-5f;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

enum TensorRole : std::uint64_t {
  kWq = 0, kWk, kWv, kWo, kW1, kW2, kLn1Gain, kLn1Bias, kLn2Gain, kLn2Bias,
  kEmbedding = 100,
};

float uniform_weight(SplitMix64& rng, double bound) {
  double u = static_cast<double>(rng.next() >> 40) * 0x1.0p-24;
  return static_cast<float>(u * 2.0 * bound - bound);
}

Matrix random_matrix(std::uint64_t seed, std::uint64_t block, std::uint64_t role,
                     std::size_t rows, std::size_t cols, double bound) {
  SplitMix64 rng = SplitMix64::keyed(seed, block, role);
  Matrix m(rows, cols);
  for (float& w : m.data()) w = uniform_weight(rng, bound);
  return m;
}

std::vector<float> random_vector(std::uint64_t seed, std::uint64_t block, std::uint64_t role,
                                 std::size_t n, double bound, float center) {
  SplitMix64 rng = SplitMix64::keyed(seed, block, role);
  std::vector<float> v(n);
  for (float& w : v) w = center + uniform_weight(rng, bound);
  return v;
}

void layer_norm(std::span<const float> x, std::span<const float> gain,
                std::span<const float> bias, std::span<float> out) {
  const auto n = static_cast<float>(x.size());
  float mean = 0.0f;
  for (float v : x) mean += v;
  mean /= n;
  float var = 0.0f;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= n;
  const float rstd = 1.0f / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

// out = in * W, with W stored [in x out]. Accumulates over input rows in order.
void row_times(std::span<const float> in, const Matrix& w, std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t r = 0; r < in.size(); ++r) {
    const float a = in[r];
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += a * wr[c];
  }
}

float gelu(float u) {
  return 0.5f * u * (1.0f + std::tanh(static_cast<float>(kGeluC) * (u + 0.044715f * u * u * u)));
}

void check_config_dims(std::size_t d, std::size_t heads) {
  if (heads == 0 || d == 0 || d % heads != 0)
    throw ConfigError("hidden_dim must be a positive multiple of n_heads");
}

}  // namespace

void ModelConfig::validate() const {
  check_config_dims(hidden_dim, n_heads);
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
}

std::size_t BlockParams::parameter_count() const noexcept {
  return wq.size() + wk.size() + wv.size() + wo.size() + w1.size() + w2.size() +
         ln1_gain.size() + ln1_bias.size() + ln2_gain.size() + ln2_bias.size();
}

std::size_t Model::parameter_count() const noexcept {
  std::size_t total = client.embedding.size();
  for (const auto& b : blocks) total += b.parameter_count();
  return total;
}

Model init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.hidden_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Model model;
  model.config = config;
  model.blocks.reserve(config.n_blocks);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::uint64_t key = b + 1;
    BlockParams p;
    p.index = b;
    p.hidden = d;
    p.n_heads = config.n_heads;
    p.wq = random_matrix(config.seed, key, kWq, d, d, bound);
    p.wk = random_matrix(config.seed, key, kWk, d, d, bound);
    p.wv = random_matrix(config.seed, key, kWv, d, d, bound);
    p.wo = random_matrix(config.seed, key, kWo, d, d, bound);
    p.w1 = random_matrix(config.seed, key, kW1, d, 4 * d, bound);
    p.w2 = random_matrix(config.seed, key, kW2, 4 * d, d, bound);
    p.ln1_gain = random_vector(config.seed, key, kLn1Gain, d, bound, 1.0f);
    p.ln1_bias = random_vector(config.seed, key, kLn1Bias, d, bound, 0.0f);
    p.ln2_gain = random_vector(config.seed, key, kLn2Gain, d, bound, 1.0f);
    p.ln2_bias = random_vector(config.seed, key, kLn2Bias, d, bound, 0.0f);
    model.blocks.push_back(std::move(p));
  }
  model.client.embedding = random_matrix(config.seed, 0, kEmbedding, config.vocab_size, d, bound);

  model.client.positional = Matrix(config.max_seq_len, d);
  for (std::size_t pos = 0; pos < config.max_seq_len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      model.client.positional(pos, i) =
          static_cast<float>(bound * (i % 2 == 0 ? std::sin(angle) : std::cos(angle)));
    }
  }
  return model;
}

std::uint64_t params_hash(std::span<const BlockParams> blocks) noexcept {
  std::uint64_t h = kFnvOffset;
  for (const auto& b : blocks) {
    for (const Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) h = fnv1a_floats(m->data(), h);
    for (const auto* v : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias}) h = fnv1a_floats(*v, h);
  }
  return h;
}

BlockOutput block_forward(const BlockParams& p, const HiddenStates& inputs, const KVCache& cache) {
  const std::size_t d = p.hidden;
  if (inputs.hidden() != d) throw ProtocolError("block_forward: hidden size mismatch");
  if (cache.length() != inputs.position_offset)
    throw StateDesyncError("block_forward: cache holds " + std::to_string(cache.length()) +
                           " positions but inputs start at " +
                           std::to_string(inputs.position_offset));
  const std::size_t n_new = inputs.tokens();
  const std::size_t past = cache.length();
  const std::size_t heads = p.n_heads;
  const std::size_t hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  BlockOutput result;
  result.delta.keys = Matrix(n_new, d);
  result.delta.values = Matrix(n_new, d);
  Matrix queries(n_new, d);
  std::vector<float> normed(d);
  for (std::size_t i = 0; i < n_new; ++i) {
    layer_norm(inputs.values.row(i), p.ln1_gain, p.ln1_bias, normed);
    row_times(normed, p.wq, queries.row(i));
    row_times(normed, p.wk, result.delta.keys.row(i));
    row_times(normed, p.wv, result.delta.values.row(i));
  }

  auto key_row = [&](std::size_t j) {
    return j < past ? cache.keys.row(j) : std::span<const float>(result.delta.keys.row(j - past));
  };
  auto value_row = [&](std::size_t j) {
    return j < past ? cache.values.row(j)
                    : std::span<const float>(result.delta.values.row(j - past));
  };

  result.outputs.values = Matrix(n_new, d);
  result.outputs.position_offset = inputs.position_offset;
  std::vector<float> scores(past + n_new);
  std::vector<float> attn(d), projected(d), residual(d), hidden4(4 * d), mlp(d);
  for (std::size_t i = 0; i < n_new; ++i) {
    const std::size_t span_len = past + i + 1;
    const auto q = queries.row(i);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      float best = -INFINITY;
      for (std::size_t j = 0; j < span_len; ++j) {
        const auto k = key_row(j);
        float dot = 0.0f;
        for (std::size_t c = 0; c < hd; ++c) dot += q[off + c] * k[off + c];
        scores[j] = dot * scale;
        best = std::max(best, scores[j]);
      }
      float total = 0.0f;
      for (std::size_t c = 0; c < hd; ++c) attn[off + c] = 0.0f;
      for (std::size_t j = 0; j < span_len; ++j) {
        const float e = std::exp(scores[j] - best);
        total += e;
        const auto v = value_row(j);
        for (std::size_t c = 0; c < hd; ++c) attn[off + c] += e * v[off + c];
      }
      for (std::size_t c = 0; c < hd; ++c) attn[off + c] /= total;
    }
    row_times(attn, p.wo, projected);
    const auto x = inputs.values.row(i);
    for (std::size_t c = 0; c < d; ++c) residual[c] = x[c] + projected[c];

    layer_norm(residual, p.ln2_gain, p.ln2_bias, normed);
    row_times(normed, p.w1, hidden4);
    for (float& u : hidden4) u = gelu(u);
    row_times(hidden4, p.w2, mlp);
    auto out = result.outputs.values.row(i);
    for (std::size_t c = 0; c < d; ++c) out[c] = residual[c] + mlp[c];
  }
  return result;
}

HiddenStates forward_blocks(std::span<const BlockParams> blocks, HiddenStates inputs,
                            std::span<KVCache> caches) {
  if (caches.size() != blocks.size()) throw ProtocolError("forward_blocks: cache count mismatch");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockOutput out = block_forward(blocks[b], inputs, caches[b]);
    caches[b].append(out.delta);
    inputs = std::move(out.outputs);
  }
  return inputs;
}

namespace {

struct NormRecord {
  std::vector<double> xhat;  // [T x d]
  std::vector<double> rstd;  // [T]
};

void layer_norm_d(const std::vector<double>& x, std::size_t rows, std::size_t d,
                  std::span<const float> gain, std::span<const float> bias,
                  std::vector<double>& out, NormRecord& rec) {
  out.assign(rows * d, 0.0);
  rec.xhat.assign(rows * d, 0.0);
  rec.rstd.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * d];
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
    rec.rstd[r] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * rstd;
      rec.xhat[r * d + c] = xh;
      out[r * d + c] = xh * gain[c] + bias[c];
    }
  }
}

// Accumulates the input gradient of a layer norm into dx.
void layer_norm_backward(const std::vector<double>& dout, const NormRecord& rec, std::size_t rows,
                         std::size_t d, std::span<const float> gain, std::vector<double>& dx) {
  std::vector<double> dxh(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dxh[c] = dout[r * d + c] * gain[c];
      m1 += dxh[c];
      m2 += dxh[c] * rec.xhat[r * d + c];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c)
      dx[r * d + c] += rec.rstd[r] * (dxh[c] - m1 - rec.xhat[r * d + c] * m2);
  }
}

// out[rows x w.cols] = in[rows x w.rows] * W
std::vector<double> times(const std::vector<double>& in, std::size_t rows, const Matrix& w) {
  std::vector<double> out(rows * w.cols(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double a = in[r * w.rows() + k];
      for (std::size_t c = 0; c < w.cols(); ++c) out[r * w.cols() + c] += a * w(k, c);
    }
  return out;
}

// out[rows x w.rows] = in[rows x w.cols] * W^T
std::vector<double> times_transposed(const std::vector<double>& in, std::size_t rows,
                                     const Matrix& w) {
  std::vector<double> out(rows * w.rows(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < w.rows(); ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < w.cols(); ++c) acc += in[r * w.cols() + c] * w(k, c);
      out[r * w.rows() + k] = acc;
    }
  return out;
}

}  // namespace

HiddenStates block_backward(const BlockParams& p, const HiddenStates& recorded_inputs,
                            const HiddenStates& grad_out) {
  const std::size_t d = p.hidden;
  const std::size_t T = recorded_inputs.tokens();
  if (recorded_inputs.hidden() != d || grad_out.hidden() != d || grad_out.tokens() != T)
    throw ProtocolError("block_backward: shape mismatch");
  const std::size_t heads = p.n_heads;
  const std::size_t hd = d / heads;
  const std::size_t F = 4 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(recorded_inputs.values.data().begin(), recorded_inputs.values.data().end());

  // Forward, keeping what the backward pass needs.
  std::vector<double> h1;
  NormRecord n1;
  layer_norm_d(x, T, d, p.ln1_gain, p.ln1_bias, h1, n1);
  const auto q = times(h1, T, p.wq);
  const auto k = times(h1, T, p.wk);
  const auto v = times(h1, T, p.wv);
  std::vector<double> probs(heads * T * T, 0.0);
  std::vector<double> a(T * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < T; ++i) {
      double* pi = &probs[(h * T + i) * T];
      double best = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[i * d + off + c] * k[j * d + off + c];
        pi[j] = dot * scale;
        best = std::max(best, pi[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        pi[j] = std::exp(pi[j] - best);
        total += pi[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        pi[j] /= total;
        for (std::size_t c = 0; c < hd; ++c) a[i * d + off + c] += pi[j] * v[j * d + off + c];
      }
    }
  }
  auto x1 = times(a, T, p.wo);
  for (std::size_t i = 0; i < T * d; ++i) x1[i] += x[i];
  std::vector<double> h2;
  NormRecord n2;
  layer_norm_d(x1, T, d, p.ln2_gain, p.ln2_bias, h2, n2);
  const auto u = times(h2, T, p.w1);

  // Backward.
  std::vector<double> gy(grad_out.values.data().begin(), grad_out.values.data().end());
  std::vector<double> dx1 = gy;
  auto du = times_transposed(gy, T, p.w2);  // d/d gelu(u)
  for (std::size_t i = 0; i < T * F; ++i) {
    const double ui = u[i];
    const double inner = kGeluC * (ui + 0.044715 * ui * ui * ui);
    const double t = std::tanh(inner);
    const double dgelu =
        0.5 * (1.0 + t) + 0.5 * ui * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * ui * ui);
    du[i] *= dgelu;
  }
  const auto dh2 = times_transposed(du, T, p.w1);
  layer_norm_backward(dh2, n2, T, d, p.ln2_gain, dx1);

  std::vector<double> dx = dx1;
  const auto da = times_transposed(dx1, T, p.wo);
  std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
  std::vector<double> dprob(T);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < T; ++i) {
      const double* pi = &probs[(h * T + i) * T];
      double weighted = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += da[i * d + off + c] * v[j * d + off + c];
        dprob[j] = dot;
        weighted += pi[j] * dot;
        for (std::size_t c = 0; c < hd; ++c) dv[j * d + off + c] += pi[j] * da[i * d + off + c];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = pi[j] * (dprob[j] - weighted) * scale;
        for (std::size_t c = 0; c < hd; ++c) {
          dq[i * d + off + c] += ds * k[j * d + off + c];
          dk[j * d + off + c] += ds * q[i * d + off + c];
        }
      }
    }
  }
  auto dh1 = times_transposed(dq, T, p.wq);
  const auto dh1k = times_transposed(dk, T, p.wk);
  const auto dh1v = times_transposed(dv, T, p.wv);
  for (std::size_t i = 0; i < T * d; ++i) dh1[i] += dh1k[i] + dh1v[i];
  layer_norm_backward(dh1, n1, T, d, p.ln1_gain, dx);

  HiddenStates grad_in;
  grad_in.position_offset = recorded_inputs.position_offset;
  grad_in.values = Matrix(T, d);
  for (std::size_t i = 0; i < T * d; ++i) grad_in.values.data()[i] = static_cast<float>(dx[i]);
  return grad_in;
}

HiddenStates embed_tokens(const ClientParams& client, std::span<const Token> tokens,
                          std::size_t position_offset) {
  const std::size_t d = client.embedding.cols();
  if (position_offset + tokens.size() > client.positional.rows())
    throw CapacityError("sequence exceeds max_seq_len");
  HiddenStates out;
  out.position_offset = position_offset;
  out.values = Matrix(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= client.embedding.rows()) throw ProtocolError("token id out of vocabulary");
    const auto e = client.embedding.row(tokens[i]);
    const auto pe = client.positional.row(position_offset + i);
    auto row = out.values.row(i);
    for (std::size_t c = 0; c < d; ++c) row[c] = e[c] + pe[c];
  }
  return out;
}

std::vector<float> compute_logits(const ClientParams& client, std::span<const float> hidden) {
  const Matrix& e = client.embedding;
  if (hidden.size() != e.cols()) throw ProtocolError("compute_logits: hidden size mismatch");
  std::vector<float> logits(e.rows());
  for (std::size_t v = 0; v < e.rows(); ++v) {
    const auto ev = e.row(v);
    float acc = 0.0f;
    for (std::size_t c = 0; c < hidden.size(); ++c) acc += hidden[c] * ev[c];
    logits[v] = acc;
  }
  return logits;
}

Token argmax_token(std::span<const float> logits) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<Token>(best);
}

std::vector<double> log_softmax(std::span<const float> logits) {
  double best = -INFINITY;
  for (float l : logits) best = std::max(best, static_cast<double>(l));
  double total = 0.0;
  for (float l : logits) total += std::exp(static_cast<double>(l) - best);
  const double lse = best + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

TokenSampler::TokenSampler(std::uint64_t seed, std::size_t top_k, double temperature)
    : state_(seed), top_k_(top_k), temperature_(temperature) {
  if (top_k_ == 0 || !(temperature_ > 0.0)) throw ConfigError("invalid sampler settings");
}

Token TokenSampler::sample(std::span<const float> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = std::min(top_k_, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
                    });
  const double top = logits[order[0]];
  std::vector<double> weights(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp((static_cast<double>(logits[order[i]]) - top) / temperature_);
    total += weights[i];
  }
  SplitMix64 rng(state_);
  const double target = rng.uniform() * total;
  state_ = rng.next();
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += weights[i];
    if (target < acc) return static_cast<Token>(order[i]);
  }
  return static_cast<Token>(order[k - 1]);
}

TokenChooser::TokenChooser(const DecodeMode& mode) : mode_(mode), sampler_(mode.seed) {
  if (mode.kind == DecodeMode::Kind::beam)
    throw ConfigError("beam mode has no per-token chooser; use beam search");
}

Token TokenChooser::choose(std::span<const float> logits) {
  return mode_.kind == DecodeMode::Kind::sample ? sampler_.sample(logits) : argmax_token(logits);
}

std::vector<BeamCandidate> select_beam_candidates(std::span<const double> beam_scores,
                                                  std::span<const std::vector<double>> log_probs,
                                                  std::size_t width) {
  std::vector<BeamCandidate> all;
  for (std::size_t b = 0; b < beam_scores.size(); ++b)
    for (std::size_t t = 0; t < log_probs[b].size(); ++t)
      all.push_back({beam_scores[b] + log_probs[b][t], b, static_cast<Token>(t)});
  const std::size_t keep = std::min(width, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const BeamCandidate& a, const BeamCandidate& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.parent != b.parent) return a.parent < b.parent;
                      return a.token < b.token;
                    });
  all.resize(keep);
  return all;
}

namespace {

void check_generate_args(const Model& model, std::span<const Token> prefix, std::size_t n_new) {
  if (prefix.empty()) throw ConfigError("prefix must be non-empty");
  if (prefix.size() + n_new > model.config.max_seq_len)
    throw CapacityError("prefix + n_new exceeds max_seq_len");
}

}  // namespace

std::vector<Token> reference_generate(const Model& model, std::span<const Token> prefix,
                                      std::size_t n_new, const DecodeMode& mode) {
  check_generate_args(model, prefix, n_new);
  if (mode.kind == DecodeMode::Kind::beam)
    return reference_beam_search(model, prefix, n_new, mode.beam_width).front().tokens;

  std::vector<Token> seq(prefix.begin(), prefix.end());
  if (n_new == 0) return seq;
  TokenChooser chooser(mode);
  std::vector<KVCache> caches(model.blocks.size());
  HiddenStates inputs = embed_tokens(model.client, prefix, 0);
  for (std::size_t step = 0; step < n_new; ++step) {
    HiddenStates out = forward_blocks(model.blocks, std::move(inputs), caches);
    const auto logits = compute_logits(model.client, out.values.row(out.tokens() - 1));
    const Token next = chooser.choose(logits);
    seq.push_back(next);
    inputs = embed_tokens(model.client, std::span<const Token>(&next, 1), seq.size() - 1);
  }
  return seq;
}

std::vector<float> full_sequence_last_hidden(const Model& model, std::span<const Token> tokens) {
  std::vector<KVCache> caches(model.blocks.size());
  HiddenStates out = forward_blocks(model.blocks, embed_tokens(model.client, tokens, 0), caches);
  const auto last = out.values.row(out.tokens() - 1);
  return {last.begin(), last.end()};
}

std::vector<BeamHypothesis> reference_beam_search(const Model& model,
                                                  std::span<const Token> prefix,
                                                  std::size_t n_new, std::size_t width) {
  check_generate_args(model, prefix, n_new);
  if (width == 0 || width > model.config.vocab_size)
    throw ConfigError("beam width must be in [1, vocab_size]");
  std::vector<BeamHypothesis> beams{{std::vector<Token>(prefix.begin(), prefix.end()), 0.0}};
  for (std::size_t step = 0; step < n_new; ++step) {
    std::vector<double> scores;
    std::vector<std::vector<double>> log_probs;
    for (const auto& beam : beams) {
      const auto hidden = full_sequence_last_hidden(model, beam.tokens);
      log_probs.push_back(log_softmax(compute_logits(model.client, hidden)));
      scores.push_back(beam.score);
    }
    std::vector<BeamHypothesis> next;
    for (const auto& cand : select_beam_candidates(scores, log_probs, width)) {
      BeamHypothesis h = beams[cand.parent];
      h.tokens.push_back(cand.token);
      h.score = cand.score;
      next.push_back(std::move(h));
    }
    beams = std::move(next);
  }
  return beams;
}

}  // namespace swarmpipe
