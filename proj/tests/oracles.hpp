#pragma once

// Test-only reference implementations. Written independently of the library's
// compute paths: plain loops, 64-bit arithmetic, no caching.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "swarmpipe/core_model.hpp"

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const swarmpipe::Matrix& m) {
  Dense out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline std::vector<double> matvec(const std::vector<double>& x, const swarmpipe::Matrix& w) {
  std::vector<double> y(w.cols(), 0.0);
  for (std::size_t c = 0; c < w.cols(); ++c)
    for (std::size_t r = 0; r < w.rows(); ++r) y[c] += x[r] * w(r, c);
  return y;
}

inline std::vector<double> norm(const std::vector<double>& x, const std::vector<float>& g,
                                const std::vector<float>& b) {
  double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
}

// Pre-norm block over a whole sequence, causal attention.
inline Dense block(const swarmpipe::BlockParams& p, const Dense& x) {
  const std::size_t T = x.size(), d = p.hidden, H = p.n_heads, hd = d / H;
  Dense q(T), k(T), v(T);
  for (std::size_t i = 0; i < T; ++i) {
    auto h = norm(x[i], p.ln1_gain, p.ln1_bias);
    q[i] = matvec(h, p.wq);
    k[i] = matvec(h, p.wk);
    v[i] = matvec(h, p.wv);
  }
  Dense out(T);
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<double> attn(d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[i][h * hd + c] * k[j][h * hd + c];
        s[j] = dot / std::sqrt(static_cast<double>(hd));
      }
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (double& e : s) z += (e = std::exp(e - m));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t c = 0; c < hd; ++c) attn[h * hd + c] += s[j] / z * v[j][h * hd + c];
    }
    auto proj = matvec(attn, p.wo);
    std::vector<double> x1(d);
    for (std::size_t c = 0; c < d; ++c) x1[c] = x[i][c] + proj[c];
    auto u = matvec(norm(x1, p.ln2_gain, p.ln2_bias), p.w1);
    for (double& e : u) e = gelu(e);
    auto y = matvec(u, p.w2);
    out[i].resize(d);
    for (std::size_t c = 0; c < d; ++c) out[i][c] = x1[c] + y[c];
  }
  return out;
}

// Central finite differences of L(x) = sum(grad_out * block(x)).
inline Dense finite_difference_grad(const swarmpipe::BlockParams& p, const Dense& x,
                                    const Dense& grad_out, double eps = 1e-3) {
  auto loss = [&](const Dense& in) {
    auto y = block(p, in);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t c = 0; c < y[i].size(); ++c) acc += grad_out[i][c] * y[i][c];
    return acc;
  };
  Dense g(x.size(), std::vector<double>(x[0].size()));
  Dense probe = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x[i].size(); ++c) {
      probe[i][c] = x[i][c] + eps;
      const double up = loss(probe);
      probe[i][c] = x[i][c] - eps;
      const double down = loss(probe);
      probe[i][c] = x[i][c];
      g[i][c] = (up - down) / (2 * eps);
    }
  return g;
}

// Consecutive blocks, each over the whole sequence.
inline Dense stage(std::span<const swarmpipe::BlockParams> blocks, Dense x) {
  for (const auto& p : blocks) x = block(p, x);
  return x;
}

// Finite differences of sum(grad_out * stage(x)).
inline Dense stage_finite_difference_grad(std::span<const swarmpipe::BlockParams> blocks, const Dense& x,
                                          const Dense& grad_out, double eps = 1e-3) {
  auto loss = [&](const Dense& in) {
    auto y = stage(blocks, in);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t c = 0; c < y[i].size(); ++c) acc += grad_out[i][c] * y[i][c];
    return acc;
  };
  Dense g(x.size(), std::vector<double>(x[0].size()));
  Dense probe = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x[i].size(); ++c) {
      probe[i][c] = x[i][c] + eps;
      const double up = loss(probe);
      probe[i][c] = x[i][c] - eps;
      const double down = loss(probe);
      probe[i][c] = x[i][c];
      g[i][c] = (up - down) / (2 * eps);
    }
  return g;
}

// Relative error ||a - b|| / ||b||.
inline double relative_error(const swarmpipe::Matrix& a, const Dense& b) {
  double num = 0, den = 0;
  for (std::size_t r = 0; r < b.size(); ++r)
    for (std::size_t c = 0; c < b[r].size(); ++c) {
      num += (a(r, c) - b[r][c]) * (a(r, c) - b[r][c]);
      den += b[r][c] * b[r][c];
    }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace oracle
