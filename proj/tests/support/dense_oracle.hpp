#pragma once

// Monolithic forward over a whole token sequence, written independently of the
// engine's incremental path: everything in double, one pass per layer over all
// tokens, visibility given by an explicit mask.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "superpose/reference_model.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

struct DenseOutput {
  Matrix logits;  // [token][vocab]
  // attention[layer][head][query][key], zero where masked
  std::vector<std::vector<Matrix>> attention;
};

// visible(i, j): token i may attend to token j. Default is causal (j <= i).
using Mask = std::function<bool(std::size_t, std::size_t)>;

namespace detail {

inline std::vector<double> norm(const std::vector<double>& x, const std::vector<float>& g,
                                const std::vector<float>& b) {
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return out;
}

inline std::vector<double> matvec(const std::vector<float>& w, const std::vector<float>& bias,
                                  const std::vector<double>& x, std::size_t rows) {
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = bias.empty() ? 0.0 : bias[r];
    for (std::size_t c = 0; c < x.size(); ++c) acc += w[r * x.size() + c] * x[c];
    out[r] = acc;
  }
  return out;
}

// Pair (2j, 2j+1) of a head turns by angle pos * base^(-2j / head_dim).
inline void rotate(double* v, std::size_t dim, double pos, double base) {
  for (std::size_t j = 0; j < dim / 2; ++j) {
    const double angle = pos / std::pow(base, static_cast<double>(2 * j) / static_cast<double>(dim));
    const double a = v[2 * j], b = v[2 * j + 1];
    v[2 * j] = a * std::cos(angle) - b * std::sin(angle);
    v[2 * j + 1] = a * std::sin(angle) + b * std::cos(angle);
  }
}

inline double slope(std::size_t head, std::size_t heads) {
  // Power-of-two head counts only: 2^(-8 (h + 1) / heads).
  return std::pow(2.0, -8.0 * static_cast<double>(head + 1) / static_cast<double>(heads));
}

}  // namespace detail

inline DenseOutput dense_forward(const superpose::ReferenceModel& model,
                                 std::span<const superpose::TokenId> tokens,
                                 std::span<const double> positions, Mask visible = {},
                                 bool keep_attention = false) {
  using namespace detail;
  const auto& cfg = model.config();
  const auto& w = model.weights();
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model();
  const std::size_t hd = cfg.head_dim;
  const std::size_t f = d * cfg.ffn_mult;
  if (!visible) visible = [](std::size_t i, std::size_t j) { return j <= i; };

  Matrix x(n, std::vector<double>(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < d; ++c) x[t][c] = w.embed[static_cast<std::size_t>(tokens[t]) * d + c];
  }

  DenseOutput out;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& L = w.layers[l];
    Matrix q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto h = norm(x[t], L.ln1_gain, L.ln1_bias);
      q[t] = matvec(L.wq, L.bq, h, d);
      k[t] = matvec(L.wk, L.bk, h, d);
      v[t] = matvec(L.wv, L.bv, h, d);
      if (cfg.scheme == superpose::PositionScheme::rotary) {
        for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
          rotate(q[t].data() + hh * hd, hd, positions[t], cfg.rotary_base);
          rotate(k[t].data() + hh * hd, hd, positions[t], cfg.rotary_base);
        }
      }
    }
    std::vector<Matrix> probs(cfg.heads, Matrix(keep_attention ? n : 0, std::vector<double>(n, 0.0)));
    Matrix attn(n, std::vector<double>(d, 0.0));
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n, -INFINITY);
        double peak = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          if (!visible(i, j)) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += q[i][hh * hd + c] * k[j][hh * hd + c];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          if (cfg.scheme == superpose::PositionScheme::alibi) {
            s[j] -= slope(hh, cfg.heads) * (positions[i] - positions[j]);
          }
          peak = std::max(peak, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += visible(i, j) ? std::exp(s[j] - peak) : 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!visible(i, j)) continue;
          const double p = std::exp(s[j] - peak) / z;
          if (keep_attention) probs[hh][i][j] = p;
          for (std::size_t c = 0; c < hd; ++c) attn[i][hh * hd + c] += p * v[j][hh * hd + c];
        }
      }
    }
    if (keep_attention) out.attention.push_back(std::move(probs));
    for (std::size_t t = 0; t < n; ++t) {
      const auto o = matvec(L.wo, L.bo, attn[t], d);
      for (std::size_t c = 0; c < d; ++c) x[t][c] += o[c];
      auto hidden = matvec(L.w1, L.b1, norm(x[t], L.ln2_gain, L.ln2_bias), f);
      for (auto& u : hidden) u = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
      const auto m = matvec(L.w2, L.b2, hidden, d);
      for (std::size_t c = 0; c < d; ++c) x[t][c] += m[c];
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    out.logits.push_back(matvec(w.unembed, {}, norm(x[t], w.lnf_gain, w.lnf_bias), cfg.vocab));
  }
  return out;
}

// Largest |a - b| between engine logits rows and oracle rows [row0, row0 + rows).
inline double max_abs_diff(const superpose::LogitBlock& engine, const Matrix& dense, std::size_t row0) {
  double worst = 0.0;
  for (std::size_t r = 0; r < engine.rows(); ++r) {
    const auto row = engine.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) worst = std::max(worst, std::abs(row[c] - dense[row0 + r][c]));
  }
  return worst;
}

// Mean of -log softmax(row t-1)[token t] over t = 1..n-1, rows taken from `dense` at row0.
inline double mean_shifted_nll(const Matrix& dense, std::size_t row0, std::span<const superpose::TokenId> tokens) {
  double total = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const auto& row = dense[row0 + t - 1];
    double z = 0.0;
    for (double v : row) z += std::exp(v);
    total += std::log(z) - row[static_cast<std::size_t>(tokens[t])];
  }
  return total / static_cast<double>(tokens.size() - 1);
}

}  // namespace oracle
