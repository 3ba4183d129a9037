#include "superpose/reference_model.hpp"

#include <cmath>
#include <random>

namespace superpose {

namespace {

// Uniform in [-scale, scale) from the top 53 bits of mt19937_64, which is
// fully specified by the standard (unlike the <random> distributions).
class WeightStream {
 public:
  explicit WeightStream(std::uint64_t seed) : engine_(seed) {}

  std::vector<float> fill(std::size_t n, double scale, double offset = 0.0) {
    std::vector<float> out(n);
    for (auto& w : out) {
      const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
      w = static_cast<float>(offset + scale * (2.0 * u - 1.0));
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out) {
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>((x[i] - mean) * inv) * gain[i] + bias[i];
  }
}

// out[o] = bias[o] + sum_i w[o][i] * x[i]
void affine(std::span<const float> w, std::span<const float> bias, std::span<const float> x,
            std::span<float> out) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = bias.empty() ? 0.0 : bias[o];
    const float* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * x[i];
    out[o] = static_cast<float>(acc);
  }
}

struct KeyRef {
  const float* key;
  const float* value;
  double position;
  std::size_t owner;  // prefix handle index, or prefix.size() for the new segment
};

}  // namespace

std::size_t ReferenceWeights::parameter_count() const {
  std::size_t n = embed.size() + lnf_gain.size() + lnf_bias.size() + unembed.size();
  for (const auto& l : layers) {
    n += l.ln1_gain.size() + l.ln1_bias.size() + l.wq.size() + l.wk.size() + l.wv.size() +
         l.wo.size() + l.bq.size() + l.bk.size() + l.bv.size() + l.bo.size() + l.ln2_gain.size() +
         l.ln2_bias.size() + l.w1.size() + l.b1.size() + l.w2.size() + l.b2.size();
  }
  return n;
}

std::vector<double> alibi_slopes(std::uint32_t heads) {
  auto power_of_two_slopes = [](std::uint32_t n) {
    const double start = std::pow(2.0, -std::pow(2.0, -(std::log2(static_cast<double>(n)) - 3.0)));
    std::vector<double> s(n);
    for (std::uint32_t i = 0; i < n; ++i) s[i] = std::pow(start, static_cast<double>(i + 1));
    return s;
  };
  if (heads == 0) return {};
  const double lg = std::log2(static_cast<double>(heads));
  if (lg == std::floor(lg)) return power_of_two_slopes(heads);
  const auto closest = static_cast<std::uint32_t>(std::pow(2.0, std::floor(lg)));
  auto slopes = power_of_two_slopes(closest);
  const auto extra = alibi_slopes(2 * closest);
  for (std::size_t i = 0; slopes.size() < heads; i += 2) slopes.push_back(extra[i]);
  return slopes;
}

double alibi_bias(double q_pos, double k_pos, std::uint32_t head, std::uint32_t heads) {
  if (k_pos > q_pos) {
    throw Error(ErrorCode::negative_distance, "key position " + std::to_string(k_pos) +
                                                  " is after query position " +
                                                  std::to_string(q_pos));
  }
  if (head >= heads) throw Error(ErrorCode::invalid_argument, "head index out of range");
  return -alibi_slopes(heads)[head] * (q_pos - k_pos);
}

void rotary_rotate(std::span<float> vec, double pos, double base) {
  const std::size_t dim = vec.size();
  for (std::size_t j = 0; 2 * j + 1 < dim; ++j) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
    const double angle = pos * theta;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = vec[2 * j];
    const double x1 = vec[2 * j + 1];
    vec[2 * j] = static_cast<float>(x0 * c - x1 * s);
    vec[2 * j + 1] = static_cast<float>(x0 * s + x1 * c);
  }
}

float gelu(float x) {
  const double v = x;
  return static_cast<float>(0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v))));
}

ReferenceModel::ReferenceModel(ReferenceConfig config) : config_(config) {
  const std::size_t d = config_.d_model();
  const std::size_t f = d * config_.ffn_mult;
  const std::size_t v = config_.vocab;
  const double in_scale = std::sqrt(3.0 / static_cast<double>(d));
  WeightStream rng(config_.seed);

  weights_.embed = rng.fill(v * d, 1.0);
  for (std::uint32_t l = 0; l < config_.layers; ++l) {
    ReferenceLayer layer;
    layer.ln1_gain = rng.fill(d, 0.1, 1.0);
    layer.ln1_bias = rng.fill(d, 0.05);
    layer.wq = rng.fill(d * d, in_scale);
    layer.wk = rng.fill(d * d, in_scale);
    layer.wv = rng.fill(d * d, in_scale);
    layer.wo = rng.fill(d * d, 0.5 * in_scale);
    layer.bq = rng.fill(d, 0.02);
    layer.bk = rng.fill(d, 0.02);
    layer.bv = rng.fill(d, 0.02);
    layer.bo = rng.fill(d, 0.02);
    layer.ln2_gain = rng.fill(d, 0.1, 1.0);
    layer.ln2_bias = rng.fill(d, 0.05);
    layer.w1 = rng.fill(f * d, in_scale);
    layer.b1 = rng.fill(f, 0.02);
    layer.w2 = rng.fill(d * f, 0.5 * std::sqrt(3.0 / static_cast<double>(f)));
    layer.b2 = rng.fill(d, 0.02);
    weights_.layers.push_back(std::move(layer));
  }
  weights_.lnf_gain = rng.fill(d, 0.1, 1.0);
  weights_.lnf_bias = rng.fill(d, 0.05);
  weights_.unembed = rng.fill(v * d, 2.0 * in_scale);

  shape_.name = std::string("reference-") + std::string(to_string(config_.scheme));
  shape_.params = static_cast<double>(weights_.parameter_count());
  shape_.layers = config_.layers;
  shape_.d_model = config_.d_model();
  shape_.heads = config_.heads;
  shape_.head_dim = config_.head_dim;
  shape_.vocab = config_.vocab;
  shape_.scheme = config_.scheme;
  shape_.elem_bytes = sizeof(float);
}

ExtendResult ReferenceModel::forward(std::string_view model_id,
                                     std::span<const KVCacheHandle> prefix,
                                     std::span<const TokenId> tokens,
                                     const PositionVector& positions, bool want_attention) const {
  const std::size_t n = tokens.size();
  const std::size_t d = config_.d_model();
  const std::size_t hd = config_.head_dim;
  const std::size_t f = d * config_.ffn_mult;
  const std::size_t owners = prefix.size() + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto slopes = alibi_slopes(config_.heads);

  for (const auto& handle : prefix) {
    for (const auto& block : handle.blocks()) {
      if (block->keys.size() != config_.layers) {
        throw Error(ErrorCode::dimension_mismatch, "prefix block carries no reference KV tensors");
      }
    }
  }

  auto block = std::make_shared<KVBlock>();
  block->tokens.assign(tokens.begin(), tokens.end());
  block->positions = positions;
  block->keys.resize(config_.layers);
  block->values.resize(config_.layers);
  block->fingerprint = derive_fingerprint(model_id, prefix, tokens, positions);

  std::vector<float> x(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(weights_.embed.begin() + static_cast<std::ptrdiff_t>(tokens[t] * d), d,
                x.begin() + static_cast<std::ptrdiff_t>(t * d));
  }

  std::vector<double> mass(want_attention ? owners : 0, 0.0);
  std::vector<float> h(d), q(n * d), attn(d), o(d), hidden(f), mlp(d);

  for (std::uint32_t l = 0; l < config_.layers; ++l) {
    const auto& W = weights_.layers[l];
    auto& K = block->keys[l];
    auto& V = block->values[l];
    K.assign(n * d, 0.0f);
    V.assign(n * d, 0.0f);

    for (std::size_t t = 0; t < n; ++t) {
      std::span<float> xt(x.data() + t * d, d);
      layer_norm(xt, W.ln1_gain, W.ln1_bias, h);
      affine(W.wq, W.bq, h, std::span<float>(q.data() + t * d, d));
      affine(W.wk, W.bk, h, std::span<float>(K.data() + t * d, d));
      affine(W.wv, W.bv, h, std::span<float>(V.data() + t * d, d));
      if (config_.scheme == PositionScheme::rotary) {
        for (std::size_t hh = 0; hh < config_.heads; ++hh) {
          rotary_rotate(std::span<float>(q.data() + t * d + hh * hd, hd), positions[t],
                        config_.rotary_base);
          rotary_rotate(std::span<float>(K.data() + t * d + hh * hd, hd), positions[t],
                        config_.rotary_base);
        }
      }
    }

    // Key order: prefix handles in order, their blocks in order, then the new segment.
    std::vector<KeyRef> keys;
    for (std::size_t p = 0; p < prefix.size(); ++p) {
      for (const auto& b : prefix[p].blocks()) {
        for (std::size_t j = 0; j < b->size(); ++j) {
          keys.push_back({b->keys[l].data() + j * d, b->values[l].data() + j * d, b->positions[j], p});
        }
      }
    }
    const std::size_t context = keys.size();
    for (std::size_t t = 0; t < n; ++t) {
      keys.push_back({K.data() + t * d, V.data() + t * d, positions[t], prefix.size()});
    }

    std::vector<double> scores;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t visible = context + t + 1;
      for (std::size_t hh = 0; hh < config_.heads; ++hh) {
        const float* qh = q.data() + t * d + hh * hd;
        scores.assign(visible, 0.0);
        double peak = -INFINITY;
        for (std::size_t j = 0; j < visible; ++j) {
          const float* kh = keys[j].key + hh * hd;
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += static_cast<double>(qh[c]) * kh[c];
          double s = dot * scale;
          if (config_.scheme == PositionScheme::alibi) {
            s -= slopes[hh] * (positions[t] - keys[j].position);
          }
          scores[j] = s;
          peak = std::max(peak, s);
        }
        double total = 0.0;
        for (auto& s : scores) {
          s = std::exp(s - peak);
          total += s;
        }
        double check = 0.0;
        for (auto& s : scores) {
          s /= total;
          check += s;
        }
        if (std::abs(check - 1.0) > 1e-6) {
          throw Error(ErrorCode::invalid_argument, "attention row does not normalise");
        }
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < visible; ++j) acc += scores[j] * keys[j].value[hh * hd + c];
          attn[hh * hd + c] = static_cast<float>(acc);
        }
        if (want_attention) {
          for (std::size_t j = 0; j < visible; ++j) mass[keys[j].owner] += scores[j];
        }
      }
      // Residual updates for token t only touch row t, so later tokens' keys are unaffected.
      std::span<float> xt(x.data() + t * d, d);
      affine(W.wo, W.bo, attn, o);
      std::vector<float> mid(d);
      for (std::size_t c = 0; c < d; ++c) mid[c] = xt[c] + o[c];
      layer_norm(mid, W.ln2_gain, W.ln2_bias, h);
      affine(W.w1, W.b1, h, hidden);
      for (auto& v : hidden) v = gelu(v);
      affine(W.w2, W.b2, hidden, mlp);
      for (std::size_t c = 0; c < d; ++c) xt[c] = mid[c] + mlp[c];
    }
  }

  ExtendResult result;
  result.logits = LogitBlock(n, config_.vocab);
  for (std::size_t t = 0; t < n; ++t) {
    layer_norm(std::span<const float>(x.data() + t * d, d), weights_.lnf_gain, weights_.lnf_bias, h);
    affine(weights_.unembed, {}, h, result.logits.row(t));
  }
  if (want_attention) {
    const double norm = static_cast<double>(config_.layers) * config_.heads * static_cast<double>(n);
    for (auto& m : mass) m /= norm;
    result.attention = std::move(mass);
  }
  result.cache = KVCacheHandle(std::string(model_id), std::move(block));
  return result;
}

ReferenceBackend::ReferenceBackend(ReferenceConfig config)
    : model_(config),
      model_id_("reference-" + std::string(to_string(config.scheme)) + "/seed-" +
                std::to_string(config.seed)) {}

ExtendResult ReferenceBackend::do_extend(std::span<const KVCacheHandle> prefix,
                                         std::span<const TokenId> tokens,
                                         const PositionVector& positions, bool want_attention) {
  return model_.forward(model_id_, prefix, tokens, positions, want_attention);
}

ModelShape reference_shape(PositionScheme scheme) {
  ReferenceConfig config;
  config.scheme = scheme;
  return ReferenceModel(config).shape();
}

}  // namespace superpose
