#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "superpose/lm.hpp"

namespace superpose {

struct ReferenceConfig {
  std::uint32_t layers = 2;
  std::uint32_t heads = 2;
  std::uint32_t head_dim = 16;
  std::uint32_t vocab = 256;
  std::uint32_t ffn_mult = 4;
  PositionScheme scheme = PositionScheme::alibi;
  std::uint64_t seed = 20240611;
  double rotary_base = 10000.0;

  std::uint32_t d_model() const noexcept { return heads * head_dim; }
};

/// Dense matrices are row-major [out][in].
struct ReferenceLayer {
  std::vector<float> ln1_gain, ln1_bias;
  std::vector<float> wq, wk, wv, wo;
  std::vector<float> bq, bk, bv, bo;
  std::vector<float> ln2_gain, ln2_bias;
  std::vector<float> w1, b1;  // [ffn][d]
  std::vector<float> w2, b2;  // [d][ffn]
};

struct ReferenceWeights {
  std::vector<float> embed;  // [vocab][d]
  std::vector<ReferenceLayer> layers;
  std::vector<float> lnf_gain, lnf_bias;
  std::vector<float> unembed;  // [vocab][d]

  std::size_t parameter_count() const;
};

/// Standard geometric ALiBi slopes (with the usual interleaving for head
/// counts that are not powers of two).
std::vector<double> alibi_slopes(std::uint32_t heads);

/// -slope_head * (q_pos - k_pos); throws NegativeDistance when k_pos > q_pos.
double alibi_bias(double q_pos, double k_pos, std::uint32_t head, std::uint32_t heads);

/// Rotates consecutive pairs (x[2j], x[2j+1]) by pos * base^(-2j / dim).
/// Real-valued positions interpolate the angle.
void rotary_rotate(std::span<float> vec, double pos, double base = 10000.0);

float gelu(float x);

/// Small pre-LayerNorm decoder with a fixed-seed pseudorandom initialisation.
/// Immutable after construction; forward calls are reentrant.
class ReferenceModel {
 public:
  explicit ReferenceModel(ReferenceConfig config = {});

  const ReferenceConfig& config() const noexcept { return config_; }
  const ReferenceWeights& weights() const noexcept { return weights_; }
  const ModelShape& shape() const noexcept { return shape_; }

  /// Forward over new tokens given prefix KV. Fills the new block's K/V
  /// (post-rotation for rotary) and returns logits for every new token.
  ExtendResult forward(std::string_view model_id, std::span<const KVCacheHandle> prefix,
                       std::span<const TokenId> tokens, const PositionVector& positions,
                       bool want_attention) const;

 private:
  ReferenceConfig config_;
  ReferenceWeights weights_;
  ModelShape shape_;
};

class ReferenceBackend final : public Backend {
 public:
  explicit ReferenceBackend(ReferenceConfig config = {});

  const ModelShape& shape() const override { return model_.shape(); }
  const std::string& model_id() const override { return model_id_; }
  bool supports_attention_summary() const override { return true; }
  bool exports_tensors() const override { return true; }

  const ReferenceModel& model() const noexcept { return model_; }

 protected:
  ExtendResult do_extend(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                         const PositionVector& positions, bool want_attention) override;

 private:
  ReferenceModel model_;
  std::string model_id_;
};

/// Shape of the built-in reference model for a position scheme.
ModelShape reference_shape(PositionScheme scheme);

}  // namespace superpose
