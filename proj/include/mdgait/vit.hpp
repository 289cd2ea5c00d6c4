#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdgait/tensor.hpp"

namespace mdgait::vit {

using ad::Tensor;

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t hidden_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_dim = 3072;
  std::size_t feature_dim = 768;
  std::size_t channels = 3;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t sequence_length() const { return patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return hidden_dim / heads; }

  bool operator==(const ViTConfig&) const = default;
};

template <typename T>
struct EncoderBlock {
  Tensor<T> norm1_gain, norm1_bias;
  Tensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  Tensor<T> out_weight, out_bias;
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

template <typename T>
struct ViTParams {
  Tensor<T> patch_weight;  // [hidden, patch_dim]
  Tensor<T> patch_bias;    // [hidden]
  Tensor<T> class_token;   // [1, hidden]
  Tensor<T> position;      // [patches + 1, hidden]
  std::vector<EncoderBlock<T>> blocks;
  Tensor<T> norm_gain, norm_bias;
  Tensor<T> head_weight;  // [feature, hidden]
  Tensor<T> head_bias;    // [feature]

  // Canonical names relative to the stream prefix, e.g. "blocks.0.attn.q.weight".
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
};

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;
// Pixels in [0, 1] are mapped to [-1, 1] before patch embedding.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.5;

// Truncated normal (std 0.02, cut at two sigma) weights; zero biases, class
// token and position matrix; unit layer-norm gains.
template <typename T>
ViTParams<T> init_params(const ViTConfig& cfg, std::uint64_t seed);

std::size_t parameter_count(const ViTConfig& cfg);

// images: [batch, H, W, C] -> [batch, patches, C * P * P]; patches in row-major
// grid order, each flattened row-major with channels innermost.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch_size);

// [batch, H, W, C] -> f_I: [batch, patches, hidden]
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg);

// [batch, N, hidden] with token [1, hidden] -> [batch, N + 1, hidden]
template <typename T>
Tensor<T> prepend_token(const Tensor<T>& tokens, const Tensor<T>& class_token);

template <typename T>
Tensor<T> add_position(const Tensor<T>& tokens, const Tensor<T>& position);

// Pre-norm multi-head self-attention with residual. Attention probabilities
// ([batch, heads, N, N]) are appended to `attention_out` when non-null.
template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const EncoderBlock<T>& block, std::size_t heads,
                          std::vector<Tensor<T>>* attention_out = nullptr);

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const EncoderBlock<T>& block, std::size_t heads,
                        std::vector<Tensor<T>>* attention_out = nullptr);

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const ViTParams<T>& params, const ViTConfig& cfg,
                          std::vector<Tensor<T>>* attention_out = nullptr);

// (x - kPixelMean) / kPixelStd, elementwise.
template <typename T>
Tensor<T> standardize_pixels(const Tensor<T>& images);

// Image batch in [0, 1] -> class-token features [batch, feature_dim].
template <typename T>
Tensor<T> vit_forward(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg);

}  // namespace mdgait::vit
