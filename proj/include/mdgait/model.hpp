#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mdgait/checkpoint.hpp"
#include "mdgait/fusion.hpp"
#include "mdgait/tensor.hpp"
#include "mdgait/vit.hpp"

namespace mdgait::model {

using ad::Tensor;

struct ModelConfig {
  vit::ViTConfig vit;
  std::size_t num_classes = 2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Dual-stream model: spectrogram ViT, CVD ViT, fusion kernel, linear classifier.
template <typename T>
struct AdsVitModel {
  ModelConfig config;
  vit::ViTParams<T> vit_s;
  vit::ViTParams<T> vit_c;
  Tensor<T> fusion_q;         // [1, feature]
  Tensor<T> classifier_weight;  // [classes, feature]
  Tensor<T> classifier_bias;    // [classes]

  // Prefixed canonical names: vit_s.*, vit_c.*, fusion.q, classifier.*.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
};

template <typename T>
AdsVitModel<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

std::size_t parameter_count(const ModelConfig& cfg);

// images_s / images_c: [batch, H, W, 3]. Returns logits [batch, classes].
template <typename T>
Tensor<T> forward(const AdsVitModel<T>& model, const Tensor<T>& images_s, const Tensor<T>& images_c);

// Argmax with ties broken toward the lowest index.
std::size_t argmax(std::span<const float> logits);
std::size_t argmax(std::span<const double> logits);

template <typename T>
std::vector<std::size_t> predict(const AdsVitModel<T>& model, const Tensor<T>& images_s, const Tensor<T>& images_c);

// Float32 round-trip through the MDCK checkpoint format.
template <typename T>
std::vector<ad::NamedArray> export_parameters(const AdsVitModel<T>& model);
// Copies every named array into the model; missing, unknown, or mis-shaped
// entries are reported together in one ShapeError/ConfigError.
template <typename T>
void import_parameters(AdsVitModel<T>& model, std::span<const ad::NamedArray> entries);

template <typename T>
void save_model(const AdsVitModel<T>& model, const std::filesystem::path& path);
template <typename T>
AdsVitModel<T> load_model(const ModelConfig& cfg, const std::filesystem::path& path);

}  // namespace mdgait::model
