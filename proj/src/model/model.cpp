#include "mdgait/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::model {

void ModelConfig::validate() const {
  vit.validate();
  if (num_classes < 1) throw ConfigError("model config: num_classes must be at least 1");
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t f = cfg.vit.feature_dim;
  return 2 * vit::parameter_count(cfg.vit) + f + f * cfg.num_classes + cfg.num_classes;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> AdsVitModel<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (auto& [name, t] : vit_s.named_parameters()) out.emplace_back("vit_s." + name, t);
  for (auto& [name, t] : vit_c.named_parameters()) out.emplace_back("vit_c." + name, t);
  out.emplace_back("fusion.q", fusion_q);
  out.emplace_back("classifier.weight", classifier_weight);
  out.emplace_back("classifier.bias", classifier_bias);
  return out;
}

template <typename T>
std::vector<Tensor<T>> AdsVitModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
AdsVitModel<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AdsVitModel<T> m;
  m.config = cfg;
  m.vit_s = vit::init_params<T>(cfg.vit, derive_seed(seed, "vit_s"));
  m.vit_c = vit::init_params<T>(cfg.vit, derive_seed(seed, "vit_c"));
  const std::size_t f = cfg.vit.feature_dim;
  m.fusion_q = Tensor<T>::zeros({1, f}, true);
  Rng rng(derive_seed(seed, "classifier"));
  std::vector<T> w(f * cfg.num_classes);
  for (auto& x : w) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    x = static_cast<T>(z / std::sqrt(static_cast<double>(f)));
  }
  m.classifier_weight = Tensor<T>::from_data({cfg.num_classes, f}, std::move(w), true);
  m.classifier_bias = Tensor<T>::zeros({cfg.num_classes}, true);
  return m;
}

template <typename T>
Tensor<T> forward(const AdsVitModel<T>& model, const Tensor<T>& images_s, const Tensor<T>& images_c) {
  const auto f_s = vit::vit_forward(images_s, model.vit_s, model.config.vit);
  const auto f_c = vit::vit_forward(images_c, model.vit_c, model.config.vit);
  const auto fused = fusion::fuse<T>({f_s, f_c}, model.fusion_q);
  return ad::linear(fused, model.classifier_weight, model.classifier_bias);
}

namespace {

template <typename V>
std::size_t argmax_impl(std::span<const V> logits) {
  if (logits.empty()) throw InvalidArgument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

}  // namespace

std::size_t argmax(std::span<const float> logits) { return argmax_impl(logits); }
std::size_t argmax(std::span<const double> logits) { return argmax_impl(logits); }

template <typename T>
std::vector<std::size_t> predict(const AdsVitModel<T>& model, const Tensor<T>& images_s, const Tensor<T>& images_c) {
  ad::NoGradGuard no_grad;
  const auto logits = forward(model, images_s, images_c);
  const std::size_t classes = logits.dim(1);
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < logits.dim(0); ++b) out.push_back(argmax(logits.data().subspan(b * classes, classes)));
  return out;
}

template <typename T>
std::vector<ad::NamedArray> export_parameters(const AdsVitModel<T>& model) {
  std::vector<ad::NamedArray> out;
  for (const auto& [name, t] : model.named_parameters()) {
    ad::NamedArray e{name, t.shape(), std::vector<float>(t.numel())};
    std::transform(t.data().begin(), t.data().end(), e.data.begin(), [](T v) { return static_cast<float>(v); });
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void import_parameters(AdsVitModel<T>& model, std::span<const ad::NamedArray> entries) {
  std::map<std::string, const ad::NamedArray*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto params = model.named_parameters();
  std::set<std::string> known;
  std::vector<std::string> missing, mismatched;
  for (auto& [name, t] : params) {
    known.insert(name);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      missing.push_back(name);
    } else if (it->second->shape != t.shape()) {
      mismatched.push_back(name + " (checkpoint " + ad::to_string(it->second->shape) + ", model " +
                           ad::to_string(t.shape()) + ")");
    }
  }
  std::vector<std::string> unknown;
  for (const auto& [name, e] : by_name)
    if (!known.contains(name)) unknown.push_back(name);

  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!mismatched.empty()) throw ShapeError("checkpoint shape mismatch: " + join(mismatched));
  if (!missing.empty()) throw ConfigError("checkpoint is missing parameters: " + join(missing));
  if (!unknown.empty()) throw ConfigError("checkpoint has unknown parameters: " + join(unknown));

  for (auto& [name, t] : params) {
    const auto& src = by_name.at(name)->data;
    auto dst = t.data();
    std::transform(src.begin(), src.end(), dst.begin(), [](float v) { return static_cast<T>(v); });
  }
}

template <typename T>
void save_model(const AdsVitModel<T>& model, const std::filesystem::path& path) {
  ad::save_checkpoint(export_parameters(model), path);
}

template <typename T>
AdsVitModel<T> load_model(const ModelConfig& cfg, const std::filesystem::path& path) {
  auto model = init_model<T>(cfg, 0);
  import_parameters(model, ad::load_checkpoint(path));
  return model;
}

#define MDGAIT_INSTANTIATE(T)                                                                               \
  template struct AdsVitModel<T>;                                                                           \
  template AdsVitModel<T> init_model<T>(const ModelConfig&, std::uint64_t);                                 \
  template Tensor<T> forward(const AdsVitModel<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template std::vector<std::size_t> predict(const AdsVitModel<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template std::vector<ad::NamedArray> export_parameters(const AdsVitModel<T>&);                            \
  template void import_parameters(AdsVitModel<T>&, std::span<const ad::NamedArray>);                        \
  template void save_model(const AdsVitModel<T>&, const std::filesystem::path&);                            \
  template AdsVitModel<T> load_model<T>(const ModelConfig&, const std::filesystem::path&);

MDGAIT_INSTANTIATE(float)
MDGAIT_INSTANTIATE(double)

#undef MDGAIT_INSTANTIATE

}  // namespace mdgait::model
