#include "mdgait/vit.hpp"

#include <cmath>

#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::vit {

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("vit config: " + msg); };
  if (image_size == 0 || patch_size == 0 || hidden_dim == 0 || heads == 0 || mlp_dim == 0 || feature_dim == 0 ||
      channels == 0) {
    fail("all sizes must be positive (depth may be 0)");
  }
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (hidden_dim % heads != 0) fail("hidden_dim must be divisible by heads");
}

std::size_t parameter_count(const ViTConfig& c) {
  const std::size_t d = c.hidden_dim, m = c.mlp_dim;
  const std::size_t per_block = 2 * d            // norm1
                                + 4 * (d * d + d)  // q, k, v, out projections
                                + 2 * d            // norm2
                                + d * m + m + m * d + d;
  return c.patch_dim() * d + d   // patch projection
         + d                     // class token
         + c.sequence_length() * d  // position matrix
         + c.depth * per_block + 2 * d  // blocks + final norm
         + d * c.feature_dim + c.feature_dim;
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Rng& rng, ad::Shape shape) {
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    x = static_cast<T>(kInitStd * z);
  }
  return Tensor<T>::from_data(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> filled(ad::Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace

template <typename T>
ViTParams<T> init_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.hidden_dim;
  ViTParams<T> p;
  p.patch_weight = trunc_normal<T>(rng, {d, cfg.patch_dim()});
  p.patch_bias = filled<T>({d}, 0);
  p.class_token = filled<T>({1, d}, 0);
  p.position = filled<T>({cfg.sequence_length(), d}, 0);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    EncoderBlock<T> b;
    b.norm1_gain = filled<T>({d}, 1);
    b.norm1_bias = filled<T>({d}, 0);
    b.q_weight = trunc_normal<T>(rng, {d, d});
    b.q_bias = filled<T>({d}, 0);
    b.k_weight = trunc_normal<T>(rng, {d, d});
    b.k_bias = filled<T>({d}, 0);
    b.v_weight = trunc_normal<T>(rng, {d, d});
    b.v_bias = filled<T>({d}, 0);
    b.out_weight = trunc_normal<T>(rng, {d, d});
    b.out_bias = filled<T>({d}, 0);
    b.norm2_gain = filled<T>({d}, 1);
    b.norm2_bias = filled<T>({d}, 0);
    b.fc1_weight = trunc_normal<T>(rng, {cfg.mlp_dim, d});
    b.fc1_bias = filled<T>({cfg.mlp_dim}, 0);
    b.fc2_weight = trunc_normal<T>(rng, {d, cfg.mlp_dim});
    b.fc2_bias = filled<T>({d}, 0);
    p.blocks.push_back(std::move(b));
  }
  p.norm_gain = filled<T>({d}, 1);
  p.norm_bias = filled<T>({d}, 0);
  p.head_weight = trunc_normal<T>(rng, {cfg.feature_dim, d});
  p.head_bias = filled<T>({cfg.feature_dim}, 0);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ViTParams<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out{
      {"patch_embed.weight", patch_weight},
      {"patch_embed.bias", patch_bias},
      {"cls_token", class_token},
      {"pos_embed", position},
  };
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    out.insert(out.end(), {
                              {pre + "norm1.gain", b.norm1_gain},
                              {pre + "norm1.bias", b.norm1_bias},
                              {pre + "attn.q.weight", b.q_weight},
                              {pre + "attn.q.bias", b.q_bias},
                              {pre + "attn.k.weight", b.k_weight},
                              {pre + "attn.k.bias", b.k_bias},
                              {pre + "attn.v.weight", b.v_weight},
                              {pre + "attn.v.bias", b.v_bias},
                              {pre + "attn.out.weight", b.out_weight},
                              {pre + "attn.out.bias", b.out_bias},
                              {pre + "norm2.gain", b.norm2_gain},
                              {pre + "norm2.bias", b.norm2_bias},
                              {pre + "mlp.fc1.weight", b.fc1_weight},
                              {pre + "mlp.fc1.bias", b.fc1_bias},
                              {pre + "mlp.fc2.weight", b.fc2_weight},
                              {pre + "mlp.fc2.bias", b.fc2_bias},
                          });
  }
  out.insert(out.end(), {
                            {"norm.gain", norm_gain},
                            {"norm.bias", norm_bias},
                            {"head.weight", head_weight},
                            {"head.bias", head_bias},
                        });
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  if (images.rank() != 4 || patch == 0 || images.dim(1) % patch != 0 || images.dim(2) % patch != 0) {
    throw ShapeError("patchify: images " + ad::to_string(images.shape()) + " cannot be split into " +
                     std::to_string(patch) + "x" + std::to_string(patch) + " patches");
  }
  const std::size_t batch = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t pdim = c * patch * patch;
  const std::size_t row_len = patch * c;  // one patch row is contiguous in HWC
  std::vector<T> out(batch * gh * gw * pdim);
  // Shared gather/scatter loop; `fwd` copies image -> patches, else accumulates back.
  auto walk = [=](const T* src, T* dst, bool fwd) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
          for (std::size_t py = 0; py < patch; ++py) {
            const std::size_t img = ((b * h + gy * patch + py) * w + gx * patch) * c;
            const std::size_t pat = ((b * gh + gy) * gw + gx) * pdim + py * row_len;
            if (fwd) {
              std::copy(src + img, src + img + row_len, dst + pat);
            } else {
              for (std::size_t q = 0; q < row_len; ++q) dst[img + q] += src[pat + q];
            }
          }
  };
  walk(images.data().data(), out.data(), true);
  return Tensor<T>::make_result({batch, gh * gw, pdim}, std::move(out), {images}, [walk](ad::detail::Node<T>& self) {
    walk(self.grad.data(), self.parents[0]->ensure_grad().data(), false);
  });
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.channels) {
    throw ShapeError("patch_embed: images " + ad::to_string(images.shape()) + " do not match config [batch, " +
                     std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + ", " +
                     std::to_string(cfg.channels) + "]");
  }
  return ad::linear(patchify(images, cfg.patch_size), params.patch_weight, params.patch_bias);
}

template <typename T>
Tensor<T> prepend_token(const Tensor<T>& tokens, const Tensor<T>& class_token) {
  if (tokens.rank() != 3 || class_token.numel() != tokens.dim(2)) {
    throw ShapeError("prepend_token: tokens " + ad::to_string(tokens.shape()) + " and token " +
                     ad::to_string(class_token.shape()));
  }
  const std::size_t batch = tokens.dim(0), d = tokens.dim(2);
  auto t = ad::broadcast_to(ad::reshape(class_token, {1, 1, d}), {batch, 1, d});
  return ad::concat<T>({t, tokens}, 1);
}

template <typename T>
Tensor<T> add_position(const Tensor<T>& tokens, const Tensor<T>& position) {
  if (tokens.rank() != 3 || position.rank() != 2 || tokens.dim(1) != position.dim(0) ||
      tokens.dim(2) != position.dim(1)) {
    throw ShapeError("add_position: tokens " + ad::to_string(tokens.shape()) + " and position matrix " +
                     ad::to_string(position.shape()));
  }
  return ad::add(tokens, position);
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const EncoderBlock<T>& blk, std::size_t heads,
                          std::vector<Tensor<T>>* attention_out) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw ShapeError("attention: input " + ad::to_string(x.shape()) + " with " + std::to_string(heads) + " heads");
  }
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2), dh = d / heads;
  const auto h = ad::layer_norm(x, blk.norm1_gain, blk.norm1_bias, static_cast<T>(kLayerNormEps));
  auto split = [&](const Tensor<T>& w, const Tensor<T>& b) {
    return ad::transpose(ad::reshape(ad::linear(h, w, b), {batch, n, heads, dh}), 1, 2);
  };
  const auto q = split(blk.q_weight, blk.q_bias);
  const auto k = split(blk.k_weight, blk.k_bias);
  const auto v = split(blk.v_weight, blk.v_bias);
  const auto logits = ad::scale(ad::matmul(q, ad::transpose(k, 2, 3)), static_cast<T>(1.0 / std::sqrt(double(dh))));
  const auto attn = ad::softmax(logits, 3);
  if (attention_out != nullptr) attention_out->push_back(attn);
  const auto ctx = ad::reshape(ad::transpose(ad::matmul(attn, v), 1, 2), {batch, n, d});
  return ad::add(x, ad::linear(ctx, blk.out_weight, blk.out_bias));
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const EncoderBlock<T>& blk, std::size_t heads,
                        std::vector<Tensor<T>>* attention_out) {
  const auto y = attention_block(x, blk, heads, attention_out);
  const auto h = ad::layer_norm(y, blk.norm2_gain, blk.norm2_bias, static_cast<T>(kLayerNormEps));
  const auto mlp = ad::linear(ad::gelu(ad::linear(h, blk.fc1_weight, blk.fc1_bias)), blk.fc2_weight, blk.fc2_bias);
  return ad::add(y, mlp);
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const ViTParams<T>& params, const ViTConfig& cfg,
                          std::vector<Tensor<T>>* attention_out) {
  if (x.rank() != 3 || x.dim(1) != cfg.sequence_length() || x.dim(2) != cfg.hidden_dim) {
    throw ShapeError("encoder_forward: input " + ad::to_string(x.shape()) + " does not match [batch, " +
                     std::to_string(cfg.sequence_length()) + ", " + std::to_string(cfg.hidden_dim) + "]");
  }
  Tensor<T> h = x;
  for (const auto& blk : params.blocks) h = encoder_block(h, blk, cfg.heads, attention_out);
  return h;
}

template <typename T>
Tensor<T> standardize_pixels(const Tensor<T>& images) {
  std::vector<T> out(images.numel());
  const auto in = images.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (in[i] - kPixelMean) / kPixelStd;
  return Tensor<T>::make_result(images.shape(), std::move(out), {images}, [](typename Tensor<T>::Node& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    auto& g = src.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / static_cast<T>(kPixelStd);
  });
}

template <typename T>
Tensor<T> vit_forward(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg) {
  const auto pixels = standardize_pixels(images);
  const auto tokens = add_position(prepend_token(patch_embed(pixels, params, cfg), params.class_token),
                                   params.position);
  const auto encoded = encoder_forward(tokens, params, cfg);
  const auto normed = ad::layer_norm(encoded, params.norm_gain, params.norm_bias, static_cast<T>(kLayerNormEps));
  const auto cls = ad::reshape(ad::slice(normed, 1, 0, 1), {images.dim(0), cfg.hidden_dim});
  return ad::linear(cls, params.head_weight, params.head_bias);
}

#define MDGAIT_INSTANTIATE(T)                                                                                  \
  template struct ViTParams<T>;                                                                                \
  template ViTParams<T> init_params<T>(const ViTConfig&, std::uint64_t);                                       \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                                  \
  template Tensor<T> patch_embed(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&);                     \
  template Tensor<T> prepend_token(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add_position(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> attention_block(const Tensor<T>&, const EncoderBlock<T>&, std::size_t,                    \
                                     std::vector<Tensor<T>>*);                                                 \
  template Tensor<T> encoder_block(const Tensor<T>&, const EncoderBlock<T>&, std::size_t,                      \
                                   std::vector<Tensor<T>>*);                                                   \
  template Tensor<T> encoder_forward(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&,                  \
                                     std::vector<Tensor<T>>*);                                                 \
  template Tensor<T> standardize_pixels(const Tensor<T>&);                                                    \
  template Tensor<T> vit_forward(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&);

MDGAIT_INSTANTIATE(float)
MDGAIT_INSTANTIATE(double)

#undef MDGAIT_INSTANTIATE

}  // namespace mdgait::vit
