#include "mdgait/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mdgait/error.hpp"

namespace mdgait::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail + " for shape " + to_string(a));
}

Shape strip_leading_ones(const Shape& s) {
  auto it = std::find_if(s.begin(), s.end(), [](std::size_t d) { return d != 1; });
  return Shape(it, s.end());
}

// Length of the repeating block of `b` inside `a`; throws unless b's shape
// (leading 1s stripped) is a suffix of a's shape.
std::size_t broadcast_block(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return numel(a);
  const Shape sb = strip_leading_ones(b);
  if (sb.size() > a.size() || !std::equal(sb.rbegin(), sb.rend(), a.rbegin())) shape_error(op, a, b);
  return numel(sb);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

template <typename T>
bool wants_grad(const detail::Node<T>& n) {
  return n.requires_grad;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (ad::numel(shape) != data.size()) {
    throw ShapeError("from_data: shape " + to_string(shape) + " needs " + std::to_string(ad::numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                                 BackwardFn backward) {
  Tensor out = from_data(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from_data(shape(), node_->data, false);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
  const std::size_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
  if (k != k2) shape_error("matmul", a.shape(), b.shape());
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (a.rank() != b.rank() ||
                    !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = numel(a.shape()) / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);

  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (shared_b) {
    MutMap<T>(out.data(), batch * m, n).noalias() =
        ConstMap<T>(pa, batch * m, k) * ConstMap<T>(pb, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap<T>(out.data() + i * m * n, m, n).noalias() =
          ConstMap<T>(pa + i * m * k, m, k) * ConstMap<T>(pb + i * k * n, k, n);
    }
  }

  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a, b},
                                [batch, m, k, n, shared_b](detail::Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    if (shared_b) {
      ConstMap<T> G(g, batch * m, n);
      if (wants_grad(na)) {
        MutMap<T>(na.ensure_grad().data(), batch * m, k).noalias() +=
            G * ConstMap<T>(nb.data.data(), k, n).transpose();
      }
      if (wants_grad(nb)) {
        MutMap<T>(nb.ensure_grad().data(), k, n).noalias() +=
            ConstMap<T>(na.data.data(), batch * m, k).transpose() * G;
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap<T> G(g + i * m * n, m, n);
      if (wants_grad(na)) {
        MutMap<T>(na.ensure_grad().data() + i * m * k, m, k).noalias() +=
            G * ConstMap<T>(nb.data.data() + i * k * n, k, n).transpose();
      }
      if (wants_grad(nb)) {
        MutMap<T>(nb.ensure_grad().data() + i * k * n, k, n).noalias() +=
            ConstMap<T>(na.data.data() + i * m * k, m, k).transpose() * G;
      }
    }
  });
}

namespace {

enum class Elementwise { add, sub, mul };

template <typename T>
Tensor<T> binary(const char* op, Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t block = broadcast_block(op, a.shape(), b.shape());
  const std::size_t total = a.numel();
  std::vector<T> out(total);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t base = 0; base < total; base += block) {
    T* o = out.data() + base;
    const T* x = pa + base;
    switch (kind) {
      case Elementwise::add: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] + pb[j]; break;
      case Elementwise::sub: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] - pb[j]; break;
      case Elementwise::mul: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] * pb[j]; break;
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [kind, block, total](detail::Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    if (wants_grad(na)) {
      T* ga = na.ensure_grad().data();
      if (kind == Elementwise::mul) {
        for (std::size_t base = 0; base < total; base += block)
          for (std::size_t j = 0; j < block; ++j) ga[base + j] += g[base + j] * nb.data[j];
      } else {
        for (std::size_t i = 0; i < total; ++i) ga[i] += g[i];
      }
    }
    if (wants_grad(nb)) {
      T* gb = nb.ensure_grad().data();
      for (std::size_t base = 0; base < total; base += block) {
        for (std::size_t j = 0; j < block; ++j) {
          switch (kind) {
            case Elementwise::add: gb[j] += g[base + j]; break;
            case Elementwise::sub: gb[j] -= g[base + j]; break;
            case Elementwise::mul: gb[j] += g[base + j] * na.data[base + j]; break;
          }
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", Elementwise::add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", Elementwise::sub, a, b);
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("hadamard", Elementwise::mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) shape_error("softmax", a.shape(), "axis " + std::to_string(axis) + " out of range");
  const std::size_t outer = prod(a.shape(), 0, axis);
  const std::size_t n = a.shape()[axis];
  const std::size_t inner = prod(a.shape(), axis + 1, a.rank());
  const T* x = a.data().data();
  std::vector<T> out(a.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(x[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [outer, n, inner](detail::Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += gy[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (a.rank() < 1) shape_error("layer_norm", a.shape(), "rank 0 input");
  const std::size_t d = a.shape().back();
  if (gain.numel() != d || bias.numel() != d) shape_error("layer_norm", a.shape(), gain.shape());
  const std::size_t rows = a.numel() / d;
  const T* x = a.data().data();
  const T* gm = gain.data().data();
  const T* bt = bias.data().data();
  std::vector<T> out(a.numel());
  std::vector<T> xhat(a.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = gm[j] * h + bt[j];
    }
  }
  return Tensor<T>::make_result(
      a.shape(), std::move(out), {a, gain, bias},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
        auto& na = *self.parents[0];
        auto& ng = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* gy = self.grad.data();
        if (wants_grad(ng)) {
          auto& gg = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (wants_grad(nb)) {
          auto& gb = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
        }
        if (wants_grad(na)) {
          auto& gx = na.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gy[r * d + j] * ng.data[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gy[r * d + j] * ng.data[j];
              gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    auto& np = *self.parents[0];
    auto& gx = np.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = np.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& a, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || bias.numel() != weight.shape()[0]) shape_error("linear", weight.shape(), bias.shape());
  const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
  if (a.rank() < 1 || a.shape().back() != in_dim) shape_error("linear", a.shape(), weight.shape());
  const std::size_t rows = a.numel() / in_dim;
  Shape out_shape = a.shape();
  out_shape.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  MutMap<T> Y(out.data(), rows, out_dim);
  Y.noalias() = ConstMap<T>(a.data().data(), rows, in_dim) * ConstMap<T>(weight.data().data(), out_dim, in_dim).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);

  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a, weight, bias},
                                [rows, in_dim, out_dim](detail::Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nw = *self.parents[1];
    auto& nb = *self.parents[2];
    ConstMap<T> G(self.grad.data(), rows, out_dim);
    if (wants_grad(na)) {
      MutMap<T>(na.ensure_grad().data(), rows, in_dim).noalias() += G * ConstMap<T>(nw.data.data(), out_dim, in_dim);
    }
    if (wants_grad(nw)) {
      MutMap<T>(nw.ensure_grad().data(), out_dim, in_dim).noalias() +=
          G.transpose() * ConstMap<T>(na.data.data(), rows, in_dim);
    }
    if (wants_grad(nb)) {
      auto& db = nb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) db[j] += self.grad[r * out_dim + j];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t d0, std::size_t d1) {
  if (d0 >= a.rank() || d1 >= a.rank()) shape_error("transpose", a.shape(), "axis out of range");
  if (d0 == d1) return reshape(a, a.shape());
  if (d0 > d1) std::swap(d0, d1);
  const Shape& s = a.shape();
  const std::size_t pre = prod(s, 0, d0), na = s[d0], mid = prod(s, d0 + 1, d1), nb = s[d1],
                    post = prod(s, d1 + 1, s.size());
  Shape out_shape = s;
  std::swap(out_shape[d0], out_shape[d1]);
  // Maps between [pre, na, mid, nb, post] and [pre, nb, mid, na, post].
  auto permute = [=](const T* src, T* dst, bool accumulate) {
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t i = 0; i < na; ++i)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t j = 0; j < nb; ++j) {
            const T* from = src + (((p * na + i) * mid + m) * nb + j) * post;
            T* to = dst + (((p * nb + j) * mid + m) * na + i) * post;
            if (accumulate) {
              for (std::size_t q = 0; q < post; ++q) to[q] += from[q];
            } else {
              std::copy(from, from + post, to);
            }
          }
  };
  std::vector<T> out(a.numel());
  permute(a.data().data(), out.data(), false);
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a},
                                [=](detail::Node<T>& self) {
    // The inverse permutation swaps the roles of na and nb.
    auto& gx = self.parents[0]->ensure_grad();
    const T* g = self.grad.data();
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t j = 0; j < nb; ++j)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t i = 0; i < na; ++i) {
            const T* from = g + (((p * nb + j) * mid + m) * na + i) * post;
            T* to = gx.data() + (((p * na + i) * mid + m) * nb + j) * post;
            for (std::size_t q = 0; q < post; ++q) to[q] += from[q];
          }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return Tensor<T>::make_result(std::move(shape), a.values(), {a}, [](detail::Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_error("concat", first, "axis " + std::to_string(axis) + " out of range");
  std::size_t total_axis = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) shape_error("concat", first, s);
    widths.push_back(s[axis]);
    total_axis += s[axis];
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  std::vector<T> out(outer * total_axis * inner);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t chunk = widths[pi] * inner;
    const T* src = parts[pi].data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * total_axis * inner + offset);
    offset += chunk;
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), parts,
                                [outer, inner, total_axis, widths](detail::Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      const std::size_t chunk = widths[pi] * inner;
      auto& np = *self.parents[pi];
      if (wants_grad(np)) {
        auto& g = np.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * total_axis * inner + off;
          for (std::size_t q = 0; q < chunk; ++q) g[o * chunk + q] += src[q];
        }
      }
      off += chunk;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    shape_error("slice", s, "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") on axis " + std::to_string(axis) + " invalid");
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<T> out(outer * length * inner);
  const T* src = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    const T* from = src + (o * full + start) * inner;
    std::copy(from, from + length * inner, out.data() + o * length * inner);
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a},
                                [outer, inner, full, start, length](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* from = self.grad.data() + o * length * inner;
      T* to = g.data() + (o * full + start) * inner;
      for (std::size_t q = 0; q < length * inner; ++q) to[q] += from[q];
    }
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, Shape shape) {
  const std::size_t block = broadcast_block("broadcast_to", shape, a.shape());
  const std::size_t total = numel(shape);
  std::vector<T> out(total);
  for (std::size_t base = 0; base < total; base += block)
    std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(base));
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, [block, total](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t base = 0; base < total; base += block)
      for (std::size_t j = 0; j < block; ++j) g[j] += self.grad[base + j];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({}, {total}, {a}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T n = T(a.numel());
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({}, {total / n}, {a}, [n](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T share = self.grad[0] / n;
    for (auto& v : g) v += share;
  });
}

template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("cross_entropy_logits: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  const T* x = logits.data().data();
  std::vector<T> probs(batch * classes);
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw InvalidArgument("cross_entropy_logits: label " + std::to_string(labels[b]) + " out of range [0, " +
                            std::to_string(classes) + ")");
    }
    const T* row = x + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - mx);
      total += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= total;
    loss += std::log(total) + mx - row[labels[b]];
  }
  loss /= T(batch);
  std::vector<std::size_t> saved(labels.begin(), labels.end());
  return Tensor<T>::make_result({}, {loss}, {logits},
                                [batch, classes, probs = std::move(probs), saved](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T up = self.grad[0] / T(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < classes; ++c) {
        const T onehot = c == saved[b] ? T(1) : T(0);
        g[b * classes + c] += up * (probs[b * classes + c] - onehot);
      }
    }
  });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw InvalidArgument("backward: loss must be a single element, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw InvalidArgument("backward: loss does not depend on any trainable tensor");

  using N = detail::Node<T>;
  std::vector<N*> order;
  std::unordered_set<N*> seen;
  std::vector<std::pair<N*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      N* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    N* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (N* node : order) {
    if (!node->parents.empty()) {
      node->parents.clear();
      node->backward = nullptr;
    }
  }
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts) {
  for (auto& in : inputs) in.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    analytic.emplace_back(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.back().begin());
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto x = inputs[i].data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double saved = x[j];
      x[j] = saved + opts.step;
      const double fp = f().item();
      x[j] = saved - opts.step;
      const double fm = f().item();
      x[j] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || std::isnan(rel)) {
        report.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        report.worst_input = i;
        report.worst_index = j;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

#define MDGAIT_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                            \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                \
  template Tensor<T> broadcast_to(const Tensor<T>&, Shape);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> cross_entropy_logits(const Tensor<T>&, std::span<const std::size_t>);          \
  template void backward(const Tensor<T>&);

MDGAIT_INSTANTIATE(float)
MDGAIT_INSTANTIATE(double)

#undef MDGAIT_INSTANTIATE

}  // namespace mdgait::ad
