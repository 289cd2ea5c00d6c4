#include "mdgait/fusion.hpp"

#include "mdgait/error.hpp"

namespace mdgait::fusion {

template <typename T>
Tensor<T> scores(const Tensor<T>& q, const Tensor<T>& feature) {
  if (feature.rank() == 0 || q.numel() != feature.shape().back()) {
    throw ShapeError("fusion scores: kernel " + ad::to_string(q.shape()) + " does not match feature " +
                     ad::to_string(feature.shape()));
  }
  return ad::hadamard(feature, q);
}

template <typename T>
std::vector<Tensor<T>> weights(const std::vector<Tensor<T>>& s) {
  if (s.size() < 2) throw InvalidArgument("fusion weights: at least two streams are required");
  const ad::Shape shape = s.front().shape();
  ad::Shape stacked_one{1};
  stacked_one.insert(stacked_one.end(), shape.begin(), shape.end());
  std::vector<Tensor<T>> rows;
  for (const auto& si : s) {
    if (si.shape() != shape) {
      throw ShapeError("fusion weights: score shapes " + ad::to_string(shape) + " and " + ad::to_string(si.shape()));
    }
    rows.push_back(ad::reshape(si, stacked_one));
  }
  const auto w = ad::softmax(ad::concat(rows, 0), 0);
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(ad::reshape(ad::slice(w, 0, i, 1), shape));
  return out;
}

template <typename T>
Tensor<T> fuse(const std::vector<Tensor<T>>& features, const Tensor<T>& q) {
  std::vector<Tensor<T>> s;
  for (const auto& f : features) s.push_back(scores(q, f));
  const auto w = weights(s);
  Tensor<T> out = ad::hadamard(w[0], features[0]);
  for (std::size_t i = 1; i < features.size(); ++i) out = ad::add(out, ad::hadamard(w[i], features[i]));
  return out;
}

template Tensor<float> scores(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> scores(const Tensor<double>&, const Tensor<double>&);
template std::vector<Tensor<float>> weights(const std::vector<Tensor<float>>&);
template std::vector<Tensor<double>> weights(const std::vector<Tensor<double>>&);
template Tensor<float> fuse(const std::vector<Tensor<float>>&, const Tensor<float>&);
template Tensor<double> fuse(const std::vector<Tensor<double>>&, const Tensor<double>&);

}  // namespace mdgait::fusion
