#pragma once

#include <vector>

#include "mdgait/tensor.hpp"

namespace mdgait::fusion {

using ad::Tensor;

// s_i = q (.) f_i; q is [1, d] or [d], features are [..., d].
template <typename T>
Tensor<T> scores(const Tensor<T>& q, const Tensor<T>& feature);

// Softmax across the stream index independently for every coordinate.
template <typename T>
std::vector<Tensor<T>> weights(const std::vector<Tensor<T>>& scores);

// f_a = sum_i w_i (.) f_i.
template <typename T>
Tensor<T> fuse(const std::vector<Tensor<T>>& features, const Tensor<T>& q);

}  // namespace mdgait::fusion
