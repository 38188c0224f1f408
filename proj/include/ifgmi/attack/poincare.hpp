#pragma once

#include <vector>

#include "ifgmi/core/ops.hpp"

namespace ifgmi::attack {

inline constexpr double kBallEdge = 0.9999;

/// Hyperbolic distance per row between probability rows v1 [N, K] (rescaled
/// so ||v1|| <= 0.9999) and v2 = 0.9999 * onehot(c):
///   arccosh(1 + 2 ||v1 - v2||^2 / ((1 - ||v1||^2)(1 - ||v2||^2)))
/// Returns [N].
template <class T>
Tensor<T> poincare_distance_rows(const Tensor<T>& probs, const std::vector<int>& classes) {
  detail::require_rank(probs, 2, "poincare_loss");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  detail::require(classes.size() == n, "poincare_loss",
                  std::to_string(classes.size()) + " classes for " + shape_str(probs.shape()));
  Tensor<T> v2(probs.shape());
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(classes[i] >= 0 && static_cast<std::size_t>(classes[i]) < k, "poincare_loss",
                    "class " + std::to_string(classes[i]) + " out of range for " + std::to_string(k) + " classes");
    v2.data_mut()[i * k + static_cast<std::size_t>(classes[i])] = static_cast<T>(kBallEdge);
  }
  const T edge = static_cast<T>(kBallEdge);

  auto norm = sqrt(sum_rows(mul(probs, probs)));
  auto scale = clamp_max(div(Tensor<T>(Shape{n}, edge), norm), T(1));
  auto v1 = scale_rows(probs, scale);

  auto diff = sub(v1, v2);
  auto num = sum_rows(mul(diff, diff));
  auto one_minus_v1 = add_scalar(mul_scalar(sum_rows(mul(v1, v1)), T(-1)), T(1));
  auto den = mul_scalar(one_minus_v1, T(1) - edge * edge);
  return arccosh(add_scalar(mul_scalar(div(num, den), T(2)), T(1)));
}

/// Identity loss per row of [N, K] logits: the distance above applied to
/// softmax(logits).
template <class T>
Tensor<T> poincare_loss_rows(const Tensor<T>& logits, const std::vector<int>& classes) {
  return poincare_distance_rows(softmax(logits), classes);
}

/// Summed loss over the batch; a single row gives the per-image loss.
template <class T>
Tensor<T> poincare_loss(const Tensor<T>& logits, const std::vector<int>& classes) {
  return sum(poincare_loss_rows(logits, classes));
}

template <class T>
Tensor<T> poincare_loss(const Tensor<T>& logits, int c) {
  return poincare_loss(logits, std::vector<int>(logits.dim(0), c));
}

}  // namespace ifgmi::attack
