#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace ifgmi::attack {

/// Euclidean projection of x onto { y : ||y - center||_1 <= r }, in place.
/// Sort-based simplex thresholding on |x - center|; the arithmetic runs in
/// double and the result is tightened if rounding back to T would leave it
/// outside the ball.
template <class T>
void project_l1_ball(std::span<T> x, std::span<const T> center, double r) {
  if (x.size() != center.size()) throw std::invalid_argument("project_l1_ball: size mismatch");
  if (!(r >= 0)) throw std::invalid_argument("project_l1_ball: radius must be non-negative");
  const std::size_t n = x.size();
  std::vector<double> d(n);
  double l1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = static_cast<double>(x[i]) - static_cast<double>(center[i]);
    l1 += std::abs(d[i]);
  }
  if (l1 <= r) return;

  std::vector<double> u(n);
  double target = r;
  for (int attempt = 0; attempt < 8; ++attempt) {
    for (std::size_t i = 0; i < n; ++i) u[i] = std::abs(d[i]);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0, theta = 0;
    for (std::size_t j = 0; j < n; ++j) {
      cum += u[j];
      const double t = (cum - target) / static_cast<double>(j + 1);
      if (u[j] > t) theta = t;
    }
    double after = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mag = std::max(std::abs(d[i]) - theta, 0.0);
      x[i] = static_cast<T>(static_cast<double>(center[i]) + std::copysign(mag, d[i]));
      after += std::abs(static_cast<double>(x[i]) - static_cast<double>(center[i]));
    }
    if (after <= r) return;
    // Overshoot is a few ulps of the coordinates; shrink with a growing step
    // so the correction is not itself lost to rounding.
    const double ulp = r * std::numeric_limits<T>::epsilon() * static_cast<double>(1u << (2 * attempt));
    target -= std::max(2 * (after - r), ulp);
    if (target <= 0) break;
  }
  std::copy(center.begin(), center.end(), x.begin());
}

/// Row-wise projection of a [N, ...] buffer.
template <class T>
void project_l1_rows(std::span<T> x, std::span<const T> center, std::size_t rows, double r) {
  const std::size_t stride = x.size() / rows;
  for (std::size_t i = 0; i < rows; ++i)
    project_l1_ball(x.subspan(i * stride, stride), center.subspan(i * stride, stride), r);
}

template <class T>
double l1_distance(std::span<const T> a, std::span<const T> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc;
}

}  // namespace ifgmi::attack
