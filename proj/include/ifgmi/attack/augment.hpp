#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ifgmi/core/rng.hpp"
#include "ifgmi/core/tensor.hpp"

namespace ifgmi::attack {

struct AugParams {
  std::size_t crop = 32;  // square crop side
  std::size_t x0 = 0, y0 = 0;
  bool flip = false;
};

inline AugParams draw_aug(Rng& rng, std::size_t size = 32, std::size_t min_crop = 24) {
  AugParams p;
  p.crop = std::uniform_int_distribution<std::size_t>(min_crop, size)(rng);
  p.x0 = std::uniform_int_distribution<std::size_t>(0, size - p.crop)(rng);
  p.y0 = std::uniform_int_distribution<std::size_t>(0, size - p.crop)(rng);
  p.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return p;
}

/// Crop, bilinear resize back to the full side (pixel-centre alignment), then
/// optional horizontal flip. `src` and `dst` are C x S x S.
template <class T>
void augment_into(const T* src, T* dst, std::size_t channels, std::size_t size, const AugParams& p) {
  const double scale = static_cast<double>(p.crop) / static_cast<double>(size);
  std::vector<std::size_t> lo(size), hi(size);
  std::vector<double> frac(size);
  for (std::size_t o = 0; o < size; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(p.crop - 1));
    lo[o] = static_cast<std::size_t>(std::floor(s));
    hi[o] = std::min(lo[o] + 1, p.crop - 1);
    frac[o] = s - static_cast<double>(lo[o]);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = src + c * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      const T* r0 = plane + (p.y0 + lo[y]) * size + p.x0;
      const T* r1 = plane + (p.y0 + hi[y]) * size + p.x0;
      const double fy = frac[y];
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = frac[x];
        const double top = fx == 0 ? r0[lo[x]] : (1 - fx) * r0[lo[x]] + fx * r0[hi[x]];
        const double bot = fx == 0 ? r1[lo[x]] : (1 - fx) * r1[lo[x]] + fx * r1[hi[x]];
        const double v = fy == 0 ? top : (1 - fy) * top + fy * bot;
        const std::size_t ox = p.flip ? size - 1 - x : x;
        dst[(c * size + y) * size + ox] = static_cast<T>(v);
      }
    }
  }
}

/// Augments every image of a [N, C, S, S] batch with its own parameters.
template <class T>
Tensor<T> augment(const Tensor<T>& images, const std::vector<AugParams>& params) {
  if (images.rank() != 4 || params.size() != images.dim(0))
    throw ShapeError("augment: " + std::to_string(params.size()) + " parameter sets for " + shape_str(images.shape()));
  const std::size_t c = images.dim(1), s = images.dim(2), stride = c * s * s;
  Tensor<T> out(images.shape());
  for (std::size_t i = 0; i < params.size(); ++i)
    augment_into(images.data().data() + i * stride, out.data_mut().data() + i * stride, c, s, params[i]);
  return out;
}

template <class T>
Tensor<T> augment(const Tensor<T>& images, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AugParams> params;
  for (std::size_t i = 0; i < images.dim(0); ++i) params.push_back(draw_aug(rng, images.dim(2)));
  return augment(images, params);
}

}  // namespace ifgmi::attack
