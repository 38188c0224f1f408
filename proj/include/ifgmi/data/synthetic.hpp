#pragma once

// Procedural "identity" corpus: every identity is a face-like blob with its
// own geometry and palette; samples add jitter, lighting and sensor noise.
// The public corpus is rendered from disjoint identities with a hue
// rotation and a stripe texture whose strength is the shift level.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifgmi/core/rng.hpp"
#include "ifgmi/core/serialize.hpp"
#include "ifgmi/core/tensor.hpp"

namespace ifgmi::data {

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSize = 32;
inline constexpr std::size_t kPixels = kChannels * kSize * kSize;
inline constexpr std::uint64_t kPublicIdBase = 1'000'000;

using Rgb = std::array<float, 3>;

struct IdentitySpec {
  std::uint64_t id = 0;
  float cx = 16, cy = 16;  // face centre
  float rx = 9, ry = 10;   // face radii
  float eye_dx = 4, eye_dy = -3, eye_r = 1.5f;
  float mouth_dy = 4.5f, mouth_w = 3.f;
  Rgb skin{}, feature{}, background{};

  std::vector<float> parameters() const {
    return {cx,      cy,      rx,      ry,      eye_dx,     eye_dy,     eye_r,      mouth_dy,      mouth_w,
            skin[0], skin[1], skin[2], feature[0], feature[1], feature[2], background[0], background[1],
            background[2]};
  }
};

struct ShiftConfig {
  float sigma = 0;
  bool palette_rotation = true;
  bool texture_overlay = true;

  static ShiftConfig none() { return {0.f}; }
  static ShiftConfig mild() { return {0.35f}; }
  static ShiftConfig strong() { return {0.9f}; }

  /// Maximum hue rotation (at sigma = 1) and stripe amplitude.
  static constexpr float kMaxRotation = 2.f * std::numbers::pi_v<float> / 3.f;
  static constexpr float kMaxStripe = 0.3f;
};

inline Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.f;
  const float x = c * (1.f - std::abs(std::fmod(hp, 2.f) - 1.f));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const float m = v - c;
  for (auto& ch : rgb) ch += m;
  return rgb;
}

/// Rotation about the grey axis (1,1,1)/sqrt(3), clamped back into [0,1].
inline Rgb rotate_hue(const Rgb& c, float angle) {
  const float cs = std::cos(angle), sn = std::sin(angle);
  const float a = (1.f - cs) / 3.f, b = sn / std::sqrt(3.f);
  const float m[3][3] = {{cs + a, a - b, a + b}, {a + b, cs + a, a - b}, {a - b, a + b, cs + a}};
  Rgb out{};
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(m[i][0] * c[0] + m[i][1] * c[1] + m[i][2] * c[2], 0.f, 1.f);
  return out;
}

/// Deterministic in (corpus seed, identity id).
inline IdentitySpec identity_spec(std::uint64_t corpus_seed, std::uint64_t id) {
  Rng rng(derive_seed(corpus_seed, "identity", id));
  auto u = [&](float lo, float hi) { return uniform<float>(rng, lo, hi); };
  IdentitySpec s;
  s.id = id;
  s.cx = u(13.f, 19.f);
  s.cy = u(14.f, 18.f);
  s.rx = u(6.5f, 11.f);
  s.ry = u(8.f, 12.f);
  s.eye_dx = u(2.5f, 0.55f * s.rx);
  s.eye_dy = u(-0.45f * s.ry, -1.5f);
  s.eye_r = u(1.1f, 2.4f);
  s.mouth_dy = u(0.3f * s.ry, 0.65f * s.ry);
  s.mouth_w = u(1.5f, 0.6f * s.rx);
  s.skin = hsv_to_rgb(u(0.f, 0.12f), u(0.3f, 0.75f), u(0.55f, 0.95f));
  s.feature = hsv_to_rgb(u(0.f, 1.f), u(0.4f, 1.f), u(0.1f, 0.55f));
  s.background = hsv_to_rgb(u(0.f, 1.f), u(0.2f, 0.8f), u(0.3f, 0.9f));
  return s;
}

namespace detail {
// Soft inside-indicator of an ellipse, ~1px transition.
inline float ellipse_mask(float x, float y, float cx, float cy, float rx, float ry) {
  const float d = std::sqrt((x - cx) * (x - cx) / (rx * rx) + (y - cy) * (y - cy) / (ry * ry));
  return std::clamp((1.f - d) * std::min(rx, ry) + 0.5f, 0.f, 1.f);
}
}  // namespace detail

/// Renders one 3x32x32 sample with values in [-1, 1] into `out`.
inline void render_into(const IdentitySpec& spec, std::uint64_t sample_seed, const ShiftConfig& shift, float* out) {
  Rng rng(sample_seed);
  const float dx = uniform<float>(rng, -2.f, 2.f), dy = uniform<float>(rng, -2.f, 2.f);
  const float light = uniform<float>(rng, 0.8f, 1.2f);
  const float stripe_angle = uniform<float>(rng, 0.f, std::numbers::pi_v<float>);
  const float stripe_period = uniform<float>(rng, 4.f, 8.f);
  const float stripe_phase = uniform<float>(rng, 0.f, 2.f * std::numbers::pi_v<float>);

  Rgb skin = spec.skin, feature = spec.feature, bg = spec.background;
  if (shift.palette_rotation && shift.sigma > 0) {
    const float angle = shift.sigma * ShiftConfig::kMaxRotation;
    skin = rotate_hue(skin, angle);
    feature = rotate_hue(feature, angle);
    bg = rotate_hue(bg, angle);
  }
  const float stripe_amp = shift.texture_overlay ? shift.sigma * ShiftConfig::kMaxStripe : 0.f;

  const float cx = spec.cx + dx, cy = spec.cy + dy;
  std::normal_distribution<float> noise(0.f, 0.05f);
  for (std::size_t y = 0; y < kSize; ++y)
    for (std::size_t x = 0; x < kSize; ++x) {
      const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      const float face = detail::ellipse_mask(px, py, cx, cy, spec.rx, spec.ry);
      const float eyes = std::max(detail::ellipse_mask(px, py, cx - spec.eye_dx, cy + spec.eye_dy, spec.eye_r, spec.eye_r),
                                  detail::ellipse_mask(px, py, cx + spec.eye_dx, cy + spec.eye_dy, spec.eye_r, spec.eye_r));
      const float mouth = detail::ellipse_mask(px, py, cx, cy + spec.mouth_dy, spec.mouth_w, 1.f);
      const float feat = std::max(eyes, mouth) * face;
      const float shade = light * (1.1f - 0.2f * py / static_cast<float>(kSize));
      const float stripe =
          stripe_amp * std::sin(2.f * std::numbers::pi_v<float> *
                                    (px * std::cos(stripe_angle) + py * std::sin(stripe_angle)) / stripe_period +
                                stripe_phase);
      for (std::size_t c = 0; c < kChannels; ++c) {
        float v = bg[c] * (1.f - face) + skin[c] * face;
        v = v * (1.f - feat) + feature[c] * feat;
        v = v * shade + stripe + noise(rng);
        out[(c * kSize + y) * kSize + x] = std::clamp(2.f * v - 1.f, -1.f, 1.f);
      }
    }
}

inline Tensor<float> render_identity_image(const IdentitySpec& spec, std::uint64_t sample_seed,
                                           const ShiftConfig& shift = ShiftConfig::none()) {
  Tensor<float> img(Shape{kChannels, kSize, kSize});
  render_into(spec, sample_seed, shift, img.data_mut().data());
  return img;
}

struct LabeledImages {
  Tensor<float> images;     // [N, 3, 32, 32]
  std::vector<int> labels;  // [N]

  std::size_t size() const { return labels.size(); }
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t identities = 0;
  std::size_t per_identity = 0;
  float sigma = 0;
  Shape image_shape{kChannels, kSize, kSize};
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::string checksum;
};

struct PrivateDataset {
  DatasetManifest manifest;
  LabeledImages train;
  LabeledImages test;
};

struct PublicDataset {
  DatasetManifest manifest;
  Tensor<float> images;
};

inline Tensor<float> labels_tensor(const std::vector<int>& labels) {
  std::vector<float> v(labels.begin(), labels.end());
  return Tensor<float>(Shape{labels.size()}, std::move(v));
}

inline std::vector<int> labels_from(const Tensor<float>& t) {
  std::vector<int> out;
  for (float v : t.data()) out.push_back(static_cast<int>(v));
  return out;
}

inline TensorFile to_tensor_file(const PrivateDataset& ds) {
  return {NamedTensor::from("train.images", ds.train.images), NamedTensor::from("train.labels", labels_tensor(ds.train.labels)),
          NamedTensor::from("test.images", ds.test.images), NamedTensor::from("test.labels", labels_tensor(ds.test.labels))};
}

inline TensorFile to_tensor_file(const PublicDataset& ds) { return {NamedTensor::from("images", ds.images)}; }

/// K identities x n samples, split 80/20 per identity.
inline PrivateDataset make_private_dataset(std::uint64_t seed, std::size_t identities, std::size_t per_identity) {
  if (identities < 2) throw std::invalid_argument("make_private_dataset: need at least 2 identities");
  if (per_identity < 20)
    throw std::invalid_argument("make_private_dataset: " + std::to_string(per_identity) +
                                " images per identity is too few to split (need >= 20)");
  const std::size_t n_train = per_identity * 4 / 5, n_test = per_identity - n_train;
  PrivateDataset ds;
  ds.train.images = Tensor<float>(Shape{identities * n_train, kChannels, kSize, kSize});
  ds.test.images = Tensor<float>(Shape{identities * n_test, kChannels, kSize, kSize});
  std::size_t tr = 0, te = 0;
  for (std::size_t k = 0; k < identities; ++k) {
    const auto spec = identity_spec(seed, k);
    for (std::size_t j = 0; j < per_identity; ++j) {
      const auto sample_seed = derive_seed(seed, "sample", k * per_identity + j);
      if (j < n_train) {
        render_into(spec, sample_seed, ShiftConfig::none(), ds.train.images.data_mut().data() + tr++ * kPixels);
        ds.train.labels.push_back(static_cast<int>(k));
      } else {
        render_into(spec, sample_seed, ShiftConfig::none(), ds.test.images.data_mut().data() + te++ * kPixels);
        ds.test.labels.push_back(static_cast<int>(k));
      }
    }
  }
  ds.manifest = DatasetManifest{seed, identities, per_identity, 0.f, {kChannels, kSize, kSize},
                                ds.train.size(), ds.test.size(), ""};
  ds.manifest.checksum = checksum(to_tensor_file(ds));
  return ds;
}

/// Unlabelled images, one per fresh identity (ids start at kPublicIdBase).
inline PublicDataset make_public_dataset(std::uint64_t seed, std::size_t size, const ShiftConfig& shift) {
  if (size < 500) throw std::invalid_argument("make_public_dataset: need at least 500 images, got " + std::to_string(size));
  PublicDataset ds;
  ds.images = Tensor<float>(Shape{size, kChannels, kSize, kSize});
  for (std::size_t i = 0; i < size; ++i) {
    const auto spec = identity_spec(seed, kPublicIdBase + i);
    render_into(spec, derive_seed(seed, "public-sample", i), shift, ds.images.data_mut().data() + i * kPixels);
  }
  ds.manifest = DatasetManifest{seed, 0, 0, shift.sigma, {kChannels, kSize, kSize}, size, 0, ""};
  ds.manifest.checksum = checksum(to_tensor_file(ds));
  return ds;
}

/// Sample rows of a [N, ...] tensor.
inline Tensor<float> take(const Tensor<float>& images, const std::vector<std::size_t>& rows) {
  const std::size_t stride = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = rows.size();
  Tensor<float> out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(images.data().data() + rows[i] * stride, stride, out.data_mut().data() + i * stride);
  return out;
}

}  // namespace ifgmi::data
