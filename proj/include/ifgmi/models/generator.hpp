#pragma once

// Style-conditioned generator. The synthesis network is an ordered stack of
// blocks so that it can be cut at any split point:
//
//   prefix(w, i)      = B_i o ... o B_1 (constant)      (i = 0: the constant)
//   suffix(f, w, i)   = toRGB o B_last o ... o B_{i+1} (f)
//
// and suffix(prefix(w, i), w, i) == full(w) for every i.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifgmi/models/layers.hpp"

namespace ifgmi::models {

struct GeneratorConfig {
  std::size_t z_dim = 64;
  std::size_t w_dim = 64;
  std::size_t const_channels = 64;
  std::size_t const_size = 4;
  std::vector<std::size_t> block_channels{64, 32, 16, 16};
  std::vector<bool> block_upsample{false, true, true, true};
  std::size_t image_channels = 3;
};

template <class T>
struct MappingNetwork {
  std::vector<Linear<T>> layers;

  MappingNetwork() = default;
  MappingNetwork(const GeneratorConfig& cfg, Rng& rng) {
    std::size_t in = cfg.z_dim;
    for (int i = 0; i < 3; ++i) {
      layers.emplace_back(in, cfg.w_dim, rng);
      in = cfg.w_dim;
    }
  }

  Tensor<T> operator()(const Tensor<T>& z) const {
    Tensor<T> h = z;
    for (const auto& l : layers) h = leaky_relu(l(h), T(0.2));
    return h;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".fc" + std::to_string(i), out);
  }
};

/// [upsample] -> conv3x3 -> instance norm -> style scale/shift -> lrelu.
template <class T>
struct SynthesisBlock {
  bool upsample = false;
  Conv<T> conv;
  Linear<T> style;  // w -> (scale, shift) per output channel

  SynthesisBlock() = default;
  SynthesisBlock(std::size_t in, std::size_t out, bool up, std::size_t w_dim, Rng& rng)
      : upsample(up), conv(in, out, 3, rng), style(w_dim, 2 * out, rng, 0.5) {}

  std::size_t out_channels() const { return conv.weight.dim(0); }
  std::size_t in_channels() const { return conv.weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& w) const {
    Tensor<T> h = upsample ? upsample2x(x) : x;
    h = instance_norm(conv(h));
    auto [scale, shift] = split_cols(style(w));
    h = modulate(h, add_scalar(scale, T(1)), shift);
    return leaky_relu(h, T(0.2));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv.collect(prefix + ".conv", out);
    style.collect(prefix + ".style", out);
  }
};

template <class T>
struct SynthesisStack {
  Tensor<T> constant;  // [1, C, 4, 4]
  std::vector<SynthesisBlock<T>> blocks;
  Conv<T> to_rgb;

  SynthesisStack() = default;
  SynthesisStack(const GeneratorConfig& cfg, Rng& rng) {
    if (cfg.block_channels.size() != cfg.block_upsample.size())
      throw std::invalid_argument("SynthesisStack: channel and upsample lists differ in length");
    constant = init_normal<T>({1, cfg.const_channels, cfg.const_size, cfg.const_size}, rng, 1.0);
    std::size_t in = cfg.const_channels;
    for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
      blocks.emplace_back(in, cfg.block_channels[i], cfg.block_upsample[i], cfg.w_dim, rng);
      in = cfg.block_channels[i];
    }
    to_rgb = Conv<T>(in, cfg.image_channels, 1, rng, 1.0);
  }

  std::size_t num_blocks() const { return blocks.size(); }
  /// Index meaning "already an image": suffix from here is the identity.
  std::size_t image_index() const { return blocks.size() + 1; }

  /// Per-sample shape of the feature at split point i (0..num_blocks), or of
  /// the image for i == image_index().
  Shape feature_shape(std::size_t i) const {
    if (i > image_index()) throw std::out_of_range("feature_shape: split " + std::to_string(i) + " out of range");
    std::size_t c = constant.dim(1), s = constant.dim(2);
    for (std::size_t b = 0; b < std::min(i, num_blocks()); ++b) {
      c = blocks[b].out_channels();
      if (blocks[b].upsample) s *= 2;
    }
    if (i == image_index()) c = to_rgb.weight.dim(0);
    return {c, s, s};
  }

  /// Runs blocks from+1 .. to (1-based block numbering).
  Tensor<T> run_blocks(const Tensor<T>& f, const Tensor<T>& w, std::size_t from, std::size_t to) const {
    Tensor<T> h = f;
    for (std::size_t b = from; b < to; ++b) h = blocks[b](h, w);
    return h;
  }

  Tensor<T> broadcast_constant(std::size_t n) const {
    return concat_rows(std::vector<Tensor<T>>(n, constant));
  }

  Tensor<T> prefix(const Tensor<T>& w, std::size_t i) const {
    if (i > num_blocks())
      throw std::out_of_range("synth_prefix: split " + std::to_string(i) + " exceeds " + std::to_string(num_blocks()));
    return run_blocks(broadcast_constant(w.dim(0)), w, 0, i);
  }

  Tensor<T> suffix(const Tensor<T>& f, const Tensor<T>& w, std::size_t i) const {
    if (i > image_index())
      throw std::out_of_range("synth_suffix: split " + std::to_string(i) + " out of range");
    const Shape expect = feature_shape(i);
    if (f.rank() != 4 || Shape(f.shape().begin() + 1, f.shape().end()) != expect || f.dim(0) != w.dim(0))
      throw ShapeError("synth_suffix: feature " + shape_str(f.shape()) + " does not match split " +
                       std::to_string(i) + " shape " + shape_str(expect) + " for " + std::to_string(w.dim(0)) +
                       " styles");
    if (i == image_index()) return f;
    return tanh(to_rgb(run_blocks(f, w, i, num_blocks())));
  }

  Tensor<T> full(const Tensor<T>& w) const { return suffix(prefix(w, 0), w, 0); }

  void collect(const std::string& prefix_name, ParamList<T>& out) const {
    out.emplace_back(prefix_name + ".constant", constant);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix_name + ".block" + std::to_string(i + 1), out);
    to_rgb.collect(prefix_name + ".to_rgb", out);
  }
};

/// Mapping + synthesis.
template <class T>
struct Generator {
  GeneratorConfig config;
  MappingNetwork<T> mapping;
  SynthesisStack<T> synthesis;

  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : config(cfg) {
    Rng rng(seed);
    mapping = MappingNetwork<T>(cfg, rng);
    synthesis = SynthesisStack<T>(cfg, rng);
  }

  Tensor<T> map(const Tensor<T>& z) const { return mapping(z); }
  Tensor<T> operator()(const Tensor<T>& z) const { return synthesis.full(mapping(z)); }

  ParamList<T> mapping_parameters() const {
    ParamList<T> p;
    mapping.collect("mapping", p);
    return p;
  }
  ParamList<T> parameters() const {
    ParamList<T> p;
    mapping.collect("mapping", p);
    synthesis.collect("synthesis", p);
    return p;
  }

  template <class U>
  Generator<U> cast() const {
    Generator<U> g(config, 0);
    copy_parameters(parameters(), g.parameters());
    return g;
  }
};

}  // namespace ifgmi::models
