#pragma once

#include <array>
#include <string>
#include <vector>

#include "ifgmi/models/layers.hpp"

namespace ifgmi::models {

enum class ClassifierVariant { target, evaluation, independent };

inline std::string to_string(ClassifierVariant v) {
  switch (v) {
    case ClassifierVariant::target: return "target";
    case ClassifierVariant::evaluation: return "eval";
    case ClassifierVariant::independent: return "indep";
  }
  return "?";
}

inline ClassifierVariant variant_from_string(const std::string& s) {
  if (s == "target") return ClassifierVariant::target;
  if (s == "eval" || s == "evaluation") return ClassifierVariant::evaluation;
  if (s == "indep" || s == "independent") return ClassifierVariant::independent;
  throw std::invalid_argument("unknown classifier variant '" + s + "'");
}

struct ClassifierConfig {
  ClassifierVariant variant = ClassifierVariant::target;
  std::array<std::size_t, 3> widths{16, 32, 32};
  std::size_t feature_dim = 64;
  std::size_t classes = 10;

  static ClassifierConfig for_variant(ClassifierVariant v, std::size_t classes) {
    ClassifierConfig c;
    c.variant = v;
    c.classes = classes;
    switch (v) {
      case ClassifierVariant::target: c.widths = {16, 32, 32}; break;
      case ClassifierVariant::evaluation: c.widths = {24, 48, 48}; break;
      case ClassifierVariant::independent: c.widths = {12, 24, 48}; break;
    }
    return c;
  }
};

template <class T>
struct ClassifierOutput {
  Tensor<T> features;  // penultimate activation [N, feature_dim]
  Tensor<T> logits;    // [N, classes]
};

/// Three conv+pool stages, a fully connected feature layer and a linear head.
template <class T>
struct Classifier {
  ClassifierConfig config;
  std::array<Conv<T>, 3> trunk;
  Linear<T> fc;
  Linear<T> head;

  Classifier() = default;
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed) : config(cfg) {
    Rng rng(seed);
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      trunk[i] = Conv<T>(in, cfg.widths[i], 3, rng);
      in = cfg.widths[i];
    }
    fc = Linear<T>(in * 16, cfg.feature_dim, rng);
    head = Linear<T>(cfg.feature_dim, cfg.classes, rng, 1.0);
  }

  ClassifierOutput<T> forward(const Tensor<T>& images) const {
    Tensor<T> h = images;
    for (const auto& c : trunk) h = avg_pool2x(leaky_relu(c(h), T(0.1)));
    h = reshape(h, {h.dim(0), h.size() / h.dim(0)});
    auto feats = leaky_relu(fc(h), T(0.1));
    return {feats, head(feats)};
  }

  Tensor<T> logits(const Tensor<T>& images) const { return forward(images).logits; }
  Tensor<T> features(const Tensor<T>& images) const { return forward(images).features; }

  ParamList<T> parameters() const {
    ParamList<T> p;
    for (std::size_t i = 0; i < 3; ++i) trunk[i].collect("conv" + std::to_string(i), p);
    fc.collect("fc", p);
    head.collect("head", p);
    return p;
  }

  template <class U>
  Classifier<U> cast() const {
    Classifier<U> c(config, 0);
    copy_parameters(parameters(), c.parameters());
    return c;
  }
};

struct DiscriminatorConfig {
  std::array<std::size_t, 4> widths{16, 32, 64, 64};
};

/// Four conv stages mirroring the generator (32 -> 16 -> 8 -> 4), then a
/// linear realism score.
template <class T>
struct Discriminator {
  DiscriminatorConfig config;
  std::array<Conv<T>, 4> stages;
  Linear<T> out;

  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : config(cfg) {
    Rng rng(seed);
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
      stages[i] = Conv<T>(in, cfg.widths[i], 3, rng);
      in = cfg.widths[i];
    }
    out = Linear<T>(in * 16, 1, rng, 1.0);
  }

  /// Raw logits [N, 1].
  Tensor<T> operator()(const Tensor<T>& images) const {
    Tensor<T> h = images;
    for (std::size_t i = 0; i < 4; ++i) {
      h = leaky_relu(stages[i](h), T(0.2));
      if (i < 3) h = avg_pool2x(h);
    }
    return out(reshape(h, {h.dim(0), h.size() / h.dim(0)}));
  }

  ParamList<T> parameters() const {
    ParamList<T> p;
    for (std::size_t i = 0; i < 4; ++i) stages[i].collect("stage" + std::to_string(i), p);
    out.collect("out", p);
    return p;
  }

  template <class U>
  Discriminator<U> cast() const {
    Discriminator<U> d(config, 0);
    copy_parameters(parameters(), d.parameters());
    return d;
  }
};

}  // namespace ifgmi::models
