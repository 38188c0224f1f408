#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ifgmi/core/tensor.hpp"

namespace ifgmi {

struct AdamHyper {
  double lr = 0.005;
  double beta1 = 0.1;
  double beta2 = 0.1;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long t = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update of `param` in place.
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& state, const AdamHyper& hp,
               const std::string& name = "param") {
  if (grad.size() != param.size())
    throw ShapeError("adam_step: gradient size " + std::to_string(grad.size()) + " vs parameter '" + name +
                     "' size " + std::to_string(param.size()));
  for (T g : grad)
    if (!std::isfinite(g)) throw NonFiniteGradient("adam_step: non-finite gradient for '" + name + "'");
  if (state.m.empty()) {
    state.m.assign(param.size(), T(0));
    state.v.assign(param.size(), T(0));
  }
  state.t += 1;
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T c1 = T(1) - static_cast<T>(std::pow(hp.beta1, static_cast<double>(state.t)));
  const T c2 = T(1) - static_cast<T>(std::pow(hp.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(hp.lr), eps = static_cast<T>(hp.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * grad[i] * grad[i];
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over a fixed set of named parameter tensors.
template <class T>
class Adam {
 public:
  explicit Adam(AdamHyper hp = {}) : hp_(hp) {}

  void add(std::string name, Tensor<T> param) {
    params_.push_back({std::move(name), std::move(param), {}});
  }

  /// Applies one update using each parameter's accumulated gradient, then
  /// clears the gradients.
  void step() {
    for (auto& p : params_) {
      auto g = p.param.grad();
      adam_step<T>(p.param.data_mut(), g, p.state, hp_, p.name);
      p.param.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.param.zero_grad();
  }

  const AdamHyper& hyper() const { return hp_; }
  std::size_t size() const { return params_.size(); }
  const AdamState<T>& state(std::size_t i) const { return params_.at(i).state; }

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;
    AdamState<T> state;
  };
  AdamHyper hp_;
  std::vector<Slot> params_;
};

}  // namespace ifgmi
