#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ifgmi/core/ops.hpp"
#include "ifgmi/core/rng.hpp"
#include "ifgmi/core/serialize.hpp"

namespace ifgmi::models {

template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
Tensor<T> init_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data_mut()) v = static_cast<T>(stddev * normal<double>(rng));
  return t;
}

template <class T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = std::sqrt(2.0))
      : weight(init_normal<T>({out, in}, rng, gain / std::sqrt(static_cast<double>(in)))), bias(Shape{out}) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <class T>
struct Conv {
  Tensor<T> weight, bias;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t k, Rng& rng, double gain = std::sqrt(2.0))
      : weight(init_normal<T>({out, in, k, k}, rng, gain / std::sqrt(static_cast<double>(in * k * k)))),
        bias(Shape{out}) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <class T>
void set_trainable(const ParamList<T>& params, bool on) {
  for (auto [name, p] : params) {
    p.set_requires_grad(on);
    p.zero_grad();
  }
}

/// Copies values between two parameter lists of identical layout, casting
/// precision if needed.
template <class Src, class Dst>
void copy_parameters(const ParamList<Src>& src, const ParamList<Dst>& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: parameter count differs");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape())
      throw ShapeError("copy_parameters: '" + src[i].first + "' does not match '" + dst[i].first + "'");
    auto d = dst[i].second;
    auto s = src[i].second.data();
    std::copy(s.begin(), s.end(), d.data_mut().begin());
  }
}

template <class T>
TensorFile to_tensor_file(const ParamList<T>& params) {
  TensorFile f;
  for (const auto& [name, p] : params) f.push_back(NamedTensor::from(name, p));
  return f;
}

/// Loads named tensors into the parameters; every parameter must be present
/// with the same shape.
template <class T>
void load_parameters(const TensorFile& file, const ParamList<T>& params, const std::string& what) {
  for (auto [name, p] : params) {
    const NamedTensor* found = nullptr;
    for (const auto& t : file)
      if (t.name == name) found = &t;
    if (!found) throw FormatError(what + ": checkpoint lacks '" + name + "'");
    if (found->shape != p.shape())
      throw FormatError(what + ": '" + name + "' has shape " + shape_str(found->shape) + ", architecture expects " +
                        shape_str(p.shape()));
    auto src = found->as<T>();
    std::copy(src.data().begin(), src.data().end(), p.data_mut().begin());
  }
}

template <class T>
std::string parameter_checksum(const ParamList<T>& params) {
  return checksum(to_tensor_file(params));
}

}  // namespace ifgmi::models
