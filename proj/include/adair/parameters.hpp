#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "adair/ops.hpp"

namespace adair {

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar> tensor;
};

/// Ordered registry of trainable tensors. Registration order is the canonical
/// order for optimizers, checkpoints and counting.
template <typename Scalar>
class ParameterList {
 public:
  Tensor<Scalar> add(std::string name, Tensor<Scalar> tensor) {
    for (const auto& p : items_) {
      if (p.name == name) fail(ErrorKind::InvalidConfig, "duplicate parameter name " + name);
    }
    tensor.set_requires_grad(true);
    items_.push_back({std::move(name), tensor});
    return tensor;
  }

  const std::vector<NamedParameter<Scalar>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::vector<Tensor<Scalar>> tensors() const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }

  /// Undefined tensor when absent.
  Tensor<Scalar> find(std::string_view name) const {
    for (const auto& p : items_) {
      if (p.name == name) return p.tensor;
    }
    return {};
  }

  Index count() const { return count_prefix(""); }

  Index count_prefix(std::string_view prefix) const {
    Index total = 0;
    for (const auto& p : items_) {
      if (std::string_view(p.name).starts_with(prefix)) total += p.tensor.numel();
    }
    return total;
  }

 private:
  std::vector<NamedParameter<Scalar>> items_;
};

enum class InitScheme {
  /// Truncated normal (±2σ) with σ = 0.02·sqrt(2/fan_in).
  scaled_normal,
  /// U(−1/sqrt(fan_in), 1/sqrt(fan_in)), the common framework default.
  fan_in_uniform,
  /// All weights zero; for shape-only uses such as parameter counting.
  zeros,
};

/// Convolution with its weights; bias is undefined for bias-free layers.
template <typename Scalar>
struct Conv {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  Conv2dOptions options;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return conv2d(x, weight, bias, options); }
  Index in_channels() const { return weight.dim(1) * options.groups; }
  Index out_channels() const { return weight.dim(0); }
};

template <typename Scalar>
struct LayerNormWeights {
  Tensor<Scalar> gain;
  Tensor<Scalar> offset;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layer_norm(x, gain, offset); }
};

struct ConvSpec {
  Index groups = 1;
  bool bias = false;
};

/// Creates named, seeded parameters into a ParameterList. Scopes share one
/// random stream, so the same construction order always gives the same weights.
template <typename Scalar>
class Initializer {
 public:
  Initializer(ParameterList<Scalar>& params, std::uint64_t seed, InitScheme scheme)
      : params_(&params), rng_(std::make_shared<std::mt19937_64>(seed)), scheme_(scheme) {}

  Initializer scope(std::string_view name) const {
    Initializer child = *this;
    child.prefix_ = prefix_ + std::string(name) + ".";
    return child;
  }

  /// Square kernel with "same" zero padding.
  Conv<Scalar> conv(std::string_view name, Index in, Index out, Index kernel, ConvSpec spec = {}) {
    if (in % spec.groups != 0 || out % spec.groups != 0) {
      fail(ErrorKind::InvalidGroups, prefix_ + std::string(name) + ": channels not divisible by groups");
    }
    const Index fan_in = (in / spec.groups) * kernel * kernel;
    Conv<Scalar> c;
    c.weight = params_->add(prefix_ + std::string(name) + ".weight", sample({out, in / spec.groups, kernel, kernel}, fan_in));
    if (spec.bias) c.bias = params_->add(prefix_ + std::string(name) + ".bias", Tensor<Scalar>::zeros({out}));
    c.options = Conv2dOptions::same(kernel, spec.groups);
    return c;
  }

  LayerNormWeights<Scalar> layer_norm(std::string_view name, Index channels) {
    return {constant(std::string(name) + ".gain", {channels}, Scalar(1)),
            constant(std::string(name) + ".offset", {channels}, Scalar(0))};
  }

  Tensor<Scalar> constant(std::string_view name, Shape shape, Scalar value) {
    return params_->add(prefix_ + std::string(name), Tensor<Scalar>::full(std::move(shape), value));
  }

 private:
  Tensor<Scalar> sample(Shape shape, Index fan_in) {
    Tensor<Scalar> t(std::move(shape));
    auto& data = t.data_mut();
    const double n = static_cast<double>(fan_in);
    switch (scheme_) {
      case InitScheme::zeros:
        break;
      case InitScheme::scaled_normal: {
        const double sd = 0.02 * std::sqrt(2.0 / n);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Index i = 0; i < data.size(); ++i) {
          double z = dist(*rng_);
          while (std::abs(z) > 2.0) z = dist(*rng_);
          data[i] = static_cast<Scalar>(z * sd);
        }
        break;
      }
      case InitScheme::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(n);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(dist(*rng_));
        break;
      }
    }
    return t;
  }

  ParameterList<Scalar>* params_;
  std::shared_ptr<std::mt19937_64> rng_;
  InitScheme scheme_;
  std::string prefix_;
};

}  // namespace adair
