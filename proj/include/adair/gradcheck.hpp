#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "adair/tensor.hpp"

namespace adair {

enum class Stencil {
  /// (f(x+h) − f(x−h)) / 2h
  three_point,
  /// (−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h; truncation O(h⁴), which
  /// allows a larger h and so less rounding noise on small gradients.
  five_point,
};

struct GradCheckOptions {
  double step = 1e-5;
  Stencil stencil = Stencil::three_point;
  /// Coordinates checked per tensor; all when <= 0. Sampled without replacement.
  Index max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_tensor = 0;
  Index worst_coord = 0;
  double analytic = 0;
  double numeric = 0;
  Index checked = 0;
};

/// Compares reverse-mode gradients of loss_fn() w.r.t. each leaf against
/// central differences. The error per coordinate is
/// |analytic − numeric| / (|analytic| + 1e−8); the report carries the max.
template <typename Scalar>
GradCheckReport gradcheck(const std::function<Tensor<Scalar>()>& loss_fn, std::vector<Tensor<Scalar>> leaves,
                          const GradCheckOptions& options = {}) {
  std::vector<bool> previous;
  for (auto& leaf : leaves) {
    previous.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    // backward only writes leaves it reaches; others would keep a stale gradient
    leaf.zero_grad();
  }
  Tape<Scalar>::current().clear();
  backward(loss_fn());
  std::vector<ArrayX<Scalar>> analytic;
  for (auto& leaf : leaves) analytic.push_back(leaf.has_grad() ? leaf.grad() : ArrayX<Scalar>::Zero(leaf.numel()));

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto& leaf = leaves[t];
    std::vector<Index> coords(static_cast<std::size_t>(leaf.numel()));
    std::iota(coords.begin(), coords.end(), Index(0));
    if (options.max_coords > 0 && options.max_coords < leaf.numel()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords));
    }
    for (Index i : coords) {
      Scalar& value = leaf.data_mut()[i];
      const Scalar saved = value;
      // Differences are formed in Scalar so an extended-precision check keeps its precision.
      auto at = [&](Scalar offset) {
        value = saved + offset;
        return loss_fn().item();
      };
      const auto h = static_cast<Scalar>(options.step);
      Scalar numeric_s = 0;
      if (options.stencil == Stencil::three_point) {
        numeric_s = (at(h) - at(-h)) / (2 * h);
      } else {
        numeric_s = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      }
      value = saved;
      const auto numeric = static_cast<double>(numeric_s);
      const double a = static_cast<double>(analytic[t][i]);
      const double err = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      ++report.checked;
      if (report.checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = t;
        report.worst_coord = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  for (std::size_t t = 0; t < leaves.size(); ++t) leaves[t].set_requires_grad(previous[t]);
  return report;
}

/// Single-input form: max relative error of d f(x) / dx.
template <typename Scalar>
double finite_diff_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, Tensor<Scalar> x,
                         double step = 1e-5) {
  GradCheckOptions options;
  options.step = step;
  return gradcheck<Scalar>([&] { return f(x); }, {x}, options).max_rel_error;
}

}  // namespace adair
