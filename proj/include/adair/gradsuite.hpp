#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adair/tensor.hpp"

namespace adair {

struct GradSuiteEntry {
  std::string block;
  double max_rel_error = 0;
  double tolerance = 0;
  Index checked = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Finite-difference checks of every block and of the full desk model, run in
/// long double on small random inputs. Block tolerance 1e−4, full model 1e−3.
/// The seed moves inputs, weights and sampled coordinates.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 0);

}  // namespace adair
