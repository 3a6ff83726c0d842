#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "adair/degrade.hpp"

namespace adair {

/// Subcommands: train, restore, eval, analyze, gradcheck, params.
/// Returns 0 on success, 1 on usage or configuration errors, 2 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Degradation used for each synthetic kind at a given image size: noise σ=25,
/// haze β=1 A=0.9, rain with 12 streaks per 32×32 area, lowlight γ=2 ×0.5,
/// blur with a 5×5 Gaussian of σ=1.
DegradationSpec synthetic_spec(const std::string& kind, Index image_size);

/// pairs_per_kind pairs of each kind on seeded synthetic clean images.
std::vector<SamplePair> synthetic_pairs(const std::vector<std::string>& kinds, Index pairs_per_kind, Index image_size,
                                        std::uint64_t seed);

}  // namespace adair
