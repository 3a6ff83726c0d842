#pragma once

#include <string>
#include <vector>

#include "adair/degrade.hpp"

namespace adair {

inline constexpr Index kCurveGrid = 320;
inline constexpr Index kCurveLength = 160;

enum class SquareMean {
  /// Mean over the boundary bins of each square.
  perimeter,
  /// Mean over all bins inside each square.
  filled,
};

struct CurveReport {
  std::string tag;
  /// curve[L−1] for half-side L = 1…160.
  std::vector<double> curve;
  /// Coefficient of variation (population std / mean) over L ∈ [8,160].
  double flatness = 0;
  /// Spearman rank correlation of value against L over L ∈ [1,160].
  double monotonicity = 0;
};

/// Centered magnitude spectrum of a 3×H×W residual: per-channel FFT scaled by
/// 1/(HW) (so a constant residual c puts |c| in the DC bin), magnitudes
/// averaged over channels, DC moved to (⌊H/2⌋, ⌊W/2⌋). Returns H×W.
Tensor<double> centered_magnitude(const Image& residual);

/// Bilinear resampling anchored at the DC bin: output (160,160) samples input
/// (⌊H/2⌋, ⌊W/2⌋) and the grid scales by H/320, W/320. Edges clamp.
Tensor<double> resize_about_center(const Tensor<double>& plane, Index size = kCurveGrid);

/// The square of half-side L covers rows and columns [160−L, 160+L−1]
/// of the 320×320 grid, so L = 1 is the 2×2 block holding DC and L = 160
/// the whole grid.
std::vector<double> square_curve(const Tensor<double>& grid, SquareMean mode = SquareMean::perimeter);

/// residual = clean − degraded, then centered_magnitude, resize_about_center
/// and square_curve, plus the summary statistics.
CurveReport residual_spectrum_curve(const Image& clean, const Image& degraded,
                                    SquareMean mode = SquareMean::perimeter, std::string tag = {});

/// Population std / mean of values[first−1 … last−1] (1-based L).
double coefficient_of_variation(const std::vector<double>& values, Index first, Index last);

/// Spearman correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// `L,mean_magnitude` header and one line per L, shortest round-trip numbers.
std::string curve_csv(const CurveReport& report);

/// Standalone SVG line plot of log(1 + value) against L, one polyline per report.
std::string curve_svg(const std::vector<CurveReport>& reports);

}  // namespace adair
