#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "adair/tensor.hpp"

namespace adair {

/// Complex spectrum of a real tensor whose last two axes are (H, W). The
/// leading axes (typically N×C) index independent planes.
template <typename Scalar>
struct ComplexSpectrum {
  Shape shape;
  ArrayX<Scalar> re;
  ArrayX<Scalar> im;

  Index height() const { return shape[shape.size() - 2]; }
  Index width() const { return shape[shape.size() - 1]; }
  Index planes() const { return re.size() / (height() * width()); }
};

/// Unnormalized forward DFT over the last two axes:
/// F[u,v] = Σ x[h,w]·exp(−2πi(uh/H + vw/W)). Radix-2 for power-of-two extents,
/// direct per-line DFT otherwise.
template <typename Scalar>
ComplexSpectrum<Scalar> fft2(const Tensor<Scalar>& x);

/// Inverse DFT with 1/(HW) normalization. Returns the real part; the largest
/// |imaginary| component is written to max_imag when given.
template <typename Scalar>
Tensor<Scalar> ifft2(const ComplexSpectrum<Scalar>& spectrum, Scalar* max_imag = nullptr);

/// Moves the DC bin to (H/2, W/2). Even extents only.
template <typename Scalar>
ComplexSpectrum<Scalar> fftshift(const ComplexSpectrum<Scalar>& spectrum);

template <typename Scalar>
ComplexSpectrum<Scalar> ifftshift(const ComplexSpectrum<Scalar>& spectrum);

/// Direct quadruple-loop DFT, evaluated in extended precision. Test oracle.
template <typename Scalar>
ComplexSpectrum<Scalar> dft2_oracle(const Tensor<Scalar>& x);

enum class MaskMode { hard, soft };

using MaskArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Complementary low/high masks over a centered (fftshifted) spectrum.
struct FrequencyMask {
  double alpha = 0;
  double beta = 0;
  double k = 128;
  MaskMode mode = MaskMode::hard;
  double tau = 0.25;
  MaskArray low;
  MaskArray high;
};

/// Low-pass rectangle centered at (H/2, W/2).
///
/// hard: rows H/2−a … H/2+a and cols W/2−b … W/2+b (inclusive, clipped to the
/// grid) with a = round(α·H/k), b = round(β·W/k).
/// soft: low[i,j] = σ((α·H/k + ½ − |i − H/2|)/τ) · σ((β·W/k + ½ − |j − W/2|)/τ),
/// differentiable in α and β.
/// In both modes high = 1 − low.
FrequencyMask build_frequency_masks(double alpha, double beta, Index height, Index width, double k, MaskMode mode,
                                    double tau = 0.25);

/// Hard mask from integer half-sides (the fixed-mask ablation).
FrequencyMask hard_mask_from_half_sides(Index height, Index width, Index half_h, Index half_w);

/// Real part of the inverse transform of mask ⊙ spectrum, where spectrum is
/// centered and the mask is H×W in centered coordinates.
template <typename Scalar>
Tensor<Scalar> mask_apply_invert(const ComplexSpectrum<Scalar>& centered, const MaskArray& mask,
                                 Scalar* max_imag = nullptr);

/// How the per-sample low-pass region is chosen in frequency_split.
struct SplitOptions {
  MaskMode mode = MaskMode::soft;
  double k = 128;
  double tau = 0.25;
  /// When set, ignores the factors and uses this hard half-side on both axes.
  std::optional<Index> fixed_half_side;
  /// Test hook: low mask of all ones (high branch becomes exactly zero).
  bool all_pass_low = false;
};

template <typename Scalar>
struct FrequencySplit {
  Tensor<Scalar> low;
  Tensor<Scalar> high;
};

/// Differentiable spectral decomposition of p (N×C×H×W, even H and W):
/// low = IFFT(ishift(M_l ⊙ shift(FFT p))), high likewise with M_h = 1 − M_l.
/// factors holds (α, β) per sample, shape N×2×1×1; it is ignored (and may be
/// undefined) for fixed or all-pass masks. Gradients reach p always and the
/// factors in soft mode only.
template <typename Scalar>
FrequencySplit<Scalar> frequency_split(const Tensor<Scalar>& p, const Tensor<Scalar>& factors,
                                       const SplitOptions& options);

}  // namespace adair
