#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adair/tensor.hpp"

namespace adair {

/// Images in the data pipeline are 3×H×W double tensors with values in [0,1].
using Image = Tensor<double>;

/// Noise σ is on the 0–255 scale. Output clipped to [0,1].
Image add_gaussian_noise(const Image& img, double sigma_255, std::uint64_t seed);

/// t = exp(−β·d), out = img·t + A·(1−t). depth is H×W (or 1×H×W).
Image synth_haze(const Image& img, double beta_scatter, double airlight, const Tensor<double>& depth);

/// Vertical ramp in [0.2, 1] (far at the top) plus bilinearly upsampled 4×4
/// seeded noise of amplitude 0.15, clipped at 0. Shape H×W.
Tensor<double> make_depth_map(Index height, Index width, std::uint64_t seed);

struct RainStreaks {
  Index count = 0;
  double length = 12;  // pixels
  double angle = 80;   // degrees from the horizontal axis
  double width = 1;    // pixels
  double intensity = 0.6;
};

/// Seeded line segments with random jitter of ±10° around the angle, smeared
/// by a 5-tap box along the streak, added to every channel, then clipped.
Image synth_rain(const Image& img, const RainStreaks& streaks, std::uint64_t seed);

/// scale·img^gamma.
Image synth_lowlight(const Image& img, double gamma, double scale);

/// Correlation with a KH×KW kernel (odd extents), reflect padding. The kernel
/// must sum to 1 within 1e−6, else UnnormalizedKernel.
Image synth_blur(const Image& img, const Tensor<double>& kernel);

Tensor<double> box_kernel(Index taps, bool horizontal);
Tensor<double> gaussian_kernel(Index size, double sigma);
/// Line of `length` taps through the center at the given angle, normalized.
Tensor<double> motion_kernel(Index size, double angle_degrees);

enum class DegradationKind { noise, haze, rain, blur, lowlight, composite };

struct KernelSpec {
  std::string type = "gaussian";  // gaussian | box | motion
  Index size = 5;
  double sigma = 1.0;
  double angle = 0;
  bool horizontal = true;
};

struct DegradationSpec {
  DegradationKind kind = DegradationKind::noise;
  double sigma = 25;
  double beta_scatter = 1.0;
  double airlight = 0.9;
  RainStreaks rain{.count = 120};
  KernelSpec kernel;
  double gamma = 2.0;
  double scale = 0.5;
  std::vector<DegradationSpec> parts;  // composite only

  void validate() const;
  std::string tag() const;
  std::string to_json() const;
  static DegradationSpec from_json(const std::string& text);

  static DegradationSpec noise(double sigma_255);
  static DegradationSpec haze(double beta_scatter, double airlight);
  static DegradationSpec rain_streaks(RainStreaks streaks);
  static DegradationSpec blur(KernelSpec kernel);
  static DegradationSpec lowlight(double gamma, double scale);
  static DegradationSpec composite(std::vector<DegradationSpec> parts);
};

/// Applies one spec; composites apply their parts in order with derived seeds.
Image apply_degradation(const Image& img, const DegradationSpec& spec, std::uint64_t seed);
Image compose_degradations(const Image& img, const std::vector<DegradationSpec>& specs, std::uint64_t seed);

struct SamplePair {
  Image clean;
  Image degraded;
  std::string tag;
};

SamplePair make_pair(const Image& clean, const DegradationSpec& spec, std::uint64_t seed);

/// Seeded smooth colour field with rectangles, discs and a sinusoidal texture;
/// values in [0,1].
Image synthetic_clean_image(Index height, Index width, std::uint64_t seed);

struct Batch {
  Tensor<double> clean;     // N×3×P×P
  Tensor<double> degraded;  // N×3×P×P
};

/// One patch per pair (in order), the same window and flips for both members.
/// patch must be even and fit every pair, else PatchTooLarge / InvalidConfig.
Batch make_training_batch(const std::vector<SamplePair>& pairs, Index patch, bool flips, std::uint64_t seed);

struct ManifestRecord {
  std::string clean_path;
  DegradationSpec spec;
  std::uint64_t seed = 0;
};

/// `clean_path<TAB>spec_json<TAB>seed` per line; blank lines and '#' lines skipped.
std::vector<ManifestRecord> parse_manifest(const std::string& text);
std::string format_manifest(const std::vector<ManifestRecord>& records);

/// Deterministic per-item seed from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace adair
