#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adair/blocks.hpp"
#include "adair/config.hpp"

namespace adair {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
std::string to_string(MaskKind kind);

/// Architecture hyperparameters. Channel ladder C, 2C, 4C, 8C; AFLB gaps are
/// gap1 after the latent stage (8C), gap2 after decoder level 3 (4C), gap3
/// after decoder level 2 (2C).
struct ModelConfig {
  Index channels = 8;
  std::array<Index, 4> blocks{1, 1, 1, 1};
  Index refinement_blocks = 1;
  std::array<Index, 4> heads{1, 2, 4, 8};
  double expansion = 2.66;
  Index r1 = 4;
  Index r2 = 8;
  MaskSettings mask{};
  std::array<bool, 3> aflb{true, true, true};
  Precision precision = Precision::f32;
  InitScheme init = InitScheme::scaled_normal;

  /// C=48, blocks 4/6/6/8, refinement 4, all three AFLBs.
  static ModelConfig full_scale();
  /// C=8, one block per level, one refinement block, all three AFLBs.
  static ModelConfig desk();

  Index aflb_count() const;
  void validate() const;

  /// key=value lines; from_text rejects unknown keys and fills absent ones
  /// from the desk preset.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  /// Consumes the model keys from a larger config, leaving the rest.
  static ModelConfig from_keys(KeyValueText& keys);

  bool operator==(const ModelConfig&) const;
};

template <typename Scalar>
struct AdaIRModel {
  ModelConfig config;
  ParameterList<Scalar> params;

  Conv<Scalar> embed;                                           // 3×3, 3 → C
  std::array<std::vector<TransformerBlockWeights<Scalar>>, 4> encoder;  // [3] is the latent stage
  std::array<Conv<Scalar>, 3> down;                             // level l → l+1
  std::array<Conv<Scalar>, 3> up;                               // up[0]: 4→3, up[1]: 3→2, up[2]: 2→1
  std::array<Conv<Scalar>, 2> reduce;                           // skip fusion at levels 3 and 2
  std::array<std::vector<TransformerBlockWeights<Scalar>>, 3> decoder;  // levels 3, 2, 1
  std::array<std::optional<AflbWeights<Scalar>>, 3> aflb;
  std::vector<TransformerBlockWeights<Scalar>> refinement;
  Conv<Scalar> output;  // 3×3, 2C → 3
};

/// Deterministic in (config, seed). Parameters are created in forward order.
template <typename Scalar>
AdaIRModel<Scalar> build_model(const ModelConfig& config, std::uint64_t seed);

enum class ForwardMode {
  /// Unclamped output for loss computation.
  train,
  /// Output clamped to [0, 1].
  inference,
};

/// Reflect-pads to a multiple of 16, runs the network, adds the input as a
/// global residual and crops back to the input size.
template <typename Scalar>
Tensor<Scalar> model_forward(const AdaIRModel<Scalar>& model, const Tensor<Scalar>& image,
                             ForwardMode mode = ForwardMode::train, const AflbProbe<Scalar>& probe = {});

/// Inference without recording, clamped.
template <typename Scalar>
Tensor<Scalar> restore(const AdaIRModel<Scalar>& model, const Tensor<Scalar>& image);

struct ParameterCount {
  Index total = 0;
  /// (group, count) for embed, encoder, decoder, aflb.gap1..3, refinement, output.
  std::vector<std::pair<std::string, Index>> groups;

  Index group(std::string_view name) const;
  Index aflb_total() const;
};

template <typename Scalar>
ParameterCount count_parameters(const AdaIRModel<Scalar>& model);

/// Counts without random initialization (weights left at zero, single precision).
ParameterCount count_parameters(const ModelConfig& config);

/// Copies every parameter whose name and shape match from src into dst;
/// returns the number copied.
template <typename Scalar>
std::size_t copy_matching_parameters(const AdaIRModel<Scalar>& src, AdaIRModel<Scalar>& dst);

}  // namespace adair
