#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adair/network.hpp"

namespace adair {

template <typename Scalar>
struct OptimizerState;

/// File layout (little-endian):
///   "ADAIRCKP" | u32 version | u32 len, config text |
///   u32 tensor count | per tensor: u32 len, name | u8 precision (0 f32, 1 f64) |
///     u32 rank | u64 extents | raw data |
///   u8 has_optimizer | [i64 step | per tensor: m data, v data, in the tensor precision] |
///   u64 FNV-1a of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::string& path, const AdaIRModel<Scalar>& model,
                     const OptimizerState<Scalar>* optimizer = nullptr);

template <typename Scalar>
std::vector<std::uint8_t> checkpoint_bytes(const AdaIRModel<Scalar>& model,
                                           const OptimizerState<Scalar>* optimizer = nullptr);

struct CheckpointInfo {
  std::uint32_t version = 0;
  ModelConfig config;
  /// Precision of the stored weights.
  Precision precision = Precision::f32;
  std::size_t tensors = 0;
  Index parameters = 0;
  bool has_optimizer = false;
};

CheckpointInfo inspect_checkpoint(const std::string& path);

template <typename Scalar>
struct LoadedCheckpoint {
  AdaIRModel<Scalar> model;
  std::optional<OptimizerState<Scalar>> optimizer;
  CheckpointInfo info;
};

/// Rebuilds the model from the stored config and fills its weights. Weights
/// stored at another precision are converted.
template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::string& path);

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint_bytes(const std::vector<std::uint8_t>& bytes);

/// Loads weights into an existing model. Throws ConfigMismatch when the
/// stored config or any tensor name/shape differs from the model's.
template <typename Scalar>
void load_weights_into(AdaIRModel<Scalar>& model, const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace adair
