#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adair/degrade.hpp"
#include "adair/network.hpp"

namespace adair {

/// Mean absolute difference over all scalars. The subgradient at ties is 0.
template <typename Scalar>
Tensor<Scalar> l1_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <typename Scalar>
struct OptimizerState {
  std::vector<ArrayX<Scalar>> m;
  std::vector<ArrayX<Scalar>> v;
  std::int64_t step = 0;

  /// Zero moments shaped like params.
  static OptimizerState zeros_like(const std::vector<Tensor<Scalar>>& params);
};

/// One bias-corrected Adam update using each parameter's grad (a missing grad
/// counts as zero). State is sized on first use.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, OptimizerState<Scalar>& state, const AdamConfig& config);

/// 10·log10(peak²/MSE), computed in double; 100 when MSE < 1e−12.
template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double peak = 1.0);

/// Mean SSIM on the channel-mean grayscale image: 11×11 Gaussian window
/// (σ 1.5, valid positions only), K1 0.01, K2 0.03, peak 1. Accepts C×H×W or
/// N×C×H×W (averaged over the batch).
template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

struct TrainConfig {
  AdamConfig adam;
  Index iterations = 200;
  Index batch_size = 4;
  Index patch = 32;
  bool flips = true;
  std::uint64_t seed = 0;
  /// Steps between validation PSNR evaluations; 0 disables.
  Index val_every = 0;
  /// Steps between checkpoints; 0 disables. Needs checkpoint_path.
  Index checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const;
  /// Keys: lr, beta1, beta2, eps, iterations, batch_size, patch, flips, seed,
  /// val_every, checkpoint_every, checkpoint_path.
  static TrainConfig from_keys(KeyValueText& keys);
};

struct StepRecord {
  Index step = 0;
  double loss = 0;
  /// Present on validation steps.
  std::optional<double> psnr_val;
};

struct Metrics {
  std::vector<StepRecord> history;
  std::optional<double> final_psnr_val;
};

/// `step,loss,psnr_val` lines with a header; psnr_val is empty when absent.
std::string history_csv(const std::vector<StepRecord>& history);

template <typename Scalar>
struct TrainState {
  OptimizerState<Scalar> optimizer;
  Metrics metrics;
};

/// Seeded batches from pairs, forward, L1 on the unclamped output, backward,
/// Adam. Validation PSNR is the mean over val pairs of the restored full
/// images. Throws NaNLoss with the step and per-group weight norms when the
/// loss or any activation goes non-finite.
template <typename Scalar>
TrainState<Scalar> train_loop(AdaIRModel<Scalar>& model, const std::vector<SamplePair>& pairs, const TrainConfig& config,
                              const std::vector<SamplePair>& val = {},
                              const std::function<void(const StepRecord&)>& on_step = {});

/// Mean PSNR/SSIM of restored vs clean, and of degraded vs clean, per tag.
struct TagScores {
  std::string tag;
  Index count = 0;
  double psnr_degraded = 0;
  double psnr_restored = 0;
  double ssim_degraded = 0;
  double ssim_restored = 0;
};

template <typename Scalar>
std::vector<TagScores> evaluate(const AdaIRModel<Scalar>& model, const std::vector<SamplePair>& pairs);

}  // namespace adair
