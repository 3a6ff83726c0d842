// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adair/analyze.hpp"
#include "adair/checkpoint.hpp"
#include "adair/cli.hpp"
#include "adair/gradsuite.hpp"
#include "adair/network.hpp"
#include "adair/spectral.hpp"
#include "adair/train.hpp"

using namespace adair;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<double> uniform(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.data_mut()[i] = d(rng);
  return t;
}

double max_abs_diff(const ArrayX<double>& a, const ArrayX<double>& b) { return (a - b).abs().maxCoeff(); }

// ---------------------------------------------------------------------------

Outcome fft_oracle() {
  double dft = 0, parseval = 0, round = 0;
  for (Index h = 2; h <= 32; h *= 2)
    for (Index w = 2; w <= 32; w *= 2) {
      const auto x = uniform({2, h, w}, static_cast<std::uint64_t>(h * 64 + w));
      const auto f = fft2(x), o = dft2_oracle(x);
      dft = std::max({dft, max_abs_diff(f.re, o.re), max_abs_diff(f.im, o.im)});
      const double e = x.data().square().sum();
      const double s = (f.re.square() + f.im.square()).sum() / static_cast<double>(h * w);
      parseval = std::max(parseval, std::abs(e - s) / e);
      round = std::max(round, max_abs_diff(ifft2(f).data(), x.data()));
    }
  return {dft < 1e-10 && parseval < 1e-9 && round < 1e-10,
          fmt("dft max abs %.2e, parseval rel %.2e, round trip %.2e", dft, parseval, round)};
}

Outcome mask_algebra() {
  bool complementary = true, symmetric = true;
  double imag = 0, linearity = 0;
  for (Index n : {8, 16, 32})
    for (double alpha : {0.0, 0.2, 0.55, 1.0})
      for (double beta : {0.0, 0.35, 1.0}) {
        const double k = static_cast<double>(n) / 4;
        const auto m = build_frequency_masks(alpha, beta, n, n, k, MaskMode::hard);
        complementary = complementary && ((m.low + m.high) == 1.0).all();
        // centered coordinates: bin (H/2 + d) pairs with (H/2 − d)
        for (Index i = 1; i < n; ++i)
          for (Index j = 1; j < n; ++j) symmetric = symmetric && m.low(i, j) == m.low(n - i, n - j);
        const auto x = uniform({2, 3, n, n}, static_cast<std::uint64_t>(n * 7 + alpha * 10 + beta * 100));
        const auto centered = fftshift(fft2(x));
        double il = 0, ih = 0, ia = 0;
        const auto low = mask_apply_invert(centered, m.low, &il);
        const auto high = mask_apply_invert(centered, m.high, &ih);
        const auto all = mask_apply_invert(centered, MaskArray::Ones(n, n), &ia);
        imag = std::max({imag, il, ih, ia});
        linearity = std::max(linearity, max_abs_diff(low.data() + high.data(), all.data()));
      }
  return {complementary && symmetric && imag < 1e-10 && linearity < 1e-10,
          fmt("low+high==1 %s, symmetric %s, imag residual %.2e, linearity %.2e", complementary ? "yes" : "no",
              symmetric ? "yes" : "no", imag, linearity)};
}

Outcome gradient_suite() {
  const auto entries = run_gradient_suite(0);
  bool ok = entries.size() == 10;
  std::string detail;
  for (const auto& e : entries) {
    ok = ok && e.passed();
    detail += fmt("%s%s %.1e", detail.empty() ? "" : ", ", e.block.c_str(), e.max_rel_error);
  }
  return {ok, detail};
}

Outcome parameter_accounting() {
  auto scaled = ModelConfig::full_scale();
  auto base = scaled;
  base.aflb = {false, false, false};
  const double full = static_cast<double>(count_parameters(scaled).total);
  const double baseline = static_cast<double>(count_parameters(base).total);
  const double rel = std::abs(baseline - 26.13e6) / 26.13e6;
  const bool ok = rel <= 0.03 && full >= 26.5e6 && full <= 31.0e6;
  return {ok, fmt("baseline %.0f (%.2f%% from 26.13M), full %.0f, aflb overhead %.0f vs reference 2.64M", baseline,
                  rel * 100, full, full - baseline)};
}

Outcome residual_identities() {
  ParameterList<double> p;
  auto tb = make_transformer_block(Initializer<double>(p, 3, InitScheme::fan_in_uniform), 8, 2, 2.66);
  auto fmom = make_fmom(Initializer<double>(p, 4, InitScheme::fan_in_uniform), 8, 2, 2);
  const auto x = uniform({1, 8, 8, 8}, 5);

  tb.attn.out.weight.data_mut().setZero();
  const double mdta = max_abs_diff(mdta_forward(x, tb.norm1, tb.attn).data(), x.data());
  tb.ffn.expand_gate.weight.data_mut().setZero();
  const double gdfn = max_abs_diff(gdfn_forward(x, tb.norm2, tb.ffn).data(), x.data());
  fmom.merge_attn.out.weight.data_mut().setZero();
  const double merge =
      max_abs_diff(fmom_merge(x, uniform({1, 8, 8, 8}, 6), uniform({1, 8, 8, 8}, 7), fmom).data(), x.data());

  auto cfg = ModelConfig::desk();
  cfg.init = InitScheme::fan_in_uniform;
  auto model = build_model<double>(cfg, 8);
  model.params.find("output.weight").data_mut().setZero();
  double global = 0;
  for (Index size : {16, 23}) {
    const auto img = uniform({1, 3, size, size}, 9, 0, 1);
    global = std::max(global, max_abs_diff(model_forward(model, img, ForwardMode::train).data(), img.data()));
  }
  const double worst = std::max({mdta, gdfn, merge, global});
  return {worst <= 1e-15, fmt("mdta %.1e, gdfn %.1e, merge %.1e, global %.1e", mdta, gdfn, merge, global)};
}

// Mean L1 of the training-mode output over full images.
double full_l1(const AdaIRModel<float>& model, const std::vector<SamplePair>& pairs) {
  NoGradGuard no_grad;
  double total = 0;
  for (const auto& p : pairs) {
    const auto x = p.degraded.cast<float>().reshape({1, 3, p.degraded.dim(1), p.degraded.dim(2)});
    const auto y = p.clean.cast<float>().reshape(x.shape());
    total += static_cast<double>(l1_loss(model_forward(model, x, ForwardMode::train), y).item());
  }
  return total / static_cast<double>(pairs.size());
}

struct ProbeRun {
  double l1_before = 0, l1_after = 0;
  std::vector<TagScores> scores;
  bool finite = true;
  double factor_min = 1, factor_max = 0;
  Index factor_checks = 0;
};

// Trains the desk model and, after every step, records the mask-generator
// factors seen on the training images.
ProbeRun train_probe(const ModelConfig& cfg, const std::vector<SamplePair>& pairs, Index steps, std::uint64_t seed) {
  auto model = build_model<float>(cfg, seed);
  ProbeRun run;
  run.l1_before = full_l1(model, pairs);
  TrainConfig tc;
  tc.iterations = steps;
  tc.batch_size = 4;
  tc.patch = pairs.front().clean.dim(1);
  tc.seed = seed;
  Batch probe_batch = make_training_batch({pairs.begin(), pairs.begin() + std::min<std::size_t>(4, pairs.size())},
                                          tc.patch, false, 0);
  const auto probe_x = probe_batch.degraded.cast<float>();
  auto watch = [&](const StepRecord& r) {
    run.finite = run.finite && std::isfinite(r.loss);
    if (cfg.mask.kind == MaskKind::fixed) return;
    NoGradGuard no_grad;
    model_forward<float>(model, probe_x, ForwardMode::train, [&](const FmimOutput<float>& m) {
      if (!m.factors.defined()) return;
      run.factor_min = std::min(run.factor_min, static_cast<double>(m.factors.data().minCoeff()));
      run.factor_max = std::max(run.factor_max, static_cast<double>(m.factors.data().maxCoeff()));
      ++run.factor_checks;
    });
  };
  try {
    train_loop(model, pairs, tc, {}, watch);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NaNLoss) throw;
    run.finite = false;
    std::printf("  NaN: %s\n", e.what());
  }
  run.l1_after = full_l1(model, pairs);
  run.scores = evaluate(model, pairs);
  return run;
}

std::vector<SamplePair> noise_pairs() { return synthetic_pairs({"noise"}, 4, 32, 2024); }

ProbeRun* learned_run = nullptr;

Outcome overfit_probe() {
  static ProbeRun run = train_probe(ModelConfig::desk(), noise_pairs(), 200, 7);
  learned_run = &run;
  const auto& s = run.scores.front();
  const double ratio = run.l1_after / run.l1_before;
  const double gain = s.psnr_restored - s.psnr_degraded;
  return {ratio <= 0.2 && gain >= 3.0,
          fmt("L1 %.5f -> %.5f (ratio %.3f, need <= 0.2), PSNR %.2f -> %.2f dB (%+.2f, need >= +3)", run.l1_before,
              run.l1_after, ratio, s.psnr_degraded, s.psnr_restored, gain)};
}

Outcome all_in_one_probe() {
  const auto pairs = synthetic_pairs({"noise", "haze", "rain"}, 4, 32, 2025);
  const auto run = train_probe(ModelConfig::desk(), pairs, 500, 11);
  bool ok = run.scores.size() == 3;
  std::string detail;
  for (const auto& s : run.scores) {
    const double gain = s.psnr_restored - s.psnr_degraded;
    ok = ok && gain >= 1.0;
    detail += fmt("%s%s %.2f -> %.2f (%+.2f dB)", detail.empty() ? "" : ", ", s.tag.c_str(), s.psnr_degraded,
                  s.psnr_restored, gain);
  }
  return {ok, detail + ", need >= +1 dB each"};
}

Outcome spectrum_methodology() {
  const Index n = 128;
  const Image flat({3, n, n}, ArrayX<double>::Constant(3 * n * n, 0.5));
  double cv = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 25.0 / 255.0);
    Image noisy = flat.detach();
    for (Index i = 0; i < noisy.numel(); ++i) noisy.data_mut()[i] += g(rng);
    cv = std::max(cv, residual_spectrum_curve(flat, noisy).flatness);
  }
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 0.1);
  Image noisy = flat.detach();
  for (Index i = 0; i < noisy.numel(); ++i) noisy.data_mut()[i] += g(rng);
  const double lowpass =
      residual_spectrum_curve(flat, synth_blur(noisy, gaussian_kernel(13, 2.0))).monotonicity;
  const auto img = synthetic_clean_image(n, n, 5);
  const double haze = residual_spectrum_curve(img, apply_degradation(img, DegradationSpec::haze(1.0, 0.9), 1)).monotonicity;
  const double dark =
      residual_spectrum_curve(img, apply_degradation(img, DegradationSpec::lowlight(2.0, 0.5), 1)).monotonicity;
  const bool ok = cv < 0.15 && lowpass < -0.8 && haze < -0.8 && dark < -0.8;
  return {ok, fmt("noise CV %.4f (< 0.15); Spearman low-passed %.3f, haze %.3f, lowlight %.3f (< -0.8)", cv, lowpass,
                  haze, dark)};
}

Outcome determinism_persistence() {
  const auto pairs = noise_pairs();
  TrainConfig tc;
  tc.iterations = 20;
  tc.seed = 99;
  auto history = [&] {
    auto m = build_model<float>(ModelConfig::desk(), 99);
    return train_loop(m, pairs, tc).metrics.history;
  };
  const auto a = history(), b = history();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].loss == b[i].loss;

  const std::string path = "acceptance_roundtrip.ckpt";
  bool bit_identical = true;
  for (Precision precision : {Precision::f32, Precision::f64}) {
    auto cfg = ModelConfig::desk();
    cfg.precision = precision;
    cfg.init = InitScheme::fan_in_uniform;
    const auto x = uniform({2, 3, 24, 20}, 3, 0, 1);
    auto compare = [&]<typename S>(const AdaIRModel<S>& model) {
      save_checkpoint(path, model);
      const auto loaded = load_checkpoint<S>(path).model;
      const auto xs = x.cast<S>();
      bit_identical = bit_identical && (restore(model, xs).data() == restore(loaded, xs).data()).all();
    };
    if (precision == Precision::f32) compare(build_model<float>(cfg, 5));
    else compare(build_model<double>(cfg, 5));
  }
  std::remove(path.c_str());
  return {same && bit_identical,
          fmt("loss history identical over %zu steps: %s; checkpoint forward bit-identical (f32, f64): %s", a.size(),
              same ? "yes" : "no", bit_identical ? "yes" : "no")};
}

Outcome ablation_plumbing() {
  auto fixed = ModelConfig::desk();
  fixed.mask.kind = MaskKind::fixed;
  fixed.mask.fixed_side = 10;
  const auto f = train_probe(fixed, noise_pairs(), 200, 7);
  if (!learned_run) overfit_probe();
  const auto& l = *learned_run;
  const bool in_range = l.factor_checks > 0 && l.factor_min > 0 && l.factor_max < 1;
  return {f.finite && l.finite && in_range,
          fmt("fixed side 10: finite %s, L1 %.8f -> %.8f; learned: finite %s, L1 -> %.8f, MGB factors in "
              "[%.9f, %.9f] over %ld observations",
              f.finite ? "yes" : "no", f.l1_before, f.l1_after, l.finite ? "yes" : "no", l.l1_after, l.factor_min,
              l.factor_max,
              static_cast<long>(l.factor_checks))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"fft oracle", fft_oracle},
      {"mask algebra", mask_algebra},
      {"gradient suite", gradient_suite},
      {"parameter accounting", parameter_accounting},
      {"residual identities", residual_identities},
      {"overfit probe", overfit_probe},
      {"all-in-one probe", all_in_one_probe},
      {"spectrum methodology", spectrum_methodology},
      {"determinism and persistence", determinism_persistence},
      {"ablation plumbing", ablation_plumbing},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
