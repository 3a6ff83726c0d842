#include "adair/train.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "adair/checkpoint.hpp"
#include "adair/ops.hpp"

namespace adair {

template <typename Scalar>
Tensor<Scalar> l1_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    fail(ErrorKind::ShapeMismatch, "l1_loss: " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  if (pred.numel() == 0) fail(ErrorKind::EmptyInput, "l1_loss of empty tensors");
  const ArrayX<Scalar> diff = pred.data() - target.data();
  const Scalar inv_n = Scalar(1) / Scalar(pred.numel());
  return finish_op<Scalar>(
      Tensor<Scalar>::scalar(diff.abs().sum() * inv_n), {pred, target},
      [diff, inv_n](const ArrayX<Scalar>& g, std::span<ArrayX<Scalar>* const> gi) {
        const ArrayX<Scalar> s = diff.sign() * (g[0] * inv_n);
        if (gi[0]) *gi[0] += s;
        if (gi[1]) *gi[1] -= s;
      },
      "l1_loss");
}

void AdamConfig::validate() const {
  if (!(lr >= 0)) fail(ErrorKind::InvalidConfig, "lr must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail(ErrorKind::InvalidConfig, "betas must lie in [0,1)");
  if (!(eps > 0)) fail(ErrorKind::InvalidConfig, "eps must be positive");
}

template <typename Scalar>
OptimizerState<Scalar> OptimizerState<Scalar>::zeros_like(const std::vector<Tensor<Scalar>>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.push_back(ArrayX<Scalar>::Zero(p.numel()));
    s.v.push_back(ArrayX<Scalar>::Zero(p.numel()));
  }
  return s;
}

template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, OptimizerState<Scalar>& state, const AdamConfig& c) {
  if (state.m.empty() && state.step == 0) state = OptimizerState<Scalar>::zeros_like(params);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer state holds " + std::to_string(state.m.size()) + " tensors, got " +
                                       std::to_string(params.size()) + " parameters");
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const Scalar b1 = Scalar(c.beta1), b2 = Scalar(c.beta2);
  const Scalar correction1 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta1, t));
  const Scalar correction2 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta2, t));
  const Scalar lr = Scalar(c.lr), eps = Scalar(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      fail(ErrorKind::ShapeMismatch, "optimizer moment size differs from parameter " + std::to_string(i));
    }
    if (!p.has_grad()) {
      m *= b1;
      v *= b2;
    } else {
      const auto& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    }
    p.data_mut() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double peak) {
  if (a.shape() != b.shape()) fail(ErrorKind::ShapeMismatch, "psnr: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (a.numel() == 0) fail(ErrorKind::EmptyInput, "psnr of empty images");
  const double mse = (a.data().template cast<double>() - b.data().template cast<double>()).square().mean();
  if (mse < 1e-12) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

Eigen::ArrayXd ssim_window() {
  Eigen::ArrayXd g(11);
  for (int i = 0; i < 11; ++i) g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  return g / g.sum();
}

/// Separable valid filtering of an H×W plane.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& x, const Eigen::ArrayXd& g) {
  const Index h = x.rows(), w = x.cols(), k = g.size();
  Eigen::ArrayXXd rows = Eigen::ArrayXXd::Zero(h, w - k + 1);
  for (Index j = 0; j < k; ++j) rows += g[j] * x.middleCols(j, w - k + 1);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(h - k + 1, w - k + 1);
  for (Index i = 0; i < k; ++i) out += g[i] * rows.middleRows(i, h - k + 1);
  return out;
}

double ssim_plane(const Eigen::ArrayXXd& x, const Eigen::ArrayXXd& y) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = ssim_window();
  const Eigen::ArrayXXd mx = filter_valid(x, g), my = filter_valid(y, g);
  const Eigen::ArrayXXd sxx = filter_valid(x * x, g) - mx * mx;
  const Eigen::ArrayXXd syy = filter_valid(y * y, g) - my * my;
  const Eigen::ArrayXXd sxy = filter_valid(x * y, g) - mx * my;
  const Eigen::ArrayXXd map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean();
}

template <typename Scalar>
Eigen::ArrayXXd gray_plane(const Tensor<Scalar>& img, Index n) {
  const Index c = img.dim(-3), h = img.dim(-2), w = img.dim(-1);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(h, w);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) out(y, x) += static_cast<double>(img.data()[((n * c + ch) * h + y) * w + x]);
  return out / static_cast<double>(c);
}

}  // namespace

template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) fail(ErrorKind::ShapeMismatch, "ssim: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (a.rank() != 3 && a.rank() != 4) fail(ErrorKind::ShapeMismatch, "ssim expects C×H×W or N×C×H×W");
  if (a.dim(-2) < 11 || a.dim(-1) < 11) {
    fail(ErrorKind::ImageTooSmall, "ssim needs at least 11×11, got " + shape_string(a.shape()));
  }
  const Index n = a.rank() == 4 ? a.dim(0) : 1;
  double total = 0;
  for (Index i = 0; i < n; ++i) total += ssim_plane(gray_plane(a, i), gray_plane(b, i));
  return total / static_cast<double>(n);
}

void TrainConfig::validate() const {
  adam.validate();
  if (iterations < 0) fail(ErrorKind::InvalidConfig, "iterations must be non-negative");
  if (batch_size < 1) fail(ErrorKind::InvalidConfig, "batch_size must be positive");
  if (patch < 2 || patch % 2 != 0) fail(ErrorKind::InvalidConfig, "patch must be even and at least 2");
  if (val_every < 0 || checkpoint_every < 0) fail(ErrorKind::InvalidConfig, "cadences must be non-negative");
  if (checkpoint_every > 0 && checkpoint_path.empty()) fail(ErrorKind::InvalidConfig, "checkpoint_every needs checkpoint_path");
}

TrainConfig TrainConfig::from_keys(KeyValueText& keys) {
  TrainConfig c;
  if (auto v = keys.take("lr")) c.adam.lr = parse_double(*v, "lr");
  if (auto v = keys.take("beta1")) c.adam.beta1 = parse_double(*v, "beta1");
  if (auto v = keys.take("beta2")) c.adam.beta2 = parse_double(*v, "beta2");
  if (auto v = keys.take("eps")) c.adam.eps = parse_double(*v, "eps");
  if (auto v = keys.take("iterations")) c.iterations = parse_index(*v, "iterations");
  if (auto v = keys.take("batch_size")) c.batch_size = parse_index(*v, "batch_size");
  if (auto v = keys.take("patch")) c.patch = parse_index(*v, "patch");
  if (auto v = keys.take("flips")) c.flips = parse_bool(*v, "flips");
  if (auto v = keys.take("seed")) c.seed = static_cast<std::uint64_t>(parse_index(*v, "seed"));
  if (auto v = keys.take("val_every")) c.val_every = parse_index(*v, "val_every");
  if (auto v = keys.take("checkpoint_every")) c.checkpoint_every = parse_index(*v, "checkpoint_every");
  if (auto v = keys.take("checkpoint_path")) c.checkpoint_path = *v;
  c.validate();
  return c;
}

std::string history_csv(const std::vector<StepRecord>& history) {
  std::string out = "step,loss,psnr_val\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + "," + format_double(r.loss) + ",";
    if (r.psnr_val) out += format_double(*r.psnr_val);
    out += "\n";
  }
  return out;
}

namespace {

template <typename Scalar>
std::string weight_norms(const AdaIRModel<Scalar>& model) {
  std::map<std::string, double> sq;
  for (const auto& p : model.params.items()) {
    auto dot = p.name.find('.');
    if (p.name.starts_with("aflb.")) dot = p.name.find('.', dot + 1);
    const auto key = p.name.substr(0, dot);
    const auto d = p.tensor.data().template cast<double>();
    sq[key] += d.allFinite() ? d.square().sum() : std::numeric_limits<double>::quiet_NaN();
  }
  std::ostringstream out;
  for (const auto& [k, v] : sq) out << " " << k << "=" << std::sqrt(v);
  return out.str();
}

template <typename Scalar>
double mean_val_psnr(const AdaIRModel<Scalar>& model, const std::vector<SamplePair>& val) {
  double total = 0;
  for (const auto& p : val) {
    const auto in = p.degraded.template cast<Scalar>().reshape({1, 3, p.degraded.dim(1), p.degraded.dim(2)});
    const auto out = restore(model, in);
    total += psnr(out.template cast<double>().reshape(p.clean.shape()), p.clean);
  }
  return total / static_cast<double>(val.size());
}

}  // namespace

template <typename Scalar>
TrainState<Scalar> train_loop(AdaIRModel<Scalar>& model, const std::vector<SamplePair>& pairs, const TrainConfig& config,
                              const std::vector<SamplePair>& val,
                              const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  if (pairs.empty()) fail(ErrorKind::EmptyInput, "training set is empty");
  TrainState<Scalar> state;
  auto params = model.params.tensors();
  state.optimizer = OptimizerState<Scalar>::zeros_like(params);
  const auto count = pairs.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(count);

  for (Index step = 1; step <= config.iterations; ++step) {
    const auto step_seed = derive_seed(config.seed, static_cast<std::uint64_t>(step));
    std::vector<SamplePair> chosen;
    if (count <= batch) {
      chosen = pairs;
    } else {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(step_seed);
      for (std::size_t i = 0; i < batch; ++i) {
        std::swap(order[i], order[i + rng() % (count - i)]);
        chosen.push_back(pairs[order[i]]);
      }
    }
    const auto data = make_training_batch(chosen, config.patch, config.flips, derive_seed(step_seed, 0xba7c));

    StepRecord record{step, 0.0, std::nullopt};
    Tape<Scalar>::current().clear();
    try {
      const auto pred = model_forward(model, data.degraded.template cast<Scalar>(), ForwardMode::train);
      const auto loss = l1_loss(pred, data.clean.template cast<Scalar>());
      record.loss = static_cast<double>(loss.item());
      backward(loss);
      for (const auto& p : params) check_finite(p.grad(), "backward");
    } catch (const Error& e) {
      Tape<Scalar>::current().clear();
      if (e.kind() != ErrorKind::NonFinite) throw;
      fail(ErrorKind::NaNLoss, "step " + std::to_string(step) + ": " + e.what() + "; weight norms:" + weight_norms(model));
    }
    adam_step(params, state.optimizer, config.adam);

    if (config.val_every > 0 && !val.empty() && (step % config.val_every == 0 || step == config.iterations)) {
      record.psnr_val = mean_val_psnr(model, val);
      state.metrics.final_psnr_val = record.psnr_val;
    }
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, model, &state.optimizer);
    }
    state.metrics.history.push_back(record);
    if (on_step) on_step(record);
  }
  return state;
}

template <typename Scalar>
std::vector<TagScores> evaluate(const AdaIRModel<Scalar>& model, const std::vector<SamplePair>& pairs) {
  std::vector<TagScores> out;
  for (const auto& p : pairs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const TagScores& s) { return s.tag == p.tag; });
    if (it == out.end()) {
      out.push_back(TagScores{p.tag});
      it = out.end() - 1;
    }
    const Index h = p.clean.dim(1), w = p.clean.dim(2);
    const auto restored = restore(model, p.degraded.template cast<Scalar>().reshape({1, 3, h, w}))
                              .template cast<double>()
                              .reshape({3, h, w});
    it->count += 1;
    it->psnr_degraded += psnr(p.degraded, p.clean);
    it->psnr_restored += psnr(restored, p.clean);
    if (h >= 11 && w >= 11) {
      it->ssim_degraded += ssim(p.degraded, p.clean);
      it->ssim_restored += ssim(restored, p.clean);
    }
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.count);
    s.psnr_degraded /= n;
    s.psnr_restored /= n;
    s.ssim_degraded /= n;
    s.ssim_restored /= n;
  }
  return out;
}

#define ADAIR_INSTANTIATE_TRAIN(S)                                                                             \
  template Tensor<S> l1_loss(const Tensor<S>&, const Tensor<S>&);                                              \
  template struct OptimizerState<S>;                                                                           \
  template void adam_step(std::vector<Tensor<S>>&, OptimizerState<S>&, const AdamConfig&);                     \
  template double psnr(const Tensor<S>&, const Tensor<S>&, double);                                            \
  template double ssim(const Tensor<S>&, const Tensor<S>&);                                                    \
  template TrainState<S> train_loop(AdaIRModel<S>&, const std::vector<SamplePair>&, const TrainConfig&,        \
                                    const std::vector<SamplePair>&, const std::function<void(const StepRecord&)>&); \
  template std::vector<TagScores> evaluate(const AdaIRModel<S>&, const std::vector<SamplePair>&);

ADAIR_INSTANTIATE_TRAIN(float)
ADAIR_INSTANTIATE_TRAIN(double)

template Tensor<long double> l1_loss(const Tensor<long double>&, const Tensor<long double>&);
template struct OptimizerState<long double>;
template void adam_step(std::vector<Tensor<long double>>&, OptimizerState<long double>&, const AdamConfig&);

}  // namespace adair
