#include "adair/gradsuite.hpp"

#include <random>

#include "adair/blocks.hpp"
#include "adair/gradcheck.hpp"
#include "adair/network.hpp"

namespace adair {

namespace {

using L = long double;
using LP = ParameterList<L>;

Tensor<L> uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  const Index n = shape_numel(shape);
  ArrayX<L> data(n);
  for (Index i = 0; i < n; ++i) data[i] = static_cast<L>(dist(rng));
  return Tensor<L>(std::move(shape), std::move(data));
}

// U(−0.5, 0.5) everywhere so no block sits on a degenerate point; temperatures
// land in (0.5, 1.5).
void randomize(LP& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& p : params.items()) {
    auto t = p.tensor;
    const double shift = p.name.ends_with("temperature") ? 1.0 : 0.0;
    for (Index i = 0; i < t.numel(); ++i) t.data_mut()[i] = static_cast<L>(dist(rng) + shift);
  }
}

// sum(y ⊙ r) with a fixed random r, so every output coordinate matters.
Tensor<L> weighted(const Tensor<L>& y, std::uint64_t seed) { return sum(y * uniform(y.shape(), seed, -1, 1)); }

std::vector<Tensor<L>> with(std::vector<Tensor<L>> leaves, const LP& params) {
  for (const auto& t : params.tensors()) leaves.push_back(t);
  return leaves;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  constexpr double block_tol = 1e-4, model_tol = 1e-3;
  auto s = [seed](std::uint64_t k) { return seed * 1000 + k; };
  std::vector<GradSuiteEntry> out;
  auto check = [&](std::string name, const std::function<Tensor<L>()>& f, std::vector<Tensor<L>> leaves,
                   double tol, GradCheckOptions opt = {}) {
    opt.seed = s(99);
    const auto r = gradcheck<L>(f, std::move(leaves), opt);
    out.push_back({std::move(name), r.max_rel_error, tol, r.checked});
  };

  const Shape shape{1, 4, 8, 8};
  auto x = uniform(shape, s(1), -1, 1);
  auto y = uniform(shape, s(2), -1, 1);
  auto image = uniform({1, 3, 8, 8}, s(3), 0, 1);

  {
    LP p;
    auto w = make_mgb(Initializer<L>(p, 1, InitScheme::zeros), 4, 2);
    randomize(p, s(10));
    check("mgb", [&] { return weighted(mgb_forward(x, w), s(50)); }, with({x}, p), block_tol);
  }
  {
    LP p;
    auto w = make_attention(Initializer<L>(p, 1, InitScheme::zeros), 4, 2);
    randomize(p, s(11));
    check("cross_attention", [&] { return weighted(transposed_cross_attention(x, y, w), s(51)); }, with({x, y}, p),
          block_tol);
  }
  {
    LP p;
    auto w = make_fmom(Initializer<L>(p, 1, InitScheme::zeros), 4, 2, 2);
    randomize(p, s(12));
    check("hl_unit", [&] { return weighted(hl_unit(x, y, w), s(52)); }, with({x, y}, p), block_tol);
    check("lh_unit", [&] { return weighted(lh_unit(x, y, w), s(53)); }, with({x, y}, p), block_tol);
    auto z = uniform(shape, s(4), -1, 1);
    check("merge", [&] { return weighted(fmom_merge(z, x, y, w), s(54)); }, with({z, x, y}, p), block_tol);
  }
  {
    LP p;
    auto w = make_transformer_block(Initializer<L>(p, 1, InitScheme::zeros), 4, 2, 2.66);
    randomize(p, s(13));
    check("mdta", [&] { return weighted(mdta_forward(x, w.norm1, w.attn), s(55)); }, with({x}, p), block_tol);
    check("gdfn", [&] { return weighted(gdfn_forward(x, w.norm2, w.ffn), s(56)); }, with({x}, p), block_tol);
    check("transformer_block", [&] { return weighted(transformer_block(x, w), s(57)); }, with({x}, p), block_tol);
  }
  {
    LP p;
    auto w = make_aflb(Initializer<L>(p, 1, InitScheme::zeros), 4, 2, 2, 2);
    randomize(p, s(14));
    MaskSettings mask{.k = 8};
    check("aflb_soft_mask", [&] { return weighted(aflb_forward(x, image, w, mask), s(58)); },
          with({x, image}, p), block_tol);
  }
  {
    // Spread-out weights so the AFLB paths carry a visible share of the output.
    auto cfg = ModelConfig::desk();
    cfg.init = InitScheme::fan_in_uniform;
    auto m = build_model<L>(cfg, s(15));
    auto in = uniform({1, 3, 16, 16}, s(5), 0, 1);
    std::vector<Tensor<L>> leaves{in};
    for (const char* name : {"embed.weight", "encoder.level1.block0.attn.q.weight", "encoder.down2.weight",
                             "encoder.level4.block0.ffn.contract.weight", "aflb.gap1.fmim.mgb.head.weight",
                             "aflb.gap1.fmim.mgb.head.bias", "aflb.gap2.fmom.hl_conv.weight",
                             "aflb.gap3.fmom.merge_attn.out.weight", "decoder.reduce2.weight",
                             "decoder.level1.block0.norm1.gain", "refinement.block0.attn.temperature",
                             "output.weight"}) {
      leaves.push_back(m.params.find(name));
    }
    check("full_model", [&] { return weighted(model_forward(m, in, ForwardMode::train), s(59)); }, leaves,
          model_tol, GradCheckOptions{.max_coords = 4});
  }
  return out;
}

}  // namespace adair
