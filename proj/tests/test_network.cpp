#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "adair/checkpoint.hpp"
#include "adair/gradcheck.hpp"
#include "adair/network.hpp"
#include "adair/train.hpp"
#include "test_support.hpp"

using namespace adair;
using adair::testing::random_tensor;
using adair::testing::weighted_sum;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected adair::Error");
  return ErrorKind::Io;
}

ModelConfig baseline(ModelConfig c) {
  c.aflb = {false, false, false};
  return c;
}

template <typename Scalar>
std::uint64_t hash_of(const Tensor<Scalar>& t) {
  return fnv1a64(reinterpret_cast<const std::uint8_t*>(t.data().data()), sizeof(Scalar) * t.numel());
}

template <typename Scalar>
void zero_param(AdaIRModel<Scalar>& m, const std::string& name) {
  auto t = m.params.find(name);
  REQUIRE(t.defined());
  t.data_mut().setZero();
}

}  // namespace

TEST_CASE("full-scale parameter counts") {
  const auto base = count_parameters(baseline(ModelConfig::full_scale()));
  const auto full = count_parameters(ModelConfig::full_scale());
  MESSAGE("baseline " << base.total << ", full " << full.total << ", AFLB overhead " << full.aflb_total()
                      << " (reference delta 2.64M)");
  CHECK(std::abs(static_cast<double>(base.total) - 26.13e6) <= 0.03 * 26.13e6);
  CHECK(full.total >= 26'500'000);
  CHECK(full.total <= 31'000'000);
  CHECK(full.total - base.total == full.aflb_total());
  CHECK(base.aflb_total() == 0);

  Index sum = 0;
  for (const auto& [g, n] : full.groups) sum += n;
  CHECK(sum == full.total);
  CHECK(full.group("encoder") == base.group("encoder"));
  CHECK(full.group("aflb.gap1") > full.group("aflb.gap2"));
  CHECK(full.group("aflb.gap2") > full.group("aflb.gap3"));
}

TEST_CASE("parameter count closed forms") {
  ParameterList<double> params;
  Initializer<double> init(params, 0, InitScheme::zeros);
  init.conv("a", 7, 5, 1, {.bias = true});
  CHECK(params.count() == 7 * 5 + 5);
  init.conv("b", 6, 6, 3, {.groups = 6});
  CHECK(params.count_prefix("b.") == 6 * 9);

  // hand ledger: C=4, one block at level 1 only, no refinement, heads 1,
  // expansion 2 (GDFN hidden 8), a single AFLB at gap3 (8 channels)
  ModelConfig toy;
  toy.channels = 4;
  toy.blocks = {1, 0, 0, 0};
  toy.refinement_blocks = 0;
  toy.heads = {1, 1, 1, 1};
  toy.expansion = 2.0;
  toy.aflb = {false, false, true};
  const Index embed = 3 * 4 * 9;
  const Index block = 2 * 4 + (3 * 16 + 3 * 4 * 9 + 16 + 1) + 2 * 4 + (2 * 4 * 8 + 2 * 8 * 9 + 8 * 4);
  const Index down = 4 * 2 * 9 + 8 * 4 * 9 + 16 * 8 * 9;
  const Index up = 32 * 64 * 9 + 16 * 32 * 9 + 8 * 16 * 9;
  const Index reduce = 32 * 16 + 16 * 8;
  const Index attn8 = 4 * 64 + 3 * 8 * 9 + 1;
  const Index fmim = (3 * 8 * 9 + 8) + (8 * 2 + 2 + 2 * 2 + 2) + 2 * attn8;
  const Index fmom = (2 * 49 + 1) + (8 * 2 + 2) + (2 * 8 + 8) + (64 + 8) + attn8;
  const Index output = 8 * 3 * 9;
  // decoder level 1 repeats the level-1 block count at 2C = 8, hidden 16
  const Index block8 = 2 * 8 + (3 * 64 + 3 * 8 * 9 + 64 + 1) + 2 * 8 + (2 * 8 * 16 + 2 * 16 * 9 + 16 * 8);
  const auto counted = count_parameters(toy);
  CHECK(counted.group("aflb.gap3") == fmim + fmom);
  CHECK(counted.group("embed") == embed);
  CHECK(counted.group("output") == output);
  CHECK(counted.total == embed + block + down + up + reduce + fmim + fmom + block8 + output);
  CHECK(counted.total == 30'154);
}

TEST_CASE("config validation and text round trip") {
  auto c = ModelConfig::desk();
  c.mask.kind = MaskKind::fixed;
  c.mask.fixed_side = 6;
  c.aflb = {true, false, true};
  c.precision = Precision::f64;
  c.expansion = 2.5;
  const auto back = ModelConfig::from_text(c.to_text());
  CHECK(back == c);
  CHECK(back.aflb_count() == 2);
  CHECK(ModelConfig::from_text("preset = full\naflb = none\n").aflb_count() == 0);
  CHECK(ModelConfig::from_text("preset = full\n").channels == 48);

  CHECK(kind_of([] { ModelConfig::from_text("channel = 8\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("heads = 1,2,3,8\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("channels = 7\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("aflb = gap4\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("blocks = 1,1,1\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("mask = round\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_text("r1 = 0\n"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("build is deterministic in the seed") {
  const auto a = build_model<float>(ModelConfig::desk(), 5);
  const auto b = build_model<float>(ModelConfig::desk(), 5);
  const auto c = build_model<float>(ModelConfig::desk(), 6);
  REQUIRE(a.params.size() == b.params.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& x = a.params.items()[i].tensor.data();
    same = same && (x == b.params.items()[i].tensor.data()).all();
    differs = differs || !(x == c.params.items()[i].tensor.data()).all();
  }
  CHECK(same);
  CHECK(differs);
  CHECK(a.aflb[0].has_value());
  CHECK(a.aflb[1].has_value());
  CHECK(a.aflb[2].has_value());
}

TEST_CASE("forward preserves shape and is deterministic") {
  const auto m = build_model<float>(ModelConfig::desk(), 1);
  for (Index h : {17, 32, 64}) {
    for (Index w : {17, 32, 64}) {
      const auto x = random_tensor<float>({1, 3, h, w}, 7, 0.0, 1.0);
      const auto y = restore(m, x);
      CHECK(y.shape() == x.shape());
      CHECK(hash_of(y) == hash_of(restore(m, x)));
    }
  }
  const auto batch = random_tensor<float>({2, 3, 8, 12}, 3, 0.0, 1.0);
  CHECK(restore(m, batch).shape() == batch.shape());
  CHECK(kind_of([&] { restore(m, Tensor<float>({1, 3, 0, 8})); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([&] { restore(m, Tensor<float>({1, 4, 8, 8})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("clamp applies at inference only") {
  auto m = build_model<double>(ModelConfig::desk(), 2);
  auto bias_free = m.params.find("output.weight");
  bias_free.data_mut().setConstant(0.05);
  const auto x = random_tensor<double>({1, 3, 16, 16}, 4, 0.0, 1.0);
  const auto train = model_forward(m, x, ForwardMode::train);
  const auto infer = model_forward(m, x, ForwardMode::inference);
  CHECK(train.data().maxCoeff() > 1.0);
  CHECK(infer.data().maxCoeff() <= 1.0);
  CHECK(infer.data().minCoeff() >= 0.0);
  CHECK((infer.data() == train.data().cwiseMax(0.0).cwiseMin(1.0)).all());
}

TEST_CASE("residual identities of the whole model") {
  auto m = build_model<double>(ModelConfig::desk(), 3);
  zero_param(m, "output.weight");
  for (Index size : {16, 21}) {
    const auto x = random_tensor<double>({1, 3, size, size}, 8, 0.0, 1.0);
    const auto y = model_forward(m, x, ForwardMode::train);
    CHECK((y.data() == x.data()).all());
  }
}

TEST_CASE("AFLB transparency") {
  // the default init is so small that AFLB branches vanish below rounding;
  // unit-scale weights make the identity meaningful
  auto full_cfg = ModelConfig::desk();
  full_cfg.init = InitScheme::fan_in_uniform;
  auto full = build_model<double>(full_cfg, 9);
  auto base = build_model<double>(baseline(full_cfg), 10);
  for (const char* gap : {"gap1", "gap2", "gap3"}) {
    zero_param(full, std::string("aflb.") + gap + ".fmom.merge_attn.out.weight");
  }
  const auto copied = copy_matching_parameters(full, base);
  CHECK(copied == base.params.size());
  const auto x = random_tensor<double>({1, 3, 24, 20}, 12, 0.0, 1.0);
  const auto a = model_forward(full, x, ForwardMode::train);
  const auto b = model_forward(base, x, ForwardMode::train);
  CHECK((a.data() == b.data()).all());

  // restoring one projection breaks the identity
  full.params.find("aflb.gap2.fmom.merge_attn.out.weight").data_mut().setConstant(0.05);
  CHECK((model_forward(full, x, ForwardMode::train).data() - b.data()).abs().maxCoeff() > 1e-6);
}

TEST_CASE("golden forward hash") {
  auto cfg = ModelConfig::desk();
  cfg.init = InitScheme::fan_in_uniform;
  const auto m = build_model<double>(cfg, 2024);
  const auto x = random_tensor<double>({1, 3, 24, 24}, 77, 0.0, 1.0);
  const auto y = restore(m, x);
  char text[32];
  std::snprintf(text, sizeof text, "%016llx", static_cast<unsigned long long>(hash_of(y)));
  const std::string path = std::string(ADAIR_GOLDEN_DIR) + "/desk_forward.hash";
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path << "; this build produces " << text);
  std::string expected;
  in >> expected;
  CHECK(expected == std::string(text));
}

TEST_CASE("full desk model gradients") {
  using L = long double;
  auto cfg = ModelConfig::desk();
  cfg.init = InitScheme::fan_in_uniform;
  auto m = build_model<L>(cfg, 31);
  auto x = random_tensor<L>({1, 3, 16, 16}, 32, 0.0, 1.0);
  // one tensor from every stage, a few coordinates each
  std::vector<Tensor<L>> leaves{x};
  for (const char* name : {"embed.weight", "encoder.level1.block0.attn.q.weight", "encoder.down2.weight",
                           "encoder.level4.block0.ffn.contract.weight", "aflb.gap1.fmim.mgb.head.weight",
                           "aflb.gap1.fmim.mgb.head.bias", "aflb.gap2.fmom.hl_conv.weight",
                           "aflb.gap3.fmom.merge_attn.out.weight", "decoder.reduce2.weight",
                           "decoder.level1.block0.norm1.gain", "refinement.block0.attn.temperature", "output.weight"}) {
    auto t = m.params.find(name);
    REQUIRE_MESSAGE(t.defined(), name);
    leaves.push_back(t);
  }
  const auto report = gradcheck<L>(
      [&] { return weighted_sum(model_forward(m, x, ForwardMode::train)); }, leaves,
      GradCheckOptions{.max_coords = 4, .seed = 5});
  MESSAGE("full model max rel error " << report.max_rel_error << " over " << report.checked << " coordinates");
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("checkpoint round trip") {
  const std::string path = "test_network_roundtrip.ckpt";
  auto cfg = ModelConfig::desk();
  cfg.mask.kind = MaskKind::learned_hard;
  const auto m = build_model<float>(cfg, 40);
  const auto x = random_tensor<float>({1, 3, 20, 20}, 41, 0.0, 1.0);

  OptimizerState<float> opt;
  for (const auto& t : m.params.tensors()) {
    opt.m.push_back(ArrayX<float>::Constant(t.numel(), 0.25f));
    opt.v.push_back(ArrayX<float>::Constant(t.numel(), 0.5f));
  }
  opt.step = 17;
  save_checkpoint(path, m, &opt);
  const auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.model.config == m.config);
  CHECK(loaded.info.precision == Precision::f32);
  CHECK(loaded.info.parameters == m.params.count());
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 17);
  CHECK((loaded.optimizer->v.back() == 0.5f).all());
  CHECK(hash_of(restore(loaded.model, x)) == hash_of(restore(m, x)));

  // a float checkpoint read into a double model keeps the values exactly
  const auto widened = load_checkpoint<double>(path);
  CHECK(widened.info.precision == Precision::f32);
  CHECK((widened.model.params.items()[3].tensor.data() ==
         m.params.items()[3].tensor.data().cast<double>()).all());

  const auto d = build_model<double>(cfg, 40);
  const auto bytes = checkpoint_bytes(d);
  CHECK(load_checkpoint_bytes<double>(bytes).info.precision == Precision::f64);
  CHECK_FALSE(load_checkpoint_bytes<double>(bytes).optimizer.has_value());

  auto into = build_model<float>(cfg, 99);
  load_weights_into(into, path);
  CHECK(hash_of(restore(into, x)) == hash_of(restore(m, x)));
  auto other_cfg = cfg;
  other_cfg.aflb = {true, true, false};
  auto other = build_model<float>(other_cfg, 1);
  CHECK(kind_of([&] { load_weights_into(other, path); }) == ErrorKind::ConfigMismatch);
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto m = build_model<float>(ModelConfig::desk(), 40);
  const auto good = checkpoint_bytes(m);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  CHECK(kind_of([&] { load_checkpoint_bytes<float>(truncated); }) == ErrorKind::CorruptCheckpoint);

  auto flipped = good;
  flipped[good.size() / 3] ^= 0x40;
  CHECK(kind_of([&] { load_checkpoint_bytes<float>(flipped); }) == ErrorKind::CorruptCheckpoint);

  auto magic = good;
  magic[0] = 'X';
  CHECK(kind_of([&] { load_checkpoint_bytes<float>(magic); }) == ErrorKind::CorruptCheckpoint);

  CHECK(kind_of([&] { load_checkpoint_bytes<float>({}); }) == ErrorKind::CorruptCheckpoint);
  CHECK(kind_of([&] { load_checkpoint<float>("/nonexistent/x.ckpt"); }) == ErrorKind::Io);
}
