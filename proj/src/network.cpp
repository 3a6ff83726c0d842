#include "adair/network.hpp"

#include <algorithm>

namespace adair {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::learned_soft: return "learned-soft";
    case MaskKind::learned_hard: return "learned-hard";
    case MaskKind::fixed: return "fixed";
  }
  return "?";
}

namespace {

constexpr Index kPadMultiple = 16;
const char* const kGapNames[3] = {"gap1", "gap2", "gap3"};

std::string init_name(InitScheme s) {
  switch (s) {
    case InitScheme::scaled_normal: return "scaled-normal";
    case InitScheme::fan_in_uniform: return "fan-in-uniform";
    case InitScheme::zeros: return "zeros";
  }
  return "?";
}

template <std::size_t N>
std::array<Index, N> fixed_list(std::string_view value, std::string_view key) {
  const auto v = parse_index_list(value, key);
  if (v.size() != N) fail(ErrorKind::InvalidConfig, "key '" + std::string(key) + "' needs " + std::to_string(N) + " values");
  std::array<Index, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.channels = 48;
  c.blocks = {4, 6, 6, 8};
  c.refinement_blocks = 4;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

Index ModelConfig::aflb_count() const { return std::count(aflb.begin(), aflb.end(), true); }

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::InvalidConfig, msg); };
  if (channels < 2 || channels % 2 != 0) bad("channels must be even and at least 2");
  for (std::size_t l = 0; l < 4; ++l) {
    if (blocks[l] < 0) bad("block counts must be non-negative");
    if (heads[l] <= 0 || (channels << l) % heads[l] != 0) {
      bad("level " + std::to_string(l + 1) + ": " + std::to_string(heads[l]) + " heads do not divide " +
          std::to_string(channels << l) + " channels");
    }
  }
  if (refinement_blocks < 0) bad("refinement_blocks must be non-negative");
  if (!(expansion > 0) || gdfn_hidden(channels, expansion) < 1) bad("expansion too small");
  if (r1 < 1 || r2 < 1) bad("r1 and r2 must be positive");
  if (!(mask.k > 0) || !(mask.tau > 0)) bad("mask_k and mask_tau must be positive");
  if (mask.fixed_side < 0) bad("mask_side must be non-negative");
}

std::string ModelConfig::to_text() const {
  std::string aflb_text;
  for (std::size_t g = 0; g < 3; ++g) {
    if (!aflb[g]) continue;
    if (!aflb_text.empty()) aflb_text += ",";
    aflb_text += kGapNames[g];
  }
  if (aflb_text.empty()) aflb_text = "none";
  std::string out;
  auto line = [&](const char* key, const std::string& value) { out += std::string(key) + " = " + value + "\n"; };
  line("channels", std::to_string(channels));
  line("blocks", format_index_list({blocks.begin(), blocks.end()}));
  line("refinement_blocks", std::to_string(refinement_blocks));
  line("heads", format_index_list({heads.begin(), heads.end()}));
  line("expansion", format_double(expansion));
  line("r1", std::to_string(r1));
  line("r2", std::to_string(r2));
  line("mask", to_string(mask.kind));
  line("mask_k", format_double(mask.k));
  line("mask_tau", format_double(mask.tau));
  line("mask_side", std::to_string(mask.fixed_side));
  line("aflb", aflb_text);
  line("precision", to_string(precision));
  line("init", init_name(init));
  return out;
}

ModelConfig ModelConfig::from_keys(KeyValueText& keys) {
  ModelConfig c = desk();
  if (auto v = keys.take("preset")) {
    if (*v == "full") c = full_scale();
    else if (*v != "desk") fail(ErrorKind::InvalidConfig, "preset must be full or desk");
  }
  if (auto v = keys.take("channels")) c.channels = parse_index(*v, "channels");
  if (auto v = keys.take("blocks")) c.blocks = fixed_list<4>(*v, "blocks");
  if (auto v = keys.take("refinement_blocks")) c.refinement_blocks = parse_index(*v, "refinement_blocks");
  if (auto v = keys.take("heads")) c.heads = fixed_list<4>(*v, "heads");
  if (auto v = keys.take("expansion")) c.expansion = parse_double(*v, "expansion");
  if (auto v = keys.take("r1")) c.r1 = parse_index(*v, "r1");
  if (auto v = keys.take("r2")) c.r2 = parse_index(*v, "r2");
  if (auto v = keys.take("mask")) {
    if (*v == "learned-soft") c.mask.kind = MaskKind::learned_soft;
    else if (*v == "learned-hard") c.mask.kind = MaskKind::learned_hard;
    else if (*v == "fixed") c.mask.kind = MaskKind::fixed;
    else fail(ErrorKind::InvalidConfig, "mask must be learned-soft, learned-hard or fixed");
  }
  if (auto v = keys.take("mask_k")) c.mask.k = parse_double(*v, "mask_k");
  if (auto v = keys.take("mask_tau")) c.mask.tau = parse_double(*v, "mask_tau");
  if (auto v = keys.take("mask_side")) c.mask.fixed_side = parse_index(*v, "mask_side");
  if (auto v = keys.take("aflb")) {
    c.aflb = {false, false, false};
    if (*v != "none") {
      std::string_view rest = *v;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        std::string_view item = rest.substr(0, comma);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        bool known = false;
        for (std::size_t g = 0; g < 3; ++g) {
          if (item == kGapNames[g]) c.aflb[g] = known = true;
        }
        if (!known) fail(ErrorKind::InvalidConfig, "aflb entries must be gap1, gap2, gap3 or none");
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      }
    }
  }
  if (auto v = keys.take("precision")) {
    if (*v == "f32") c.precision = Precision::f32;
    else if (*v == "f64") c.precision = Precision::f64;
    else fail(ErrorKind::InvalidConfig, "precision must be f32 or f64");
  }
  if (auto v = keys.take("init")) {
    if (*v == "scaled-normal") c.init = InitScheme::scaled_normal;
    else if (*v == "fan-in-uniform") c.init = InitScheme::fan_in_uniform;
    else fail(ErrorKind::InvalidConfig, "init must be scaled-normal or fan-in-uniform");
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  auto keys = KeyValueText::parse(text, "model config");
  auto c = from_keys(keys);
  keys.reject_unused();
  return c;
}

bool ModelConfig::operator==(const ModelConfig& o) const { return to_text() == o.to_text(); }

Index ParameterCount::group(std::string_view name) const {
  for (const auto& [g, n] : groups) {
    if (g == name) return n;
  }
  return 0;
}

Index ParameterCount::aflb_total() const {
  Index total = 0;
  for (const auto& [g, n] : groups) {
    if (g.starts_with("aflb.")) total += n;
  }
  return total;
}

template <typename Scalar>
AdaIRModel<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  AdaIRModel<Scalar> m;
  m.config = config;
  Initializer<Scalar> root(m.params, seed, config.init);
  const Index c = config.channels;
  const Index width[4] = {c, 2 * c, 4 * c, 8 * c};
  auto stack = [&](Initializer<Scalar> init, Index count, Index channels, Index heads) {
    std::vector<TransformerBlockWeights<Scalar>> blocks;
    for (Index i = 0; i < count; ++i) {
      blocks.push_back(make_transformer_block(init.scope("block" + std::to_string(i)), channels, heads, config.expansion));
    }
    return blocks;
  };

  m.embed = root.conv("embed", 3, c, 3);
  auto enc = root.scope("encoder");
  for (std::size_t l = 0; l < 4; ++l) {
    m.encoder[l] = stack(enc.scope("level" + std::to_string(l + 1)), config.blocks[l], width[l], config.heads[l]);
    // halve the channels, then pixel-unshuffle doubles them at half resolution
    if (l < 3) m.down[l] = enc.conv("down" + std::to_string(l + 1), width[l], width[l] / 2, 3);
  }
  if (config.aflb[0]) m.aflb[0] = make_aflb(root.scope("aflb.gap1"), width[3], config.heads[3], config.r1, config.r2);

  auto dec = root.scope("decoder");
  // up[i] maps level (4 − i) to (3 − i); pixel-shuffle quarters the doubled channels
  m.up[0] = dec.conv("up4", width[3], 2 * width[3], 3);
  m.reduce[0] = dec.conv("reduce3", 2 * width[2], width[2], 1);
  m.decoder[0] = stack(dec.scope("level3"), config.blocks[2], width[2], config.heads[2]);
  if (config.aflb[1]) m.aflb[1] = make_aflb(root.scope("aflb.gap2"), width[2], config.heads[2], config.r1, config.r2);

  m.up[1] = dec.conv("up3", width[2], 2 * width[2], 3);
  m.reduce[1] = dec.conv("reduce2", 2 * width[1], width[1], 1);
  m.decoder[1] = stack(dec.scope("level2"), config.blocks[1], width[1], config.heads[1]);
  if (config.aflb[2]) m.aflb[2] = make_aflb(root.scope("aflb.gap3"), width[1], config.heads[1], config.r1, config.r2);

  // level 1 keeps the concatenated 2C width, as does the refinement stage
  m.up[2] = dec.conv("up2", width[1], 2 * width[1], 3);
  m.decoder[2] = stack(dec.scope("level1"), config.blocks[0], 2 * c, config.heads[0]);
  m.refinement = stack(root.scope("refinement"), config.refinement_blocks, 2 * c, config.heads[0]);
  m.output = root.conv("output", 2 * c, 3, 3);
  return m;
}

template <typename Scalar>
Tensor<Scalar> model_forward(const AdaIRModel<Scalar>& m, const Tensor<Scalar>& image, ForwardMode mode,
                             const AflbProbe<Scalar>& probe) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    fail(ErrorKind::ShapeMismatch, "model input must be N×3×H×W, got " + shape_string(image.shape()));
  }
  if (image.numel() == 0) fail(ErrorKind::EmptyInput, "empty image batch");
  const Index h = image.dim(2), w = image.dim(3);
  const Index ph = (kPadMultiple - h % kPadMultiple) % kPadMultiple;
  const Index pw = (kPadMultiple - w % kPadMultiple) % kPadMultiple;
  const auto input = (ph || pw) ? pad_reflect(image, ph, pw) : image;

  auto run = [](Tensor<Scalar> x, const std::vector<TransformerBlockWeights<Scalar>>& blocks) {
    for (const auto& b : blocks) x = transformer_block(x, b);
    return x;
  };
  auto guided = [&](std::size_t gap, const Tensor<Scalar>& x) {
    if (!m.aflb[gap]) return x;
    const auto guide = resize_bilinear(input, x.dim(2), x.dim(3));
    return aflb_forward(x, guide, *m.aflb[gap], m.config.mask, probe);
  };

  std::array<Tensor<Scalar>, 3> skips;
  Tensor<Scalar> x = m.embed(input);
  for (std::size_t l = 0; l < 3; ++l) {
    skips[l] = run(x, m.encoder[l]);
    x = pixel_unshuffle(m.down[l](skips[l]), 2);
  }
  x = guided(0, run(x, m.encoder[3]));

  x = m.reduce[0](concat_channels<Scalar>({pixel_shuffle(m.up[0](x), 2), skips[2]}));
  x = guided(1, run(x, m.decoder[0]));
  x = m.reduce[1](concat_channels<Scalar>({pixel_shuffle(m.up[1](x), 2), skips[1]}));
  x = guided(2, run(x, m.decoder[1]));
  x = concat_channels<Scalar>({pixel_shuffle(m.up[2](x), 2), skips[0]});
  x = run(run(x, m.decoder[2]), m.refinement);

  auto out = m.output(x) + input;
  if (ph || pw) out = crop(out, h, w);
  if (mode == ForwardMode::inference) {
    auto clamped = out.detach();
    clamped.data_mut() = clamped.data().cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    return clamped;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> restore(const AdaIRModel<Scalar>& model, const Tensor<Scalar>& image) {
  NoGradGuard no_grad;
  return model_forward(model, image, ForwardMode::inference);
}

template <typename Scalar>
ParameterCount count_parameters(const AdaIRModel<Scalar>& model) {
  ParameterCount c;
  c.total = model.params.count();
  for (const char* g : {"embed.", "encoder.", "decoder.", "aflb.gap1.", "aflb.gap2.", "aflb.gap3.", "refinement.",
                        "output."}) {
    std::string name(g);
    name.pop_back();
    c.groups.emplace_back(name, model.params.count_prefix(g));
  }
  return c;
}

ParameterCount count_parameters(const ModelConfig& config) {
  auto copy = config;
  copy.init = InitScheme::zeros;
  return count_parameters(build_model<float>(copy, 0));
}

template <typename Scalar>
std::size_t copy_matching_parameters(const AdaIRModel<Scalar>& src, AdaIRModel<Scalar>& dst) {
  std::size_t copied = 0;
  for (const auto& p : dst.params.items()) {
    const auto from = src.params.find(p.name);
    if (!from.defined() || from.shape() != p.tensor.shape()) continue;
    auto to = p.tensor;
    to.data_mut() = from.data();
    ++copied;
  }
  return copied;
}

#define ADAIR_INSTANTIATE_NETWORK(S)                                                                   \
  template AdaIRModel<S> build_model(const ModelConfig&, std::uint64_t);                               \
  template Tensor<S> model_forward(const AdaIRModel<S>&, const Tensor<S>&, ForwardMode, const AflbProbe<S>&); \
  template Tensor<S> restore(const AdaIRModel<S>&, const Tensor<S>&);                                 \
  template ParameterCount count_parameters(const AdaIRModel<S>&);                                      \
  template std::size_t copy_matching_parameters(const AdaIRModel<S>&, AdaIRModel<S>&);

ADAIR_INSTANTIATE_NETWORK(float)
ADAIR_INSTANTIATE_NETWORK(double)
ADAIR_INSTANTIATE_NETWORK(long double)

}  // namespace adair
