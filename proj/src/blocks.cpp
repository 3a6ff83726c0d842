#include "adair/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace adair {

Index reduced_channels(Index channels, Index ratio) {
  if (ratio <= 0) fail(ErrorKind::InvalidConfig, "reduction ratio must be positive");
  return std::max<Index>(2, channels / ratio);
}

Index gdfn_hidden(Index channels, double expansion) {
  return static_cast<Index>(std::round(static_cast<double>(channels) * expansion));
}

SplitOptions MaskSettings::split_options() const {
  SplitOptions s;
  s.mode = kind == MaskKind::learned_hard ? MaskMode::hard : MaskMode::soft;
  s.k = k;
  s.tau = tau;
  if (kind == MaskKind::fixed) s.fixed_half_side = fixed_side / 2;
  s.all_pass_low = all_pass_low;
  return s;
}

template <typename Scalar>
MgbWeights<Scalar> make_mgb(Initializer<Scalar> init, Index channels, Index r1) {
  const Index hidden = reduced_channels(channels, r1);
  return {init.conv("reduce", channels, hidden, 1, {.bias = true}), init.conv("head", hidden, 2, 1, {.bias = true})};
}

template <typename Scalar>
AttentionWeights<Scalar> make_attention(Initializer<Scalar> init, Index channels, Index heads, bool normalize) {
  if (heads <= 0 || channels % heads != 0) {
    fail(ErrorKind::HeadMismatch, std::to_string(heads) + " heads do not divide " + std::to_string(channels) + " channels");
  }
  AttentionWeights<Scalar> w;
  w.q = init.conv("q", channels, channels, 1);
  w.k = init.conv("k", channels, channels, 1);
  w.v = init.conv("v", channels, channels, 1);
  w.q_dw = init.conv("q_dw", channels, channels, 3, {.groups = channels});
  w.k_dw = init.conv("k_dw", channels, channels, 3, {.groups = channels});
  w.v_dw = init.conv("v_dw", channels, channels, 3, {.groups = channels});
  w.out = init.conv("out", channels, channels, 1);
  w.temperature = init.constant("temperature", {heads}, Scalar(1));
  w.heads = heads;
  w.normalize = normalize;
  return w;
}

template <typename Scalar>
FmimWeights<Scalar> make_fmim(Initializer<Scalar> init, Index channels, Index heads, Index r1) {
  FmimWeights<Scalar> w;
  w.image_proj = init.conv("image_proj", 3, channels, 3, {.bias = true});
  w.mgb = make_mgb(init.scope("mgb"), channels, r1);
  w.low_attn = make_attention(init.scope("low_attn"), channels, heads);
  w.high_attn = make_attention(init.scope("high_attn"), channels, heads);
  return w;
}

template <typename Scalar>
FmomWeights<Scalar> make_fmom(Initializer<Scalar> init, Index channels, Index heads, Index r2) {
  const Index hidden = reduced_channels(channels, r2);
  FmomWeights<Scalar> w;
  w.hl_conv = init.conv("hl_conv", 2, 1, 7, {.bias = true});
  w.lh_down = init.conv("lh_down", channels, hidden, 1, {.bias = true});
  w.lh_up = init.conv("lh_up", hidden, channels, 1, {.bias = true});
  w.merge_conv = init.conv("merge_conv", channels, channels, 1, {.bias = true});
  w.merge_attn = make_attention(init.scope("merge_attn"), channels, heads);
  return w;
}

template <typename Scalar>
AflbWeights<Scalar> make_aflb(Initializer<Scalar> init, Index channels, Index heads, Index r1, Index r2) {
  return {make_fmim(init.scope("fmim"), channels, heads, r1), make_fmom(init.scope("fmom"), channels, heads, r2)};
}

template <typename Scalar>
GdfnWeights<Scalar> make_gdfn(Initializer<Scalar> init, Index channels, double expansion) {
  const Index hidden = gdfn_hidden(channels, expansion);
  if (hidden < 1) fail(ErrorKind::InvalidConfig, "GDFN hidden width must be positive");
  GdfnWeights<Scalar> w;
  w.expand_gate = init.conv("expand_gate", channels, hidden, 1);
  w.expand_value = init.conv("expand_value", channels, hidden, 1);
  w.dw_gate = init.conv("dw_gate", hidden, hidden, 3, {.groups = hidden});
  w.dw_value = init.conv("dw_value", hidden, hidden, 3, {.groups = hidden});
  w.contract = init.conv("contract", hidden, channels, 1);
  return w;
}

template <typename Scalar>
TransformerBlockWeights<Scalar> make_transformer_block(Initializer<Scalar> init, Index channels, Index heads,
                                                        double expansion) {
  TransformerBlockWeights<Scalar> w;
  w.norm1 = init.layer_norm("norm1", channels);
  w.attn = make_attention(init.scope("attn"), channels, heads);
  w.norm2 = init.layer_norm("norm2", channels);
  w.ffn = make_gdfn(init.scope("ffn"), channels, expansion);
  return w;
}

namespace {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> mgb_forward(const Tensor<Scalar>& p, const MgbWeights<Scalar>& w) {
  if (p.rank() != 4 || p.dim(1) != w.reduce.in_channels()) {
    fail(ErrorKind::ShapeMismatch, "mgb input " + shape_string(p.shape()) + " does not match its weights");
  }
  return sigmoid(w.head(gelu(w.reduce(pool(p, PoolMode::avg, PoolAxis::spatial)))));
}

template <typename Scalar>
Tensor<Scalar> transposed_cross_attention(const Tensor<Scalar>& q_src, const Tensor<Scalar>& kv_src,
                                          const AttentionWeights<Scalar>& w) {
  require_same_shape(q_src, kv_src, "cross attention");
  if (q_src.dim(1) % w.heads != 0) fail(ErrorKind::HeadMismatch, "heads do not divide channels");
  const auto q = w.q_dw(w.q(q_src));
  const auto k = w.k_dw(w.k(kv_src));
  const auto v = w.v_dw(w.v(kv_src));
  return w.out(channel_attention(q, k, v, w.temperature, w.heads, w.normalize));
}

template <typename Scalar>
FmimOutput<Scalar> fmim_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& image, const FmimWeights<Scalar>& w,
                                const MaskSettings& mask) {
  if (image.rank() != 4 || x.rank() != 4 || image.dim(0) != x.dim(0) || image.dim(2) != x.dim(2) ||
      image.dim(3) != x.dim(3)) {
    fail(ErrorKind::ShapeMismatch, "guidance image " + shape_string(image.shape()) + " does not match features " +
                                       shape_string(x.shape()));
  }
  FmimOutput<Scalar> out;
  const auto p = w.image_proj(image);
  const auto options = mask.split_options();
  const bool learned = !options.fixed_half_side && !options.all_pass_low;
  if (learned) out.factors = mgb_forward(p, w.mgb);
  auto split = frequency_split(p, out.factors, options);
  out.guide_low = split.low;
  out.guide_high = split.high;
  out.x_low = transposed_cross_attention(split.low, x, w.low_attn);
  out.x_high = transposed_cross_attention(split.high, x, w.high_attn);
  return out;
}

template <typename Scalar>
Tensor<Scalar> hl_unit(const Tensor<Scalar>& x_low, const Tensor<Scalar>& x_high, const FmomWeights<Scalar>& w) {
  require_same_shape(x_low, x_high, "hl_unit");
  const auto pooled = concat_channels<Scalar>(
      {pool(x_high, PoolMode::avg, PoolAxis::channel), pool(x_high, PoolMode::max, PoolAxis::channel)});
  return x_low * sigmoid(w.hl_conv(pooled));
}

template <typename Scalar>
Tensor<Scalar> lh_unit(const Tensor<Scalar>& x_low, const Tensor<Scalar>& x_high, const FmomWeights<Scalar>& w) {
  require_same_shape(x_low, x_high, "lh_unit");
  auto branch = [&](PoolMode mode) { return w.lh_up(relu(w.lh_down(pool(x_low, mode, PoolAxis::spatial)))); };
  return x_high * sigmoid(branch(PoolMode::avg) + branch(PoolMode::max));
}

template <typename Scalar>
Tensor<Scalar> fmom_merge(const Tensor<Scalar>& x, const Tensor<Scalar>& x_low_mod, const Tensor<Scalar>& x_high_mod,
                          const FmomWeights<Scalar>& w) {
  require_same_shape(x, x_low_mod, "fmom_merge");
  require_same_shape(x, x_high_mod, "fmom_merge");
  const auto merged = w.merge_conv(x_low_mod + x_high_mod);
  return x + transposed_cross_attention(x, merged, w.merge_attn);
}

template <typename Scalar>
Tensor<Scalar> mdta_forward(const Tensor<Scalar>& x, const LayerNormWeights<Scalar>& norm,
                            const AttentionWeights<Scalar>& w) {
  const auto normed = norm(x);
  return x + transposed_cross_attention(normed, normed, w);
}

template <typename Scalar>
Tensor<Scalar> gdfn_forward(const Tensor<Scalar>& x, const LayerNormWeights<Scalar>& norm,
                            const GdfnWeights<Scalar>& w) {
  const auto normed = norm(x);
  const auto gate = gelu(w.dw_gate(w.expand_gate(normed)));
  const auto value = w.dw_value(w.expand_value(normed));
  return x + w.contract(gate * value);
}

template <typename Scalar>
Tensor<Scalar> transformer_block(const Tensor<Scalar>& x, const TransformerBlockWeights<Scalar>& w) {
  return gdfn_forward(mdta_forward(x, w.norm1, w.attn), w.norm2, w.ffn);
}

template <typename Scalar>
Tensor<Scalar> aflb_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& image, const AflbWeights<Scalar>& w,
                            const MaskSettings& mask, const AflbProbe<Scalar>& probe) {
  const auto mined = fmim_forward(x, image, w.fmim, mask);
  if (probe) probe(mined);
  const auto low_mod = hl_unit(mined.x_low, mined.x_high, w.fmom);
  const auto high_mod = lh_unit(mined.x_low, mined.x_high, w.fmom);
  return fmom_merge(x, low_mod, high_mod, w.fmom);
}

#define ADAIR_INSTANTIATE_BLOCKS(S)                                                                          \
  template MgbWeights<S> make_mgb(Initializer<S>, Index, Index);                                             \
  template AttentionWeights<S> make_attention(Initializer<S>, Index, Index, bool);                           \
  template FmimWeights<S> make_fmim(Initializer<S>, Index, Index, Index);                                    \
  template FmomWeights<S> make_fmom(Initializer<S>, Index, Index, Index);                                    \
  template AflbWeights<S> make_aflb(Initializer<S>, Index, Index, Index, Index);                             \
  template GdfnWeights<S> make_gdfn(Initializer<S>, Index, double);                                          \
  template TransformerBlockWeights<S> make_transformer_block(Initializer<S>, Index, Index, double);           \
  template Tensor<S> mgb_forward(const Tensor<S>&, const MgbWeights<S>&);                                    \
  template Tensor<S> transposed_cross_attention(const Tensor<S>&, const Tensor<S>&, const AttentionWeights<S>&); \
  template FmimOutput<S> fmim_forward(const Tensor<S>&, const Tensor<S>&, const FmimWeights<S>&,             \
                                      const MaskSettings&);                                                  \
  template Tensor<S> hl_unit(const Tensor<S>&, const Tensor<S>&, const FmomWeights<S>&);                     \
  template Tensor<S> lh_unit(const Tensor<S>&, const Tensor<S>&, const FmomWeights<S>&);                     \
  template Tensor<S> fmom_merge(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const FmomWeights<S>&); \
  template Tensor<S> mdta_forward(const Tensor<S>&, const LayerNormWeights<S>&, const AttentionWeights<S>&);  \
  template Tensor<S> gdfn_forward(const Tensor<S>&, const LayerNormWeights<S>&, const GdfnWeights<S>&);      \
  template Tensor<S> transformer_block(const Tensor<S>&, const TransformerBlockWeights<S>&);                  \
  template Tensor<S> aflb_forward(const Tensor<S>&, const Tensor<S>&, const AflbWeights<S>&,                 \
                                  const MaskSettings&, const AflbProbe<S>&);

ADAIR_INSTANTIATE_BLOCKS(float)
ADAIR_INSTANTIATE_BLOCKS(double)
ADAIR_INSTANTIATE_BLOCKS(long double)

}  // namespace adair
