#pragma once

#include <functional>
#include <string>

#include "adair/parameters.hpp"
#include "adair/spectral.hpp"

namespace adair {

/// Mask generation: global average pool → 1×1 → GELU → 1×1 → sigmoid, giving
/// the (α, β) low-pass factors of every sample.
template <typename Scalar>
struct MgbWeights {
  Conv<Scalar> reduce;  // C → C/r1
  Conv<Scalar> head;    // C/r1 → 2
};

/// Q from one source, K and V from another, each through 1×1 then 3×3
/// depth-wise convolution; per-head temperature scales the channel map.
template <typename Scalar>
struct AttentionWeights {
  Conv<Scalar> q, k, v;
  Conv<Scalar> q_dw, k_dw, v_dw;
  Conv<Scalar> out;
  Tensor<Scalar> temperature;  // (heads)
  Index heads = 1;
  bool normalize = true;
};

template <typename Scalar>
struct FmimWeights {
  Conv<Scalar> image_proj;  // 3×3, 3 → C
  MgbWeights<Scalar> mgb;
  AttentionWeights<Scalar> low_attn;
  AttentionWeights<Scalar> high_attn;
};

template <typename Scalar>
struct FmomWeights {
  Conv<Scalar> hl_conv;  // 7×7, 2 → 1
  Conv<Scalar> lh_down;  // 1×1, C → C/r2, shared by the average and max branches
  Conv<Scalar> lh_up;    // 1×1, C/r2 → C, shared likewise
  Conv<Scalar> merge_conv;
  AttentionWeights<Scalar> merge_attn;
};

template <typename Scalar>
struct AflbWeights {
  FmimWeights<Scalar> fmim;
  FmomWeights<Scalar> fmom;
};

template <typename Scalar>
struct GdfnWeights {
  Conv<Scalar> expand_gate, expand_value;  // 1×1, C → hidden
  Conv<Scalar> dw_gate, dw_value;          // 3×3 depth-wise
  Conv<Scalar> contract;                   // 1×1, hidden → C
};

template <typename Scalar>
struct TransformerBlockWeights {
  LayerNormWeights<Scalar> norm1;
  AttentionWeights<Scalar> attn;
  LayerNormWeights<Scalar> norm2;
  GdfnWeights<Scalar> ffn;
};

/// Channel width of a bottleneck C/r, kept at 2 or more.
Index reduced_channels(Index channels, Index ratio);

/// GDFN hidden width round(C·expansion).
Index gdfn_hidden(Index channels, double expansion);

template <typename Scalar>
MgbWeights<Scalar> make_mgb(Initializer<Scalar> init, Index channels, Index r1);
template <typename Scalar>
AttentionWeights<Scalar> make_attention(Initializer<Scalar> init, Index channels, Index heads, bool normalize = true);
template <typename Scalar>
FmimWeights<Scalar> make_fmim(Initializer<Scalar> init, Index channels, Index heads, Index r1);
template <typename Scalar>
FmomWeights<Scalar> make_fmom(Initializer<Scalar> init, Index channels, Index heads, Index r2);
template <typename Scalar>
AflbWeights<Scalar> make_aflb(Initializer<Scalar> init, Index channels, Index heads, Index r1, Index r2);
template <typename Scalar>
GdfnWeights<Scalar> make_gdfn(Initializer<Scalar> init, Index channels, double expansion);
template <typename Scalar>
TransformerBlockWeights<Scalar> make_transformer_block(Initializer<Scalar> init, Index channels, Index heads,
                                                        double expansion);

/// How the low-pass region of the frequency split is chosen.
enum class MaskKind { learned_soft, learned_hard, fixed };

struct MaskSettings {
  MaskKind kind = MaskKind::learned_soft;
  double k = 128;
  double tau = 0.25;
  /// Square side for MaskKind::fixed; the hard half-side is side / 2.
  Index fixed_side = 10;
  /// Test hook: the low mask passes everything.
  bool all_pass_low = false;

  SplitOptions split_options() const;
};

/// Returns N×2×1×1 factors, (α, β) per sample, each in (0, 1).
template <typename Scalar>
Tensor<Scalar> mgb_forward(const Tensor<Scalar>& p, const MgbWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> transposed_cross_attention(const Tensor<Scalar>& q_src, const Tensor<Scalar>& kv_src,
                                          const AttentionWeights<Scalar>& w);

template <typename Scalar>
struct FmimOutput {
  Tensor<Scalar> x_low;
  Tensor<Scalar> x_high;
  Tensor<Scalar> factors;  // N×2×1×1; undefined when the mask ignores them
  Tensor<Scalar> guide_low;  // spatial low-frequency part of the projected image
  Tensor<Scalar> guide_high;
};

/// image must already have x's spatial size.
template <typename Scalar>
FmimOutput<Scalar> fmim_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& image, const FmimWeights<Scalar>& w,
                                const MaskSettings& mask);

template <typename Scalar>
Tensor<Scalar> hl_unit(const Tensor<Scalar>& x_low, const Tensor<Scalar>& x_high, const FmomWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> lh_unit(const Tensor<Scalar>& x_low, const Tensor<Scalar>& x_high, const FmomWeights<Scalar>& w);

/// x + cross_attention(q = x, kv = merge_conv(x_low_mod + x_high_mod)).
template <typename Scalar>
Tensor<Scalar> fmom_merge(const Tensor<Scalar>& x, const Tensor<Scalar>& x_low_mod, const Tensor<Scalar>& x_high_mod,
                          const FmomWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> mdta_forward(const Tensor<Scalar>& x, const LayerNormWeights<Scalar>& norm,
                            const AttentionWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> gdfn_forward(const Tensor<Scalar>& x, const LayerNormWeights<Scalar>& norm, const GdfnWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> transformer_block(const Tensor<Scalar>& x, const TransformerBlockWeights<Scalar>& w);

/// Observer for intermediate AFLB results (factors, split features); may be empty.
template <typename Scalar>
using AflbProbe = std::function<void(const FmimOutput<Scalar>&)>;

template <typename Scalar>
Tensor<Scalar> aflb_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& image, const AflbWeights<Scalar>& w,
                            const MaskSettings& mask, const AflbProbe<Scalar>& probe = {});

}  // namespace adair
