#pragma once

#include <vector>

#include "adair/tensor.hpp"

namespace adair {

enum class Binary { add, sub, mul, div };

/// a (op) b where b has the rank of a and every extent of b is 1 or equal to
/// the matching extent of a. The result has the shape of a.
template <typename Scalar>
Tensor<Scalar> elementwise(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Binary kind);

template <typename Scalar>
Tensor<Scalar> elementwise(const Tensor<Scalar>& a, Scalar b, Binary kind);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(a, b, Binary::add); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(a, b, Binary::sub); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(a, b, Binary::mul); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(a, b, Binary::div); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return elementwise(a, s, Binary::mul); }
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s) { return elementwise(a, s, Binary::add); }

enum class PadMode { zero, reflect };

struct Conv2dOptions {
  Index stride = 1;
  Index pad_h = 0;
  Index pad_w = 0;
  PadMode pad_mode = PadMode::zero;
  Index groups = 1;

  /// Stride-1 "same" padding for an odd kernel.
  static Conv2dOptions same(Index kernel, Index groups = 1) {
    return Conv2dOptions{1, kernel / 2, kernel / 2, PadMode::zero, groups};
  }
};

/// Cross-correlation (no kernel flip). x: N×C×H×W, weight: O×(C/groups)×KH×KW,
/// bias: undefined or shape (O).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      const Conv2dOptions& options);

enum class Activation { gelu, relu, sigmoid };

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind);

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) { return activation(x, Activation::gelu); }
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) { return activation(x, Activation::relu); }
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) { return activation(x, Activation::sigmoid); }

enum class PoolMode { avg, max };
enum class PoolAxis { spatial, channel };

/// spatial: N×C×H×W -> N×C×1×1; channel: N×C×H×W -> N×1×H×W.
template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& x, PoolMode mode, PoolAxis over);

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis);

/// Normalizes over axis 1 independently at every other position, then applies
/// per-channel gain and offset.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& offset,
                          double eps = 1e-6);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

/// Concatenates NCHW tensors along channels.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts);

/// Channels [start, start + count) of an NCHW tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index start, Index count);

/// N×C×H×W -> N×(C·r²)×(H/r)×(W/r).
template <typename Scalar>
Tensor<Scalar> pixel_unshuffle(const Tensor<Scalar>& x, Index factor);

/// N×(C·r²)×H×W -> N×C×(H·r)×(W·r).
template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& x, Index factor);

/// Pads the bottom and right edges by mirror reflection (edge sample not repeated).
template <typename Scalar>
Tensor<Scalar> pad_reflect(const Tensor<Scalar>& x, Index pad_bottom, Index pad_right);

/// Keeps the top-left height×width window.
template <typename Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& x, Index height, Index width);

/// Bilinear resampling without corner alignment (half-pixel centers).
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width);

/// Transposed (channel) attention over pre-projected q, k, v (all N×C×H×W).
/// Per head, rows are channels and columns are the H·W tokens; q and k rows are
/// L2-normalized when normalize is set; the c×c map is
/// softmax_rows(q kᵀ · temperature[head]) and the output is map · v.
template <typename Scalar>
Tensor<Scalar> channel_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                 const Tensor<Scalar>& temperature, Index heads, bool normalize);

/// Attention maps of channel_attention, one c×c matrix per (sample, head),
/// ordered sample-major. Not recorded.
template <typename Scalar>
std::vector<RowMatrix<Scalar>> channel_attention_maps(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                                      const Tensor<Scalar>& temperature, Index heads,
                                                      bool normalize);

/// Mirror index for reflect padding; folds repeatedly for pads wider than the extent.
Index reflect_index(Index i, Index n);

}  // namespace adair
