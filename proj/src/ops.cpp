#include "adair/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace adair {

namespace {

template <typename Scalar>
using Array = ArrayX<Scalar>;

template <typename Scalar>
using Grads = std::span<Array<Scalar>* const>;

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                                       shape_string(shape));
  }
}

// For every flat index of `shape`, the flat index into a broadcast operand of
// shape `small` (extents 1 or equal).
std::vector<Index> broadcast_map(const Shape& shape, const Shape& small) {
  const std::size_t rank = shape.size();
  std::vector<Index> small_stride(rank, 0);
  Index stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    small_stride[i] = small[i] == 1 ? 0 : stride;
    stride *= small[i];
  }
  const Index n = shape_numel(shape);
  std::vector<Index> map(static_cast<std::size_t>(n));
  std::vector<Index> counter(rank, 0);
  Index pos = 0;
  for (Index i = 0; i < n; ++i) {
    map[static_cast<std::size_t>(i)] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += small_stride[d];
      if (counter[d] < shape[d]) break;
      pos -= small_stride[d] * shape[d];
      counter[d] = 0;
    }
  }
  return map;
}

// Differentiable gather: out[i] = x[index[i]].
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index,
                      const char* op) {
  const Index n = shape_numel(out_shape);
  Array<Scalar> out(n);
  const auto& xd = x.data();
  for (Index i = 0; i < n; ++i) out[i] = xd[(*index)[static_cast<std::size_t>(i)]];
  return finish_op<Scalar>(
      Tensor<Scalar>(std::move(out_shape), std::move(out)), {x},
      [index](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (!gi[0]) return;
        auto& gx = *gi[0];
        for (Index i = 0; i < g.size(); ++i) gx[(*index)[static_cast<std::size_t>(i)]] += g[i];
      },
      op);
}

}  // namespace

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Tensor<Scalar> elementwise(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Binary kind) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size()) {
    fail(ErrorKind::ShapeMismatch, "elementwise ranks differ: " + shape_string(sa) + " vs " + shape_string(sb));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sb[i] != sa[i] && sb[i] != 1) {
      fail(ErrorKind::ShapeMismatch, "cannot broadcast " + shape_string(sb) + " into " + shape_string(sa));
    }
  }
  if (kind == Binary::div && (b.data() == Scalar(0)).any()) fail(ErrorKind::DivisionByZero, "zero divisor");

  const bool same = sa == sb;
  auto map = same ? nullptr : std::make_shared<const std::vector<Index>>(broadcast_map(sa, sb));
  const auto& ad = a.data();
  const auto& bd = b.data();
  const Index n = a.numel();
  Array<Scalar> out(n);
  if (same) {
    switch (kind) {
      case Binary::add: out = ad + bd; break;
      case Binary::sub: out = ad - bd; break;
      case Binary::mul: out = ad * bd; break;
      case Binary::div: out = ad / bd; break;
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      const Scalar x = ad[i];
      const Scalar y = bd[(*map)[static_cast<std::size_t>(i)]];
      switch (kind) {
        case Binary::add: out[i] = x + y; break;
        case Binary::sub: out[i] = x - y; break;
        case Binary::mul: out[i] = x * y; break;
        case Binary::div: out[i] = x / y; break;
      }
    }
  }
  return finish_op<Scalar>(
      Tensor<Scalar>(sa, std::move(out)), {a, b},
      [a, b, kind, map](const Array<Scalar>& g, Grads<Scalar> gi) {
        const auto& ad = a.data();
        const auto& bd = b.data();
        if (!map) {
          if (gi[0]) {
            switch (kind) {
              case Binary::add:
              case Binary::sub: *gi[0] += g; break;
              case Binary::mul: *gi[0] += g * bd; break;
              case Binary::div: *gi[0] += g / bd; break;
            }
          }
          if (gi[1]) {
            switch (kind) {
              case Binary::add: *gi[1] += g; break;
              case Binary::sub: *gi[1] -= g; break;
              case Binary::mul: *gi[1] += g * ad; break;
              case Binary::div: *gi[1] -= g * ad / (bd * bd); break;
            }
          }
          return;
        }
        for (Index i = 0; i < g.size(); ++i) {
          const Index j = (*map)[static_cast<std::size_t>(i)];
          const Scalar y = bd[j];
          if (gi[0]) {
            switch (kind) {
              case Binary::add:
              case Binary::sub: (*gi[0])[i] += g[i]; break;
              case Binary::mul: (*gi[0])[i] += g[i] * y; break;
              case Binary::div: (*gi[0])[i] += g[i] / y; break;
            }
          }
          if (gi[1]) {
            switch (kind) {
              case Binary::add: (*gi[1])[j] += g[i]; break;
              case Binary::sub: (*gi[1])[j] -= g[i]; break;
              case Binary::mul: (*gi[1])[j] += g[i] * ad[i]; break;
              case Binary::div: (*gi[1])[j] -= g[i] * ad[i] / (y * y); break;
            }
          }
        }
      },
      "elementwise");
}

template <typename Scalar>
Tensor<Scalar> elementwise(const Tensor<Scalar>& a, Scalar b, Binary kind) {
  if (kind == Binary::div && b == Scalar(0)) fail(ErrorKind::DivisionByZero, "zero divisor");
  Array<Scalar> out;
  switch (kind) {
    case Binary::add: out = a.data() + b; break;
    case Binary::sub: out = a.data() - b; break;
    case Binary::mul: out = a.data() * b; break;
    case Binary::div: out = a.data() / b; break;
  }
  const Scalar slope = kind == Binary::mul ? b : kind == Binary::div ? Scalar(1) / b : Scalar(1);
  return finish_op<Scalar>(
      Tensor<Scalar>(a.shape(), std::move(out)), {a},
      [slope](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (gi[0]) *gi[0] += g * slope;
      },
      "elementwise");
}

// --------------------------------------------------------------------- conv2d

namespace {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index groups, in_per_group, out_per_group;
  Index out_h, out_w;
  Index stride, pad_h, pad_w;
  PadMode mode;

  Index patch() const { return in_per_group * kernel_h * kernel_w; }
  Index out_plane() const { return out_h * out_w; }
  Index in_plane() const { return height * width; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
  bool depthwise() const {
    return in_per_group == 1 && out_per_group == 1 && mode == PadMode::zero;
  }
};

// Maps an input coordinate to a source index, or -1 for zero padding.
inline Index source_index(Index i, Index n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  return mode == PadMode::zero ? -1 : reflect_index(i, n);
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_per_group; ++c) {
    const Scalar* xc = x + c * g.in_plane();
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        Scalar* row = col + ((c * g.kernel_h + kh) * g.kernel_w + kw) * plane;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = source_index(oh * g.stride + kh - g.pad_h, g.height, g.mode);
          Scalar* dst = row + oh * g.out_w;
          if (ih < 0) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = source_index(ow * g.stride + kw - g.pad_w, g.width, g.mode);
            dst[ow] = iw < 0 ? Scalar(0) : xc[ih * g.width + iw];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* gx) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_per_group; ++c) {
    Scalar* gc = gx + c * g.in_plane();
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Scalar* row = col + ((c * g.kernel_h + kh) * g.kernel_w + kw) * plane;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = source_index(oh * g.stride + kh - g.pad_h, g.height, g.mode);
          if (ih < 0) continue;
          const Scalar* src = row + oh * g.out_w;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = source_index(ow * g.stride + kw - g.pad_w, g.width, g.mode);
            if (iw >= 0) gc[ih * g.width + iw] += src[ow];
          }
        }
      }
    }
  }
}

inline Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

template <typename Scalar>
void depthwise_forward(const Scalar* x, const Scalar* w, const ConvGeometry& g, Scalar* out) {
  for (Index oh = 0; oh < g.out_h; ++oh) {
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      const Index ih = oh * g.stride + kh - g.pad_h;
      if (ih < 0 || ih >= g.height) continue;
      const Scalar* xrow = x + ih * g.width;
      Scalar* orow = out + oh * g.out_w;
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Scalar wv = w[kh * g.kernel_w + kw];
        const Index lo = std::max<Index>(0, ceil_div(g.pad_w - kw, g.stride));
        const Index hi = std::min<Index>(g.out_w, floor_div(g.width - 1 + g.pad_w - kw, g.stride) + 1);
        for (Index ow = lo; ow < hi; ++ow) orow[ow] += wv * xrow[ow * g.stride + kw - g.pad_w];
      }
    }
  }
}

template <typename Scalar>
void depthwise_backward(const Scalar* x, const Scalar* w, const Scalar* gout, const ConvGeometry& g, Scalar* gx,
                        Scalar* gw) {
  for (Index oh = 0; oh < g.out_h; ++oh) {
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      const Index ih = oh * g.stride + kh - g.pad_h;
      if (ih < 0 || ih >= g.height) continue;
      const Scalar* xrow = x + ih * g.width;
      const Scalar* grow = gout + oh * g.out_w;
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Index lo = std::max<Index>(0, ceil_div(g.pad_w - kw, g.stride));
        const Index hi = std::min<Index>(g.out_w, floor_div(g.width - 1 + g.pad_w - kw, g.stride) + 1);
        if (gw) {
          Scalar acc = 0;
          for (Index ow = lo; ow < hi; ++ow) acc += grow[ow] * xrow[ow * g.stride + kw - g.pad_w];
          gw[kh * g.kernel_w + kw] += acc;
        }
        if (gx) {
          const Scalar wv = w[kh * g.kernel_w + kw];
          Scalar* gxrow = gx + ih * g.width;
          for (Index ow = lo; ow < hi; ++ow) gxrow[ow * g.stride + kw - g.pad_w] += wv * grow[ow];
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      const Conv2dOptions& options) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.groups = options.groups;
  g.stride = options.stride;
  g.pad_h = options.pad_h;
  g.pad_w = options.pad_w;
  g.mode = options.pad_mode;
  if (g.groups <= 0 || g.channels % g.groups != 0 || g.out_channels % g.groups != 0) {
    fail(ErrorKind::InvalidGroups, "groups=" + std::to_string(g.groups) + " incompatible with " +
                                       std::to_string(g.channels) + "->" + std::to_string(g.out_channels));
  }
  g.in_per_group = g.channels / g.groups;
  g.out_per_group = g.out_channels / g.groups;
  if (weight.dim(1) != g.in_per_group) {
    fail(ErrorKind::ShapeMismatch, "conv2d weight " + shape_string(weight.shape()) + " for input " +
                                       shape_string(x.shape()) + " with groups " + std::to_string(g.groups));
  }
  if (bias.defined() && bias.numel() != g.out_channels) fail(ErrorKind::ShapeMismatch, "conv2d bias length");
  if (g.stride <= 0) fail(ErrorKind::ShapeMismatch, "conv2d stride must be positive");
  g.out_h = (g.height + 2 * g.pad_h - g.kernel_h) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad_w - g.kernel_w) / g.stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) fail(ErrorKind::ShapeMismatch, "conv2d kernel larger than padded input");

  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;

  Array<Scalar> out = Array<Scalar>::Zero(g.batch * g.out_channels * g.out_plane());
  const Scalar* xd = x.data().data();
  const Scalar* wd = weight.data().data();
  std::vector<Scalar> col;
  if (!g.pointwise() && !g.depthwise()) col.resize(static_cast<std::size_t>(g.patch() * g.out_plane()));
  for (Index n = 0; n < g.batch; ++n) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const Scalar* xg = xd + (n * g.channels + grp * g.in_per_group) * g.in_plane();
      Scalar* og = out.data() + (n * g.out_channels + grp * g.out_per_group) * g.out_plane();
      if (g.depthwise()) {
        depthwise_forward(xg, wd + grp * g.kernel_h * g.kernel_w, g, og);
        continue;
      }
      ConstMap wmat(wd + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch());
      Map omat(og, g.out_per_group, g.out_plane());
      if (g.pointwise()) {
        omat.noalias() = wmat * ConstMap(xg, g.in_per_group, g.in_plane());
      } else {
        im2col(xg, g, col.data());
        omat.noalias() = wmat * ConstMap(col.data(), g.patch(), g.out_plane());
      }
    }
    if (bias.defined()) {
      Map omat(out.data() + n * g.out_channels * g.out_plane(), g.out_channels, g.out_plane());
      omat.colwise() += bias.data().matrix();
    }
  }

  std::vector<Tensor<Scalar>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return finish_op<Scalar>(
      Tensor<Scalar>({g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out)), std::move(inputs),
      [x, weight, g](const Array<Scalar>& grad, Grads<Scalar> gi) {
        Array<Scalar>* gx = gi[0];
        Array<Scalar>* gw = gi[1];
        Array<Scalar>* gb = gi.size() > 2 ? gi[2] : nullptr;
        const Scalar* xd = x.data().data();
        const Scalar* wd = weight.data().data();
        std::vector<Scalar> col;
        std::vector<Scalar> dcol;
        if (!g.pointwise() && !g.depthwise()) {
          col.resize(static_cast<std::size_t>(g.patch() * g.out_plane()));
          dcol.resize(col.size());
        }
        for (Index n = 0; n < g.batch; ++n) {
          for (Index grp = 0; grp < g.groups; ++grp) {
            const Index in_off = (n * g.channels + grp * g.in_per_group) * g.in_plane();
            const Index out_off = (n * g.out_channels + grp * g.out_per_group) * g.out_plane();
            const Scalar* xg = xd + in_off;
            if (g.depthwise()) {
              const Index woff = grp * g.kernel_h * g.kernel_w;
              depthwise_backward(xg, wd + woff, grad.data() + out_off, g, gx ? gx->data() + in_off : nullptr,
                                 gw ? gw->data() + woff : nullptr);
              continue;
            }
            ConstMap gmat(grad.data() + out_off, g.out_per_group, g.out_plane());
            ConstMap wmat(wd + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch());
            if (g.pointwise()) {
              if (gw) {
                Map(gw->data() + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch()).noalias() +=
                    gmat * ConstMap(xg, g.in_per_group, g.in_plane()).transpose();
              }
              if (gx) {
                Map(gx->data() + in_off, g.in_per_group, g.in_plane()).noalias() += wmat.transpose() * gmat;
              }
              continue;
            }
            if (gw) {
              im2col(xg, g, col.data());
              Map(gw->data() + grp * g.out_per_group * g.patch(), g.out_per_group, g.patch()).noalias() +=
                  gmat * ConstMap(col.data(), g.patch(), g.out_plane()).transpose();
            }
            if (gx) {
              Map dmat(dcol.data(), g.patch(), g.out_plane());
              dmat.noalias() = wmat.transpose() * gmat;
              col2im(dcol.data(), g, gx->data() + in_off);
            }
          }
          if (gb) {
            ConstMap gmat(grad.data() + n * g.out_channels * g.out_plane(), g.out_channels, g.out_plane());
            gb->matrix() += gmat.rowwise().sum();
          }
        }
      },
      "conv2d");
}

// ----------------------------------------------------------------- activation

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  const auto& xd = x.data();
  Array<Scalar> out(xd.size());
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  switch (kind) {
    case Activation::gelu:
      for (Index i = 0; i < xd.size(); ++i) out[i] = Scalar(0.5) * xd[i] * (Scalar(1) + std::erf(xd[i] * inv_sqrt2));
      break;
    case Activation::relu:
      out = xd.max(Scalar(0));
      break;
    case Activation::sigmoid:
      for (Index i = 0; i < xd.size(); ++i) out[i] = Scalar(1) / (Scalar(1) + std::exp(-xd[i]));
      break;
  }
  auto result = Tensor<Scalar>(x.shape(), std::move(out));
  auto y = result;  // aliases the output for the sigmoid derivative
  return finish_op<Scalar>(
      result, {x},
      [x, kind, yd = y.data()](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (!gi[0]) return;
        const auto& xd = x.data();
        auto& gx = *gi[0];
        switch (kind) {
          case Activation::gelu: {
            const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
            const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
            for (Index i = 0; i < g.size(); ++i) {
              const Scalar v = xd[i];
              const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
              const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
              gx[i] += g[i] * (cdf + v * pdf);
            }
            break;
          }
          case Activation::relu:
            gx += (xd > Scalar(0)).select(g, Scalar(0));
            break;
          case Activation::sigmoid:
            gx += g * yd * (Scalar(1) - yd);
            break;
        }
      },
      "activation");
}

// ----------------------------------------------------------------------- pool

template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& x, PoolMode mode, PoolAxis over) {
  require_rank(x.shape(), 4, "pool");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (c == 0 || plane == 0) fail(ErrorKind::ShapeMismatch, "pool over empty extent");
  const auto& xd = x.data();
  Shape out_shape = over == PoolAxis::spatial ? Shape{n, c, 1, 1} : Shape{n, 1, x.dim(2), x.dim(3)};
  Array<Scalar> out(shape_numel(out_shape));
  auto argmax = std::make_shared<std::vector<Index>>();
  if (mode == PoolMode::max) argmax->resize(static_cast<std::size_t>(out.size()));
  if (over == PoolAxis::spatial) {
    for (Index i = 0; i < n * c; ++i) {
      auto seg = xd.segment(i * plane, plane);
      if (mode == PoolMode::avg) {
        out[i] = seg.sum() / Scalar(plane);
      } else {
        Index best = 0;
        out[i] = seg.maxCoeff(&best);
        (*argmax)[static_cast<std::size_t>(i)] = i * plane + best;
      }
    }
  } else {
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < plane; ++p) {
        const Index o = b * plane + p;
        Scalar acc = mode == PoolMode::avg ? Scalar(0) : -std::numeric_limits<Scalar>::infinity();
        Index best = 0;
        for (Index ch = 0; ch < c; ++ch) {
          const Index idx = (b * c + ch) * plane + p;
          if (mode == PoolMode::avg) {
            acc += xd[idx];
          } else if (xd[idx] > acc) {
            acc = xd[idx];
            best = idx;
          }
        }
        out[o] = mode == PoolMode::avg ? acc / Scalar(c) : acc;
        if (mode == PoolMode::max) (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return finish_op<Scalar>(
      Tensor<Scalar>(out_shape, std::move(out)), {x},
      [n, c, plane, mode, over, argmax](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (!gi[0]) return;
        auto& gx = *gi[0];
        if (mode == PoolMode::max) {
          for (Index i = 0; i < g.size(); ++i) gx[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
          return;
        }
        if (over == PoolAxis::spatial) {
          for (Index i = 0; i < n * c; ++i) gx.segment(i * plane, plane) += g[i] / Scalar(plane);
        } else {
          for (Index b = 0; b < n; ++b) {
            for (Index ch = 0; ch < c; ++ch) {
              gx.segment((b * c + ch) * plane, plane) += g.segment(b * plane, plane) / Scalar(c);
            }
          }
        }
      },
      "pool");
}

// -------------------------------------------------------------------- softmax

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const Index rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail(ErrorKind::ShapeMismatch, "softmax axis out of range");
  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= x.dim(d);
  for (Index d = axis + 1; d < rank; ++d) inner *= x.dim(d);
  const Index len = x.dim(axis);
  const auto& xd = x.data();
  Array<Scalar> out(xd.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      Scalar peak = -std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < len; ++i) peak = std::max(peak, xd[base + i * inner]);
      Scalar total = 0;
      for (Index i = 0; i < len; ++i) {
        const Scalar e = std::exp(xd[base + i * inner] - peak);
        out[base + i * inner] = e;
        total += e;
      }
      for (Index i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  Tensor<Scalar> result(x.shape(), std::move(out));
  return finish_op<Scalar>(
      result, {x},
      [yd = result.data(), outer, inner, len](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (!gi[0]) return;
        auto& gx = *gi[0];
        for (Index o = 0; o < outer; ++o) {
          for (Index in = 0; in < inner; ++in) {
            const Index base = o * len * inner + in;
            Scalar dot = 0;
            for (Index i = 0; i < len; ++i) dot += g[base + i * inner] * yd[base + i * inner];
            for (Index i = 0; i < len; ++i) {
              const Index k = base + i * inner;
              gx[k] += yd[k] * (g[k] - dot);
            }
          }
        }
      },
      "softmax");
}

// ----------------------------------------------------------------- layer_norm

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& offset,
                          double eps) {
  if (x.rank() < 2) fail(ErrorKind::ShapeMismatch, "layer_norm needs rank >= 2");
  const Index n = x.dim(0), c = x.dim(1);
  const Index plane = x.numel() / std::max<Index>(1, n * c);
  if (gain.numel() != c || offset.numel() != c) {
    fail(ErrorKind::ShapeMismatch, "layer_norm affine length must equal channel count " + std::to_string(c));
  }
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = offset.data();
  Array<Scalar> normed(xd.size());
  Array<Scalar> rstd(n * plane);
  Array<Scalar> out(xd.size());
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < plane; ++p) {
      Scalar mu = 0;
      for (Index ch = 0; ch < c; ++ch) mu += xd[(b * c + ch) * plane + p];
      mu /= Scalar(c);
      Scalar var = 0;
      for (Index ch = 0; ch < c; ++ch) {
        const Scalar d = xd[(b * c + ch) * plane + p] - mu;
        var += d * d;
      }
      var /= Scalar(c);
      const Scalar r = Scalar(1) / std::sqrt(var + Scalar(eps));
      rstd[b * plane + p] = r;
      for (Index ch = 0; ch < c; ++ch) {
        const Index k = (b * c + ch) * plane + p;
        normed[k] = (xd[k] - mu) * r;
        out[k] = normed[k] * gd[ch] + bd[ch];
      }
    }
  }
  return finish_op<Scalar>(
      Tensor<Scalar>(x.shape(), std::move(out)), {x, gain, offset},
      [normed, rstd, gain, n, c, plane](const Array<Scalar>& g, Grads<Scalar> gi) {
        const auto& gd = gain.data();
        for (Index b = 0; b < n; ++b) {
          for (Index p = 0; p < plane; ++p) {
            Scalar sum_d = 0, sum_dn = 0;
            for (Index ch = 0; ch < c; ++ch) {
              const Index k = (b * c + ch) * plane + p;
              const Scalar d = g[k] * gd[ch];
              sum_d += d;
              sum_dn += d * normed[k];
              if (gi[1]) (*gi[1])[ch] += g[k] * normed[k];
              if (gi[2]) (*gi[2])[ch] += g[k];
            }
            if (!gi[0]) continue;
            const Scalar r = rstd[b * plane + p];
            for (Index ch = 0; ch < c; ++ch) {
              const Index k = (b * c + ch) * plane + p;
              const Scalar d = g[k] * gd[ch];
              (*gi[0])[k] += r * (d - sum_d / Scalar(c) - normed[k] * sum_dn / Scalar(c));
            }
          }
        }
      },
      "layer_norm");
}

// ----------------------------------------------------------------- reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  return finish_op<Scalar>(
      Tensor<Scalar>::scalar(x.data().sum()), {x},
      [](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (gi[0]) *gi[0] += g[0];
      },
      "sum");
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.numel() == 0) fail(ErrorKind::EmptyInput, "mean of empty tensor");
  const Scalar scale = Scalar(1) / Scalar(x.numel());
  return finish_op<Scalar>(
      Tensor<Scalar>::scalar(x.data().sum() * scale), {x},
      [scale](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (gi[0]) *gi[0] += g[0] * scale;
      },
      "mean");
}

// ------------------------------------------------------------------ reshuffle

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) fail(ErrorKind::EmptyInput, "concat of nothing");
  for (const auto& p : parts) require_rank(p.shape(), 4, "concat_channels");
  const Index n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  Index total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      fail(ErrorKind::ShapeMismatch, "concat_channels extents differ");
    }
    total += p.dim(1);
  }
  const Index plane = h * w;
  Array<Scalar> out(n * total * plane);
  Index offset = 0;
  std::vector<Index> channel_offsets;
  for (const auto& p : parts) {
    const Index c = p.dim(1);
    channel_offsets.push_back(offset);
    for (Index b = 0; b < n; ++b) {
      out.segment((b * total + offset) * plane, c * plane) = p.data().segment(b * c * plane, c * plane);
    }
    offset += c;
  }
  std::vector<Index> counts;
  for (const auto& p : parts) counts.push_back(p.dim(1));
  return finish_op<Scalar>(
      Tensor<Scalar>({n, total, h, w}, std::move(out)), parts,
      [n, total, plane, channel_offsets, counts](const Array<Scalar>& g, Grads<Scalar> gi) {
        for (std::size_t i = 0; i < gi.size(); ++i) {
          if (!gi[i]) continue;
          const Index c = counts[i];
          for (Index b = 0; b < n; ++b) {
            gi[i]->segment(b * c * plane, c * plane) += g.segment((b * total + channel_offsets[i]) * plane, c * plane);
          }
        }
      },
      "concat_channels");
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index start, Index count) {
  require_rank(x.shape(), 4, "slice_channels");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (start < 0 || count < 0 || start + count > c) fail(ErrorKind::ShapeMismatch, "channel slice out of range");
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * count * plane));
  Index k = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < count; ++ch)
      for (Index p = 0; p < plane; ++p) (*index)[static_cast<std::size_t>(k++)] = (b * c + start + ch) * plane + p;
  return gather<Scalar>(x, {n, count, x.dim(2), x.dim(3)}, index, "slice_channels");
}

template <typename Scalar>
Tensor<Scalar> pixel_unshuffle(const Tensor<Scalar>& x, Index r) {
  require_rank(x.shape(), 4, "pixel_unshuffle");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % r != 0 || w % r != 0) fail(ErrorKind::ShapeMismatch, "pixel_unshuffle extent not divisible");
  const Index oh = h / r, ow = w / r, oc = c * r * r;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  Index k = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < oc; ++ch) {
      const Index src_c = ch / (r * r), i = (ch / r) % r, j = ch % r;
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) (*index)[static_cast<std::size_t>(k++)] = ((b * c + src_c) * h + y * r + i) * w + xx * r + j;
    }
  return gather<Scalar>(x, {n, oc, oh, ow}, index, "pixel_unshuffle");
}

template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& x, Index r) {
  require_rank(x.shape(), 4, "pixel_shuffle");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c % (r * r) != 0) fail(ErrorKind::ShapeMismatch, "pixel_shuffle channels not divisible");
  const Index oc = c / (r * r), oh = h * r, ow = w * r;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  Index k = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < oc; ++ch)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const Index src_c = ch * r * r + (y % r) * r + (xx % r);
          (*index)[static_cast<std::size_t>(k++)] = ((b * c + src_c) * h + y / r) * w + xx / r;
        }
  return gather<Scalar>(x, {n, oc, oh, ow}, index, "pixel_shuffle");
}

template <typename Scalar>
Tensor<Scalar> pad_reflect(const Tensor<Scalar>& x, Index pad_bottom, Index pad_right) {
  require_rank(x.shape(), 4, "pad_reflect");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h + pad_bottom, ow = w + pad_right;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c * oh * ow));
  Index k = 0;
  for (Index p = 0; p < n * c; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx)
        (*index)[static_cast<std::size_t>(k++)] = (p * h + reflect_index(y, h)) * w + reflect_index(xx, w);
  return gather<Scalar>(x, {n, c, oh, ow}, index, "pad_reflect");
}

template <typename Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& x, Index height, Index width) {
  require_rank(x.shape(), 4, "crop");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height > h || width > w) fail(ErrorKind::ShapeMismatch, "crop window larger than input");
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c * height * width));
  Index k = 0;
  for (Index p = 0; p < n * c; ++p)
    for (Index y = 0; y < height; ++y)
      for (Index xx = 0; xx < width; ++xx) (*index)[static_cast<std::size_t>(k++)] = (p * h + y) * w + xx;
  return gather<Scalar>(x, {n, c, height, width}, index, "crop");
}

namespace {

struct LinearTaps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

LinearTaps bilinear_taps(Index in, Index out) {
  LinearTaps t;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min<Index>(lo + 1, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(hi);
    t.frac.push_back(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width) {
  require_rank(x.shape(), 4, "resize_bilinear");
  if (height <= 0 || width <= 0) fail(ErrorKind::ShapeMismatch, "resize to empty extent");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == height && w == width) return x;
  auto ty = std::make_shared<LinearTaps>(bilinear_taps(h, height));
  auto tx = std::make_shared<LinearTaps>(bilinear_taps(w, width));
  const auto& xd = x.data();
  Array<Scalar> out(n * c * height * width);
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* src = xd.data() + p * h * w;
    for (Index y = 0; y < height; ++y) {
      const Scalar fy = Scalar(ty->frac[y]);
      const Scalar* r0 = src + ty->lo[y] * w;
      const Scalar* r1 = src + ty->hi[y] * w;
      for (Index xx = 0; xx < width; ++xx) {
        const Scalar fx = Scalar(tx->frac[xx]);
        const Index a = tx->lo[xx], b = tx->hi[xx];
        const Scalar top = r0[a] * (Scalar(1) - fx) + r0[b] * fx;
        const Scalar bottom = r1[a] * (Scalar(1) - fx) + r1[b] * fx;
        out[(p * height + y) * width + xx] = top * (Scalar(1) - fy) + bottom * fy;
      }
    }
  }
  return finish_op<Scalar>(
      Tensor<Scalar>({n, c, height, width}, std::move(out)), {x},
      [ty, tx, n, c, h, w, height, width](const Array<Scalar>& g, Grads<Scalar> gi) {
        if (!gi[0]) return;
        auto& gx = *gi[0];
        for (Index p = 0; p < n * c; ++p) {
          Scalar* dst = gx.data() + p * h * w;
          for (Index y = 0; y < height; ++y) {
            const Scalar fy = Scalar(ty->frac[y]);
            for (Index xx = 0; xx < width; ++xx) {
              const Scalar fx = Scalar(tx->frac[xx]);
              const Scalar v = g[(p * height + y) * width + xx];
              const Index a = tx->lo[xx], b = tx->hi[xx];
              dst[ty->lo[y] * w + a] += v * (Scalar(1) - fy) * (Scalar(1) - fx);
              dst[ty->lo[y] * w + b] += v * (Scalar(1) - fy) * fx;
              dst[ty->hi[y] * w + a] += v * fy * (Scalar(1) - fx);
              dst[ty->hi[y] * w + b] += v * fy * fx;
            }
          }
        }
      },
      "resize_bilinear");
}

// ---------------------------------------------------------- channel attention

namespace {

constexpr double kNormFloor = 1e-12;

template <typename Scalar>
void check_attention_inputs(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& temperature,
                            Index heads) {
  require_rank(q.shape(), 4, "channel_attention");
  if (k.shape() != q.shape()) fail(ErrorKind::ShapeMismatch, "attention q/k shapes differ");
  if (heads <= 0 || q.dim(1) % heads != 0) {
    fail(ErrorKind::HeadMismatch, std::to_string(heads) + " heads do not divide " + std::to_string(q.dim(1)) +
                                      " channels");
  }
  if (temperature.numel() != heads) fail(ErrorKind::HeadMismatch, "temperature length must equal head count");
}

template <typename Scalar>
struct HeadCache {
  RowMatrix<Scalar> q_hat, k_hat, attn;
  ArrayX<Scalar> q_norm, k_norm;
};

template <typename Scalar>
RowMatrix<Scalar> normalize_rows(const Eigen::Map<const RowMatrix<Scalar>>& m, ArrayX<Scalar>& norms,
                                 bool normalize) {
  RowMatrix<Scalar> out = m;
  norms = ArrayX<Scalar>::Ones(m.rows());
  if (!normalize) return out;
  for (Index i = 0; i < m.rows(); ++i) {
    norms[i] = std::max<Scalar>(m.row(i).norm(), Scalar(kNormFloor));
    out.row(i) /= norms[i];
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> row_softmax(const RowMatrix<Scalar>& s) {
  RowMatrix<Scalar> out(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    const Scalar peak = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> channel_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                 const Tensor<Scalar>& temperature, Index heads, bool normalize) {
  check_attention_inputs(q, k, temperature, heads);
  if (v.shape() != q.shape()) fail(ErrorKind::ShapeMismatch, "attention v shape differs");
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
  const Index n = q.dim(0), c = q.dim(1) / heads, tokens = q.dim(2) * q.dim(3);
  auto cache = std::make_shared<std::vector<HeadCache<Scalar>>>(static_cast<std::size_t>(n * heads));
  Array<Scalar> out(q.numel());
  for (Index b = 0; b < n; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const Index off = (b * heads + h) * c * tokens;
      auto& hc = (*cache)[static_cast<std::size_t>(b * heads + h)];
      hc.q_hat = normalize_rows<Scalar>(ConstMap(q.data().data() + off, c, tokens), hc.q_norm, normalize);
      hc.k_hat = normalize_rows<Scalar>(ConstMap(k.data().data() + off, c, tokens), hc.k_norm, normalize);
      hc.attn = row_softmax<Scalar>((hc.q_hat * hc.k_hat.transpose()) * temperature.data()[h]);
      Eigen::Map<RowMatrix<Scalar>>(out.data() + off, c, tokens).noalias() =
          hc.attn * ConstMap(v.data().data() + off, c, tokens);
    }
  }
  return finish_op<Scalar>(
      Tensor<Scalar>(q.shape(), std::move(out)), {q, k, v, temperature},
      [cache, v, temperature, n, heads, c, tokens, normalize](const Array<Scalar>& g, Grads<Scalar> gi) {
        using Map = Eigen::Map<RowMatrix<Scalar>>;
        for (Index b = 0; b < n; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const Index off = (b * heads + h) * c * tokens;
            const auto& hc = (*cache)[static_cast<std::size_t>(b * heads + h)];
            ConstMap gout(g.data() + off, c, tokens);
            ConstMap vmat(v.data().data() + off, c, tokens);
            if (gi[2]) Map(gi[2]->data() + off, c, tokens).noalias() += hc.attn.transpose() * gout;
            if (!gi[0] && !gi[1] && !gi[3]) continue;
            const RowMatrix<Scalar> d_attn = gout * vmat.transpose();
            RowMatrix<Scalar> d_logits = hc.attn.cwiseProduct(d_attn);
            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = d_logits.rowwise().sum();
            d_logits -= hc.attn.cwiseProduct(row_dot.replicate(1, c));
            const Scalar t = temperature.data()[h];
            if (gi[3]) (*gi[3])[h] += (d_logits.cwiseProduct(hc.q_hat * hc.k_hat.transpose())).sum();
            auto unnormalize = [normalize](const RowMatrix<Scalar>& d_hat, const RowMatrix<Scalar>& hat,
                                           const ArrayX<Scalar>& norms, Scalar* dst, Index rows, Index cols) {
              Map d(dst, rows, cols);
              for (Index i = 0; i < rows; ++i) {
                if (!normalize) {
                  d.row(i) += d_hat.row(i);
                } else if (norms[i] > Scalar(kNormFloor)) {
                  const Scalar proj = hat.row(i).dot(d_hat.row(i));
                  d.row(i) += (d_hat.row(i) - hat.row(i) * proj) / norms[i];
                } else {
                  d.row(i) += d_hat.row(i) / norms[i];
                }
              }
            };
            if (gi[0]) {
              const RowMatrix<Scalar> d_qhat = t * d_logits * hc.k_hat;
              unnormalize(d_qhat, hc.q_hat, hc.q_norm, gi[0]->data() + off, c, tokens);
            }
            if (gi[1]) {
              const RowMatrix<Scalar> d_khat = t * d_logits.transpose() * hc.q_hat;
              unnormalize(d_khat, hc.k_hat, hc.k_norm, gi[1]->data() + off, c, tokens);
            }
          }
        }
      },
      "channel_attention");
}

template <typename Scalar>
std::vector<RowMatrix<Scalar>> channel_attention_maps(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                                      const Tensor<Scalar>& temperature, Index heads,
                                                      bool normalize) {
  check_attention_inputs(q, k, temperature, heads);
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
  const Index n = q.dim(0), c = q.dim(1) / heads, tokens = q.dim(2) * q.dim(3);
  std::vector<RowMatrix<Scalar>> maps;
  for (Index b = 0; b < n; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const Index off = (b * heads + h) * c * tokens;
      ArrayX<Scalar> qn, kn;
      const auto q_hat = normalize_rows<Scalar>(ConstMap(q.data().data() + off, c, tokens), qn, normalize);
      const auto k_hat = normalize_rows<Scalar>(ConstMap(k.data().data() + off, c, tokens), kn, normalize);
      maps.push_back(row_softmax<Scalar>((q_hat * k_hat.transpose()) * temperature.data()[h]));
    }
  }
  return maps;
}

#define ADAIR_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> elementwise(const Tensor<S>&, const Tensor<S>&, Binary);                                 \
  template Tensor<S> elementwise(const Tensor<S>&, S, Binary);                                                \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Conv2dOptions&);      \
  template Tensor<S> activation(const Tensor<S>&, Activation);                                                \
  template Tensor<S> pool(const Tensor<S>&, PoolMode, PoolAxis);                                              \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                                        \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);                \
  template Tensor<S> sum(const Tensor<S>&);                                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                                  \
  template Tensor<S> concat_channels(const std::vector<Tensor<S>>&);                                          \
  template Tensor<S> slice_channels(const Tensor<S>&, Index, Index);                                          \
  template Tensor<S> pixel_unshuffle(const Tensor<S>&, Index);                                                \
  template Tensor<S> pixel_shuffle(const Tensor<S>&, Index);                                                  \
  template Tensor<S> pad_reflect(const Tensor<S>&, Index, Index);                                             \
  template Tensor<S> crop(const Tensor<S>&, Index, Index);                                                    \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                                         \
  template Tensor<S> channel_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                       Index, bool);                                                          \
  template std::vector<RowMatrix<S>> channel_attention_maps(const Tensor<S>&, const Tensor<S>&,               \
                                                            const Tensor<S>&, Index, bool);

ADAIR_INSTANTIATE_OPS(float)
ADAIR_INSTANTIATE_OPS(double)
ADAIR_INSTANTIATE_OPS(long double)

#undef ADAIR_INSTANTIATE_OPS

}  // namespace adair
