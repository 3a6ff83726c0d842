#include "adair/spectral.hpp"

#include <cmath>
#include <numbers>

#include "adair/ops.hpp"

namespace adair {

namespace {

bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

// One-dimensional transform of a fixed length; reused across all lines of a plane.
template <typename Scalar>
class FftPlan {
 public:
  using Complex = std::complex<Scalar>;

  explicit FftPlan(Index n) : n_(n), radix2_(is_power_of_two(n)) {
    if (n <= 0) fail(ErrorKind::UnsupportedSize, "transform length must be positive");
    const Index count = radix2_ ? n / 2 : n;
    twiddle_.resize(static_cast<std::size_t>(std::max<Index>(count, 1)));
    for (Index k = 0; k < count; ++k) {
      const long double angle = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k) /
                                static_cast<long double>(n);
      twiddle_[static_cast<std::size_t>(k)] =
          Complex(static_cast<Scalar>(std::cos(angle)), static_cast<Scalar>(std::sin(angle)));
    }
    if (radix2_) {
      int bits = 0;
      while ((Index(1) << bits) < n) ++bits;
      reversed_.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        Index r = 0;
        for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
        reversed_[static_cast<std::size_t>(i)] = r;
      }
    }
    scratch_.resize(static_cast<std::size_t>(n));
  }

  // In-place transform of n values spaced `stride` apart. Inverse is unnormalized.
  void run(Complex* data, Index stride, bool inverse) {
    if (radix2_) {
      for (Index i = 0; i < n_; ++i) scratch_[static_cast<std::size_t>(reversed_[static_cast<std::size_t>(i)])] = data[i * stride];
      for (Index len = 2; len <= n_; len <<= 1) {
        const Index half = len / 2;
        const Index step = n_ / len;
        for (Index start = 0; start < n_; start += len) {
          for (Index j = 0; j < half; ++j) {
            Complex w = twiddle_[static_cast<std::size_t>(j * step)];
            if (inverse) w = std::conj(w);
            const Complex a = scratch_[static_cast<std::size_t>(start + j)];
            const Complex b = scratch_[static_cast<std::size_t>(start + j + half)] * w;
            scratch_[static_cast<std::size_t>(start + j)] = a + b;
            scratch_[static_cast<std::size_t>(start + j + half)] = a - b;
          }
        }
      }
    } else {
      for (Index k = 0; k < n_; ++k) {
        Complex acc(0, 0);
        for (Index j = 0; j < n_; ++j) {
          Complex w = twiddle_[static_cast<std::size_t>((j * k) % n_)];
          if (inverse) w = std::conj(w);
          acc += data[j * stride] * w;
        }
        scratch_[static_cast<std::size_t>(k)] = acc;
      }
    }
    for (Index i = 0; i < n_; ++i) data[i * stride] = scratch_[static_cast<std::size_t>(i)];
  }

 private:
  Index n_;
  bool radix2_;
  std::vector<Complex> twiddle_;
  std::vector<Index> reversed_;
  std::vector<Complex> scratch_;
};

// Plane-wise 2D transform on an interleaved complex buffer.
template <typename Scalar>
class Fft2Plan {
 public:
  Fft2Plan(Index height, Index width) : height_(height), width_(width), rows_(width), cols_(height) {}

  void run(std::complex<Scalar>* plane, bool inverse) {
    for (Index r = 0; r < height_; ++r) rows_.run(plane + r * width_, 1, inverse);
    for (Index c = 0; c < width_; ++c) cols_.run(plane + c, width_, inverse);
  }

 private:
  Index height_, width_;
  FftPlan<Scalar> rows_, cols_;
};

void require_spatial(const Shape& shape, const char* op) {
  if (shape.size() < 2) fail(ErrorKind::ShapeMismatch, std::string(op) + " needs at least two axes");
  if (shape[shape.size() - 1] <= 0 || shape[shape.size() - 2] <= 0) {
    fail(ErrorKind::UnsupportedSize, std::string(op) + " on empty extent");
  }
}

template <typename Scalar>
ComplexSpectrum<Scalar> roll(const ComplexSpectrum<Scalar>& in, Index shift_h, Index shift_w) {
  ComplexSpectrum<Scalar> out{in.shape, ArrayX<Scalar>(in.re.size()), ArrayX<Scalar>(in.im.size())};
  const Index h = in.height(), w = in.width(), plane = h * w;
  for (Index p = 0; p < in.planes(); ++p) {
    for (Index i = 0; i < h; ++i) {
      const Index oi = ((i + shift_h) % h + h) % h;
      for (Index j = 0; j < w; ++j) {
        const Index oj = ((j + shift_w) % w + w) % w;
        out.re[p * plane + oi * w + oj] = in.re[p * plane + i * w + j];
        out.im[p * plane + oi * w + oj] = in.im[p * plane + i * w + j];
      }
    }
  }
  return out;
}

void require_even(Index h, Index w, const char* op) {
  if (h % 2 != 0 || w % 2 != 0) {
    fail(ErrorKind::OddExtent, std::string(op) + " needs even extents, got " + std::to_string(h) + "x" +
                                   std::to_string(w));
  }
}

// Index of centered (shifted) bin (i, j) in the unshifted layout.
inline Index unshifted(Index i, Index n) { return (i + n / 2) % n; }

template <typename Scalar>
using ComplexPlane = std::vector<std::complex<Scalar>>;

// Forward transform of a real plane into centered layout.
template <typename Scalar>
void centered_spectrum(const Scalar* x, Index h, Index w, Fft2Plan<Scalar>& plan, ComplexPlane<Scalar>& buf,
                       ComplexPlane<Scalar>& centered) {
  for (Index i = 0; i < h * w; ++i) buf[static_cast<std::size_t>(i)] = std::complex<Scalar>(x[i], 0);
  plan.run(buf.data(), false);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      centered[static_cast<std::size_t>(i * w + j)] = buf[static_cast<std::size_t>(unshifted(i, h) * w + unshifted(j, w))];
}

// Real part of the inverse transform of (centered ⊙ mask), accumulated into out.
template <typename Scalar>
void masked_inverse(const ComplexPlane<Scalar>& centered, const MaskArray& mask, Index h, Index w,
                    Fft2Plan<Scalar>& plan, ComplexPlane<Scalar>& buf, Scalar* out, Scalar* max_imag) {
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      buf[static_cast<std::size_t>(unshifted(i, h) * w + unshifted(j, w))] =
          centered[static_cast<std::size_t>(i * w + j)] * static_cast<Scalar>(mask(i, j));
  plan.run(buf.data(), true);
  const Scalar scale = Scalar(1) / Scalar(h * w);
  for (Index i = 0; i < h * w; ++i) {
    out[i] += buf[static_cast<std::size_t>(i)].real() * scale;
    if (max_imag) *max_imag = std::max(*max_imag, std::abs(buf[static_cast<std::size_t>(i)].imag() * scale));
  }
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Separable soft-mask profile along one axis and its derivative w.r.t. the factor.
void soft_profile(double factor, Index n, double k, double tau, std::vector<double>& value,
                  std::vector<double>& slope) {
  value.resize(static_cast<std::size_t>(n));
  slope.resize(static_cast<std::size_t>(n));
  const double half = factor * static_cast<double>(n) / k;
  for (Index i = 0; i < n; ++i) {
    const double d = std::abs(static_cast<double>(i - n / 2));
    const double s = logistic((half + 0.5 - d) / tau);
    value[static_cast<std::size_t>(i)] = s;
    slope[static_cast<std::size_t>(i)] = s * (1.0 - s) * (static_cast<double>(n) / k) / tau;
  }
}

void check_factor(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::InvalidRange, std::string(name) + " must lie in [0,1], got " + std::to_string(v));
}

}  // namespace

template <typename Scalar>
ComplexSpectrum<Scalar> fft2(const Tensor<Scalar>& x) {
  require_spatial(x.shape(), "fft2");
  ComplexSpectrum<Scalar> out{x.shape(), ArrayX<Scalar>(x.numel()), ArrayX<Scalar>(x.numel())};
  const Index h = out.height(), w = out.width(), plane = h * w;
  Fft2Plan<Scalar> plan(h, w);
  ComplexPlane<Scalar> buf(static_cast<std::size_t>(plane));
  for (Index p = 0; p < out.planes(); ++p) {
    for (Index i = 0; i < plane; ++i) buf[static_cast<std::size_t>(i)] = {x.data()[p * plane + i], Scalar(0)};
    plan.run(buf.data(), false);
    for (Index i = 0; i < plane; ++i) {
      out.re[p * plane + i] = buf[static_cast<std::size_t>(i)].real();
      out.im[p * plane + i] = buf[static_cast<std::size_t>(i)].imag();
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ifft2(const ComplexSpectrum<Scalar>& spectrum, Scalar* max_imag) {
  require_spatial(spectrum.shape, "ifft2");
  const Index h = spectrum.height(), w = spectrum.width(), plane = h * w;
  Fft2Plan<Scalar> plan(h, w);
  ComplexPlane<Scalar> buf(static_cast<std::size_t>(plane));
  ArrayX<Scalar> out(spectrum.re.size());
  const Scalar scale = Scalar(1) / Scalar(plane);
  Scalar worst = 0;
  for (Index p = 0; p < spectrum.planes(); ++p) {
    for (Index i = 0; i < plane; ++i) buf[static_cast<std::size_t>(i)] = {spectrum.re[p * plane + i], spectrum.im[p * plane + i]};
    plan.run(buf.data(), true);
    for (Index i = 0; i < plane; ++i) {
      out[p * plane + i] = buf[static_cast<std::size_t>(i)].real() * scale;
      worst = std::max(worst, std::abs(buf[static_cast<std::size_t>(i)].imag() * scale));
    }
  }
  if (max_imag) *max_imag = worst;
  return Tensor<Scalar>(spectrum.shape, std::move(out));
}

template <typename Scalar>
ComplexSpectrum<Scalar> fftshift(const ComplexSpectrum<Scalar>& spectrum) {
  require_spatial(spectrum.shape, "fftshift");
  require_even(spectrum.height(), spectrum.width(), "fftshift");
  return roll(spectrum, spectrum.height() / 2, spectrum.width() / 2);
}

template <typename Scalar>
ComplexSpectrum<Scalar> ifftshift(const ComplexSpectrum<Scalar>& spectrum) {
  require_spatial(spectrum.shape, "ifftshift");
  require_even(spectrum.height(), spectrum.width(), "ifftshift");
  return roll(spectrum, -(spectrum.height() / 2), -(spectrum.width() / 2));
}

template <typename Scalar>
ComplexSpectrum<Scalar> dft2_oracle(const Tensor<Scalar>& x) {
  require_spatial(x.shape(), "dft2_oracle");
  ComplexSpectrum<Scalar> out{x.shape(), ArrayX<Scalar>(x.numel()), ArrayX<Scalar>(x.numel())};
  const Index h = out.height(), w = out.width(), plane = h * w;
  const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
  for (Index p = 0; p < out.planes(); ++p) {
    for (Index u = 0; u < h; ++u) {
      for (Index v = 0; v < w; ++v) {
        long double re = 0, im = 0;
        for (Index y = 0; y < h; ++y) {
          for (Index xx = 0; xx < w; ++xx) {
            // Reduce the phase exactly in integers before touching floating point.
            const long double phase = static_cast<long double>((u * y) % h) / h + static_cast<long double>((v * xx) % w) / w;
            const long double value = x.data()[p * plane + y * w + xx];
            re += value * std::cos(two_pi * phase);
            im -= value * std::sin(two_pi * phase);
          }
        }
        out.re[p * plane + u * w + v] = static_cast<Scalar>(re);
        out.im[p * plane + u * w + v] = static_cast<Scalar>(im);
      }
    }
  }
  return out;
}

FrequencyMask build_frequency_masks(double alpha, double beta, Index height, Index width, double k, MaskMode mode,
                                    double tau) {
  check_factor(alpha, "alpha");
  check_factor(beta, "beta");
  require_even(height, width, "build_frequency_masks");
  if (!(k > 0)) fail(ErrorKind::InvalidRange, "k must be positive");
  FrequencyMask mask;
  if (mode == MaskMode::hard) {
    const auto a = static_cast<Index>(std::round(alpha * static_cast<double>(height) / k));
    const auto b = static_cast<Index>(std::round(beta * static_cast<double>(width) / k));
    mask = hard_mask_from_half_sides(height, width, a, b);
  } else {
    if (!(tau > 0)) fail(ErrorKind::InvalidRange, "tau must be positive");
    std::vector<double> rows, cols, unused;
    soft_profile(alpha, height, k, tau, rows, unused);
    soft_profile(beta, width, k, tau, cols, unused);
    mask.low.resize(height, width);
    for (Index i = 0; i < height; ++i)
      for (Index j = 0; j < width; ++j) mask.low(i, j) = rows[static_cast<std::size_t>(i)] * cols[static_cast<std::size_t>(j)];
    mask.high = 1.0 - mask.low;
  }
  mask.alpha = alpha;
  mask.beta = beta;
  mask.k = k;
  mask.mode = mode;
  mask.tau = tau;
  return mask;
}

FrequencyMask hard_mask_from_half_sides(Index height, Index width, Index half_h, Index half_w) {
  require_even(height, width, "hard_mask_from_half_sides");
  if (half_h < 0 || half_w < 0) fail(ErrorKind::InvalidRange, "negative half-side");
  FrequencyMask mask;
  mask.mode = MaskMode::hard;
  mask.low = MaskArray::Zero(height, width);
  const Index r0 = std::max<Index>(0, height / 2 - half_h), r1 = std::min<Index>(height - 1, height / 2 + half_h);
  const Index c0 = std::max<Index>(0, width / 2 - half_w), c1 = std::min<Index>(width - 1, width / 2 + half_w);
  mask.low.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setOnes();
  mask.high = 1.0 - mask.low;
  return mask;
}

template <typename Scalar>
Tensor<Scalar> mask_apply_invert(const ComplexSpectrum<Scalar>& centered, const MaskArray& mask, Scalar* max_imag) {
  require_spatial(centered.shape, "mask_apply_invert");
  const Index h = centered.height(), w = centered.width(), plane = h * w;
  if (mask.rows() != h || mask.cols() != w) fail(ErrorKind::ShapeMismatch, "mask extent differs from spectrum");
  Fft2Plan<Scalar> plan(h, w);
  ComplexPlane<Scalar> spec(static_cast<std::size_t>(plane)), buf(static_cast<std::size_t>(plane));
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(centered.re.size());
  Scalar worst = 0;
  for (Index p = 0; p < centered.planes(); ++p) {
    for (Index i = 0; i < plane; ++i) spec[static_cast<std::size_t>(i)] = {centered.re[p * plane + i], centered.im[p * plane + i]};
    masked_inverse(spec, mask, h, w, plan, buf, out.data() + p * plane, &worst);
  }
  if (max_imag) *max_imag = worst;
  return Tensor<Scalar>(centered.shape, std::move(out));
}

template <typename Scalar>
FrequencySplit<Scalar> frequency_split(const Tensor<Scalar>& p, const Tensor<Scalar>& factors,
                                       const SplitOptions& options) {
  if (p.rank() != 4) fail(ErrorKind::ShapeMismatch, "frequency_split expects N×C×H×W");
  const Index n = p.dim(0), c = p.dim(1), h = p.dim(2), w = p.dim(3), plane = h * w;
  require_even(h, w, "frequency_split");
  const bool learned = !options.fixed_half_side && !options.all_pass_low;
  if (learned && (!factors.defined() || factors.numel() != 2 * n)) {
    fail(ErrorKind::ShapeMismatch, "frequency_split needs two factors per sample");
  }

  struct Cache {
    std::vector<MaskArray> masks;                      // per sample, low mask
    std::vector<std::vector<double>> rows, cols;       // soft profiles
    std::vector<std::vector<double>> row_slopes, col_slopes;
    std::vector<ComplexPlane<Scalar>> spectra;         // centered, per (sample, channel)
  };
  auto cache = std::make_shared<Cache>();
  for (Index b = 0; b < n; ++b) {
    MaskArray low;
    if (options.all_pass_low) {
      low = MaskArray::Ones(h, w);
    } else if (options.fixed_half_side) {
      low = hard_mask_from_half_sides(h, w, *options.fixed_half_side, *options.fixed_half_side).low;
    } else {
      const double alpha = static_cast<double>(factors.data()[2 * b]);
      const double beta = static_cast<double>(factors.data()[2 * b + 1]);
      if (options.mode == MaskMode::hard) {
        low = build_frequency_masks(alpha, beta, h, w, options.k, MaskMode::hard).low;
      } else {
        check_factor(alpha, "alpha");
        check_factor(beta, "beta");
        std::vector<double> rows, cols, rs, cs;
        soft_profile(alpha, h, options.k, options.tau, rows, rs);
        soft_profile(beta, w, options.k, options.tau, cols, cs);
        low.resize(h, w);
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) low(i, j) = rows[static_cast<std::size_t>(i)] * cols[static_cast<std::size_t>(j)];
        cache->rows.push_back(std::move(rows));
        cache->cols.push_back(std::move(cols));
        cache->row_slopes.push_back(std::move(rs));
        cache->col_slopes.push_back(std::move(cs));
      }
    }
    cache->masks.push_back(std::move(low));
  }
  const bool soft_grad = learned && options.mode == MaskMode::soft;

  Fft2Plan<Scalar> plan(h, w);
  ComplexPlane<Scalar> buf(static_cast<std::size_t>(plane)), centered(static_cast<std::size_t>(plane));
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(2 * p.numel());
  for (Index b = 0; b < n; ++b) {
    const MaskArray& low = cache->masks[static_cast<std::size_t>(b)];
    const MaskArray high = 1.0 - low;
    for (Index ch = 0; ch < c; ++ch) {
      centered_spectrum(p.data().data() + (b * c + ch) * plane, h, w, plan, buf, centered);
      masked_inverse(centered, low, h, w, plan, buf, out.data() + (b * 2 * c + ch) * plane, static_cast<Scalar*>(nullptr));
      masked_inverse(centered, high, h, w, plan, buf, out.data() + (b * 2 * c + c + ch) * plane, static_cast<Scalar*>(nullptr));
      if (soft_grad) cache->spectra.push_back(centered);
    }
  }

  std::vector<Tensor<Scalar>> inputs{p};
  if (soft_grad) inputs.push_back(factors);
  Tensor<Scalar> both = finish_op<Scalar>(
      Tensor<Scalar>({n, 2 * c, h, w}, std::move(out)), std::move(inputs),
      [cache, n, c, h, w, plane, soft_grad](const ArrayX<Scalar>& g, std::span<ArrayX<Scalar>* const> gi) {
        Fft2Plan<Scalar> plan(h, w);
        ComplexPlane<Scalar> buf(static_cast<std::size_t>(plane)), g_low(static_cast<std::size_t>(plane)),
            g_high(static_cast<std::size_t>(plane));
        for (Index b = 0; b < n; ++b) {
          const MaskArray& low = cache->masks[static_cast<std::size_t>(b)];
          const MaskArray high = 1.0 - low;
          MaskArray mask_grad = MaskArray::Zero(h, w);
          for (Index ch = 0; ch < c; ++ch) {
            centered_spectrum(g.data() + (b * 2 * c + ch) * plane, h, w, plan, buf, g_low);
            centered_spectrum(g.data() + (b * 2 * c + c + ch) * plane, h, w, plan, buf, g_high);
            // The masked inverse is self-adjoint on real planes.
            if (gi[0]) {
              Scalar* dst = gi[0]->data() + (b * c + ch) * plane;
              masked_inverse(g_low, low, h, w, plan, buf, dst, static_cast<Scalar*>(nullptr));
              masked_inverse(g_high, high, h, w, plan, buf, dst, static_cast<Scalar*>(nullptr));
            }
            if (soft_grad && gi[1]) {
              const auto& spec = cache->spectra[static_cast<std::size_t>(b * c + ch)];
              for (Index i = 0; i < plane; ++i) {
                const auto diff = g_low[static_cast<std::size_t>(i)] - g_high[static_cast<std::size_t>(i)];
                mask_grad(i / w, i % w) +=
                    static_cast<double>((spec[static_cast<std::size_t>(i)] * std::conj(diff)).real()) / static_cast<double>(plane);
              }
            }
          }
          if (soft_grad && gi[1]) {
            const auto& rows = cache->rows[static_cast<std::size_t>(b)];
            const auto& cols = cache->cols[static_cast<std::size_t>(b)];
            const auto& rs = cache->row_slopes[static_cast<std::size_t>(b)];
            const auto& cs = cache->col_slopes[static_cast<std::size_t>(b)];
            double d_alpha = 0, d_beta = 0;
            for (Index i = 0; i < h; ++i) {
              for (Index j = 0; j < w; ++j) {
                d_alpha += mask_grad(i, j) * rs[static_cast<std::size_t>(i)] * cols[static_cast<std::size_t>(j)];
                d_beta += mask_grad(i, j) * rows[static_cast<std::size_t>(i)] * cs[static_cast<std::size_t>(j)];
              }
            }
            (*gi[1])[2 * b] += static_cast<Scalar>(d_alpha);
            (*gi[1])[2 * b + 1] += static_cast<Scalar>(d_beta);
          }
        }
      },
      "frequency_split");
  return {slice_channels(both, 0, c), slice_channels(both, c, c)};
}

#define ADAIR_INSTANTIATE_SPECTRAL(S)                                                               \
  template ComplexSpectrum<S> fft2(const Tensor<S>&);                                               \
  template Tensor<S> ifft2(const ComplexSpectrum<S>&, S*);                                          \
  template ComplexSpectrum<S> fftshift(const ComplexSpectrum<S>&);                                  \
  template ComplexSpectrum<S> ifftshift(const ComplexSpectrum<S>&);                                 \
  template ComplexSpectrum<S> dft2_oracle(const Tensor<S>&);                                        \
  template Tensor<S> mask_apply_invert(const ComplexSpectrum<S>&, const MaskArray&, S*);            \
  template FrequencySplit<S> frequency_split(const Tensor<S>&, const Tensor<S>&, const SplitOptions&);

ADAIR_INSTANTIATE_SPECTRAL(float)
ADAIR_INSTANTIATE_SPECTRAL(double)
ADAIR_INSTANTIATE_SPECTRAL(long double)

#undef ADAIR_INSTANTIATE_SPECTRAL

}  // namespace adair
