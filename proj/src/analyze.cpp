#include "adair/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adair/config.hpp"
#include "adair/spectral.hpp"

namespace adair {

Tensor<double> centered_magnitude(const Image& residual) {
  if (residual.rank() != 3 || residual.numel() == 0) {
    fail(ErrorKind::ShapeMismatch, "expected a non-empty C×H×W residual, got " + shape_string(residual.shape()));
  }
  const Index c = residual.dim(0), h = residual.dim(1), w = residual.dim(2);
  const auto spec = fft2(residual);
  const double scale = 1.0 / static_cast<double>(h * w * c);
  Tensor<double> out({h, w});
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index src = (ch * h + y) * w + x;
        const Index dst = ((y + h / 2) % h) * w + (x + w / 2) % w;
        out.data_mut()[dst] += std::hypot(spec.re[src], spec.im[src]) * scale;
      }
  return out;
}

Tensor<double> resize_about_center(const Tensor<double>& plane, Index size) {
  if (plane.rank() != 2) fail(ErrorKind::ShapeMismatch, "expected an H×W plane, got " + shape_string(plane.shape()));
  const Index h = plane.dim(0), w = plane.dim(1);
  if (h == size && w == size) return plane.detach();
  const double sy = static_cast<double>(h) / static_cast<double>(size);
  const double sx = static_cast<double>(w) / static_cast<double>(size);
  const Index center = size / 2;
  Tensor<double> out({size, size});
  auto at = [&](Index y, Index x) { return plane.data()[std::clamp<Index>(y, 0, h - 1) * w + std::clamp<Index>(x, 0, w - 1)]; };
  for (Index i = 0; i < size; ++i) {
    const double fy = static_cast<double>(h / 2) + static_cast<double>(i - center) * sy;
    const Index y0 = static_cast<Index>(std::floor(fy));
    const double ty = fy - static_cast<double>(y0);
    for (Index j = 0; j < size; ++j) {
      const double fx = static_cast<double>(w / 2) + static_cast<double>(j - center) * sx;
      const Index x0 = static_cast<Index>(std::floor(fx));
      const double tx = fx - static_cast<double>(x0);
      out.data_mut()[i * size + j] = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                                     ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

std::vector<double> square_curve(const Tensor<double>& grid, SquareMean mode) {
  if (grid.rank() != 2 || grid.dim(0) != kCurveGrid || grid.dim(1) != kCurveGrid) {
    fail(ErrorKind::ShapeMismatch, "square_curve expects a 320×320 grid, got " + shape_string(grid.shape()));
  }
  const Index c = kCurveGrid / 2;
  auto v = [&](Index y, Index x) { return grid.data()[y * kCurveGrid + x]; };
  std::vector<double> curve;
  double filled_sum = 0;
  Index filled_count = 0;
  for (Index L = 1; L <= kCurveLength; ++L) {
    const Index lo = c - L, hi = c + L - 1;
    double ring = 0;
    for (Index x = lo; x <= hi; ++x) ring += v(lo, x) + v(hi, x);
    for (Index y = lo + 1; y < hi; ++y) ring += v(y, lo) + v(y, hi);
    const Index ring_count = 4 * (2 * L) - 4;
    filled_sum += ring;
    filled_count += ring_count;
    curve.push_back(mode == SquareMean::perimeter ? ring / static_cast<double>(ring_count)
                                                  : filled_sum / static_cast<double>(filled_count));
  }
  return curve;
}

double coefficient_of_variation(const std::vector<double>& values, Index first, Index last) {
  if (first < 1 || last > static_cast<Index>(values.size()) || first > last) {
    fail(ErrorKind::InvalidRange, "bad L range for coefficient of variation");
  }
  const auto b = values.begin() + (first - 1), e = values.begin() + last;
  const double n = static_cast<double>(last - first + 1);
  const double mean = std::accumulate(b, e, 0.0) / n;
  double var = 0;
  for (auto it = b; it != e; ++it) var += (*it - mean) * (*it - mean);
  if (mean == 0) return 0;
  return std::sqrt(var / n) / mean;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorKind::ShapeMismatch, "spearman needs two equal series of length ≥ 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1) / 2;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) return 0;
  return sxy / std::sqrt(sxx * syy);
}

CurveReport residual_spectrum_curve(const Image& clean, const Image& degraded, SquareMean mode, std::string tag) {
  if (clean.shape() != degraded.shape()) {
    fail(ErrorKind::ShapeMismatch, "clean " + shape_string(clean.shape()) + " vs degraded " + shape_string(degraded.shape()));
  }
  const Image residual(clean.shape(), clean.data() - degraded.data());
  CurveReport r;
  r.tag = std::move(tag);
  r.curve = square_curve(resize_about_center(centered_magnitude(residual)), mode);
  r.flatness = coefficient_of_variation(r.curve, 8, kCurveLength);
  std::vector<double> ls(r.curve.size());
  std::iota(ls.begin(), ls.end(), 1.0);
  r.monotonicity = spearman(ls, r.curve);
  return r;
}

std::string curve_csv(const CurveReport& report) {
  std::string out = "L,mean_magnitude\n";
  for (std::size_t i = 0; i < report.curve.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(report.curve[i]) + "\n";
  }
  return out;
}

std::string curve_svg(const std::vector<CurveReport>& reports) {
  constexpr double width = 640, height = 400, left = 60, right = 20, top = 20, bottom = 50;
  const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double ymax = 0;
  for (const auto& r : reports)
    for (double v : r.curve) ymax = std::max(ymax, std::log1p(v));
  if (ymax <= 0) ymax = 1;
  const double pw = width - left - right, ph = height - top - bottom;
  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">L</text>\n"
      << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\">log(1 + mean magnitude)</text>\n";
  for (int tick : {1, 40, 80, 120, 160}) {
    const double x = left + pw * (tick - 1) / (kCurveLength - 1.0);
    svg << "<text x=\"" << x << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\" font-size=\"11\">" << tick
        << "</text>\n";
  }
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    svg << "<polyline fill=\"none\" stroke=\"" << colours[k % 6] << "\" points=\"";
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      const double x = left + pw * static_cast<double>(i) / (static_cast<double>(r.curve.size()) - 1.0);
      const double y = top + ph * (1.0 - std::log1p(r.curve[i]) / ymax);
      svg << (i ? " " : "") << x << "," << y;
    }
    svg << "\"/>\n";
    if (!r.tag.empty()) {
      svg << "<text x=\"" << left + pw - 8 << "\" y=\"" << top + 16 + 16 * static_cast<double>(k)
          << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << colours[k % 6] << "\">" << r.tag << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace adair
