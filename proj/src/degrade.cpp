#include "adair/degrade.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>

#include "adair/ops.hpp"

namespace adair {

namespace {

using json = nlohmann::json;

void require_image(const Image& img, const char* op) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": expected 3×H×W image, got " + shape_string(img.shape()));
  }
}

Image clipped(Image img) {
  img.data_mut() = img.data().cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

double bilinear(const Eigen::ArrayXXd& grid, double y, double x) {
  const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(y)), 0, grid.rows() - 1);
  const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(x)), 0, grid.cols() - 1);
  const Index y1 = std::min<Index>(y0 + 1, grid.rows() - 1), x1 = std::min<Index>(x0 + 1, grid.cols() - 1);
  const double fy = std::clamp(y - static_cast<double>(y0), 0.0, 1.0);
  const double fx = std::clamp(x - static_cast<double>(x0), 0.0, 1.0);
  return (1 - fy) * ((1 - fx) * grid(y0, x0) + fx * grid(y0, x1)) + fy * ((1 - fx) * grid(y1, x0) + fx * grid(y1, x1));
}

const char* kind_name(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::noise: return "noise";
    case DegradationKind::haze: return "haze";
    case DegradationKind::rain: return "rain";
    case DegradationKind::blur: return "blur";
    case DegradationKind::lowlight: return "lowlight";
    case DegradationKind::composite: return "composite";
  }
  return "?";
}

json spec_to_json(const DegradationSpec& s) {
  json j;
  j["kind"] = kind_name(s.kind);
  switch (s.kind) {
    case DegradationKind::noise: j["sigma"] = s.sigma; break;
    case DegradationKind::haze:
      j["beta"] = s.beta_scatter;
      j["airlight"] = s.airlight;
      break;
    case DegradationKind::rain:
      j["count"] = s.rain.count;
      j["length"] = s.rain.length;
      j["angle"] = s.rain.angle;
      j["width"] = s.rain.width;
      j["intensity"] = s.rain.intensity;
      break;
    case DegradationKind::blur:
      j["kernel"] = {{"type", s.kernel.type},   {"size", s.kernel.size},
                     {"sigma", s.kernel.sigma}, {"angle", s.kernel.angle},
                     {"horizontal", s.kernel.horizontal}};
      break;
    case DegradationKind::lowlight:
      j["gamma"] = s.gamma;
      j["scale"] = s.scale;
      break;
    case DegradationKind::composite:
      j["parts"] = json::array();
      for (const auto& p : s.parts) j["parts"].push_back(spec_to_json(p));
      break;
  }
  return j;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("degradation field '") + key + "': " + e.what());
  }
}

DegradationSpec spec_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    fail(ErrorKind::InvalidConfig, "degradation spec needs a string 'kind'");
  }
  const std::string kind = j["kind"];
  DegradationSpec s;
  std::vector<std::string> allowed{"kind"};
  if (kind == "noise") {
    s.kind = DegradationKind::noise;
    allowed.insert(allowed.end(), {"sigma"});
    read_field(j, "sigma", s.sigma);
  } else if (kind == "haze") {
    s.kind = DegradationKind::haze;
    allowed.insert(allowed.end(), {"beta", "airlight"});
    read_field(j, "beta", s.beta_scatter);
    read_field(j, "airlight", s.airlight);
  } else if (kind == "rain") {
    s.kind = DegradationKind::rain;
    allowed.insert(allowed.end(), {"count", "length", "angle", "width", "intensity"});
    read_field(j, "count", s.rain.count);
    read_field(j, "length", s.rain.length);
    read_field(j, "angle", s.rain.angle);
    read_field(j, "width", s.rain.width);
    read_field(j, "intensity", s.rain.intensity);
  } else if (kind == "blur") {
    s.kind = DegradationKind::blur;
    allowed.insert(allowed.end(), {"kernel"});
    if (j.contains("kernel")) {
      const auto& k = j["kernel"];
      if (!k.is_object()) fail(ErrorKind::InvalidConfig, "blur 'kernel' must be an object");
      for (const auto& [key, value] : k.items()) {
        if (key != "type" && key != "size" && key != "sigma" && key != "angle" && key != "horizontal") {
          fail(ErrorKind::InvalidConfig, "unknown kernel field '" + key + "'");
        }
      }
      read_field(k, "type", s.kernel.type);
      read_field(k, "size", s.kernel.size);
      read_field(k, "sigma", s.kernel.sigma);
      read_field(k, "angle", s.kernel.angle);
      read_field(k, "horizontal", s.kernel.horizontal);
    }
  } else if (kind == "lowlight") {
    s.kind = DegradationKind::lowlight;
    allowed.insert(allowed.end(), {"gamma", "scale"});
    read_field(j, "gamma", s.gamma);
    read_field(j, "scale", s.scale);
  } else if (kind == "composite") {
    s.kind = DegradationKind::composite;
    allowed.insert(allowed.end(), {"parts"});
    if (j.contains("parts")) {
      if (!j["parts"].is_array()) fail(ErrorKind::InvalidConfig, "composite 'parts' must be an array");
      for (const auto& p : j["parts"]) s.parts.push_back(spec_from_json(p));
    }
  } else {
    fail(ErrorKind::InvalidConfig, "unknown degradation kind '" + kind + "'");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorKind::InvalidConfig, "unknown field '" + key + "' for " + kind);
    }
  }
  s.validate();
  return s;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer over a mix of both words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Image add_gaussian_noise(const Image& img, double sigma_255, std::uint64_t seed) {
  require_image(img, "add_gaussian_noise");
  if (!(sigma_255 >= 0)) fail(ErrorKind::InvalidRange, "noise sigma must be non-negative");
  if (sigma_255 == 0) return img.detach();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma_255 / 255.0);
  Image out = img.detach();
  for (Index i = 0; i < out.numel(); ++i) out.data_mut()[i] += dist(rng);
  return clipped(std::move(out));
}

Tensor<double> make_depth_map(Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::ArrayXXd coarse(4, 4);
  for (Index i = 0; i < 16; ++i) coarse(i / 4, i % 4) = unit(rng);
  Tensor<double> depth({height, width});
  for (Index y = 0; y < height; ++y) {
    const double ramp = height > 1 ? 1.0 - 0.8 * static_cast<double>(y) / static_cast<double>(height - 1) : 1.0;
    for (Index x = 0; x < width; ++x) {
      const double gy = height > 1 ? 3.0 * static_cast<double>(y) / static_cast<double>(height - 1) : 0.0;
      const double gx = width > 1 ? 3.0 * static_cast<double>(x) / static_cast<double>(width - 1) : 0.0;
      depth.data_mut()[y * width + x] = std::max(0.0, ramp + 0.15 * bilinear(coarse, gy, gx));
    }
  }
  return depth;
}

Image synth_haze(const Image& img, double beta_scatter, double airlight, const Tensor<double>& depth) {
  require_image(img, "synth_haze");
  if (!(beta_scatter >= 0)) fail(ErrorKind::InvalidRange, "beta_scatter must be non-negative");
  if (!(airlight >= 0 && airlight <= 1)) fail(ErrorKind::InvalidRange, "airlight must lie in [0,1]");
  const Index h = img.dim(1), w = img.dim(2);
  if (depth.numel() != h * w) {
    fail(ErrorKind::ShapeMismatch, "depth " + shape_string(depth.shape()) + " does not match image " +
                                       shape_string(img.shape()));
  }
  if ((depth.data() < 0).any()) fail(ErrorKind::InvalidRange, "depth must be non-negative");
  const ArrayX<double> t = (-beta_scatter * depth.data()).exp();
  Image out = img.detach();
  for (Index c = 0; c < 3; ++c) {
    auto seg = out.data_mut().segment(c * h * w, h * w);
    seg = seg * t + airlight * (1.0 - t);
  }
  return out;
}

Image synth_rain(const Image& img, const RainStreaks& s, std::uint64_t seed) {
  require_image(img, "synth_rain");
  if (s.count < 0) fail(ErrorKind::InvalidRange, "rain count must be non-negative");
  if (s.count == 0) return img.detach();
  if (!(s.length > 0) || !(s.width > 0) || !(s.intensity >= 0)) {
    fail(ErrorKind::InvalidRange, "rain length, width must be positive and intensity non-negative");
  }
  const Index h = img.dim(1), w = img.dim(2);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::ArrayXXd layer = Eigen::ArrayXXd::Zero(h, w);
  const double deg = std::numbers::pi / 180.0;
  for (Index i = 0; i < s.count; ++i) {
    const double angle = (s.angle + 20.0 * (unit(rng) - 0.5)) * deg;
    const double len = s.length * (0.7 + 0.6 * unit(rng));
    const double value = s.intensity * (0.6 + 0.4 * unit(rng));
    const double y0 = unit(rng) * static_cast<double>(h), x0 = unit(rng) * static_cast<double>(w);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const Index thickness = std::max<Index>(1, std::lround(s.width));
    for (double t = 0; t <= len; t += 0.5) {
      for (Index k = 0; k < thickness; ++k) {
        const double o = static_cast<double>(k) - static_cast<double>(thickness - 1) / 2.0;
        const Index y = static_cast<Index>(std::lround(y0 + t * dy + o * dx));
        const Index x = static_cast<Index>(std::lround(x0 + t * dx - o * dy));
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        layer(y, x) = std::max(layer(y, x), value);
      }
    }
  }
  // smear along the nominal streak axis
  const double dx = std::cos(s.angle * deg), dy = std::sin(s.angle * deg);
  Eigen::ArrayXXd smeared = Eigen::ArrayXXd::Zero(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -2; k <= 2; ++k) {
        const Index yy = static_cast<Index>(std::lround(y + k * dy)), xx = static_cast<Index>(std::lround(x + k * dx));
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) acc += layer(yy, xx);
      }
      smeared(y, x) = acc / 5.0;
    }
  }
  Image out = img.detach();
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) out.data_mut()[(c * h + y) * w + x] += smeared(y, x);
  return clipped(std::move(out));
}

Image synth_lowlight(const Image& img, double gamma, double scale) {
  require_image(img, "synth_lowlight");
  if (!(gamma >= 1)) fail(ErrorKind::InvalidRange, "gamma must be at least 1");
  if (!(scale > 0 && scale <= 1)) fail(ErrorKind::InvalidRange, "scale must lie in (0,1]");
  Image out = img.detach();
  out.data_mut() = scale * out.data().pow(gamma);
  return out;
}

Image synth_blur(const Image& img, const Tensor<double>& kernel) {
  require_image(img, "synth_blur");
  if (kernel.rank() != 2 || kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0) {
    fail(ErrorKind::ShapeMismatch, "blur kernel must be KH×KW with odd extents, got " + shape_string(kernel.shape()));
  }
  const double total = kernel.data().sum();
  if (std::abs(total - 1.0) > 1e-6) {
    fail(ErrorKind::UnnormalizedKernel, "kernel sums to " + std::to_string(total) + ", expected 1");
  }
  const Index h = img.dim(1), w = img.dim(2), kh = kernel.dim(0), kw = kernel.dim(1);
  Image out({3, h, w});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0;
        for (Index i = 0; i < kh; ++i) {
          const Index yy = reflect_index(y + i - kh / 2, h);
          for (Index j = 0; j < kw; ++j) {
            acc += kernel.data()[i * kw + j] * img.data()[(c * h + yy) * w + reflect_index(x + j - kw / 2, w)];
          }
        }
        out.data_mut()[(c * h + y) * w + x] = acc;
      }
  return out;
}

Tensor<double> box_kernel(Index taps, bool horizontal) {
  if (taps < 1 || taps % 2 == 0) fail(ErrorKind::InvalidRange, "box kernel needs an odd tap count");
  Shape shape = horizontal ? Shape{1, taps} : Shape{taps, 1};
  return Tensor<double>::full(std::move(shape), 1.0 / static_cast<double>(taps));
}

Tensor<double> gaussian_kernel(Index size, double sigma) {
  if (size < 1 || size % 2 == 0 || !(sigma > 0)) fail(ErrorKind::InvalidRange, "gaussian kernel needs odd size, σ > 0");
  Tensor<double> k({size, size});
  for (Index i = 0; i < size; ++i)
    for (Index j = 0; j < size; ++j) {
      const double dy = static_cast<double>(i - size / 2), dx = static_cast<double>(j - size / 2);
      k.data_mut()[i * size + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  k.data_mut() /= k.data().sum();
  return k;
}

Tensor<double> motion_kernel(Index size, double angle_degrees) {
  if (size < 1 || size % 2 == 0) fail(ErrorKind::InvalidRange, "motion kernel needs an odd size");
  Tensor<double> k({size, size});
  const double a = angle_degrees * std::numbers::pi / 180.0;
  const double half = static_cast<double>(size / 2);
  for (double t = -half; t <= half; t += 0.25) {
    const Index y = size / 2 + static_cast<Index>(std::lround(-t * std::sin(a)));
    const Index x = size / 2 + static_cast<Index>(std::lround(t * std::cos(a)));
    k.data_mut()[y * size + x] = 1.0;
  }
  k.data_mut() /= k.data().sum();
  return k;
}

void DegradationSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::InvalidConfig, m); };
  switch (kind) {
    case DegradationKind::noise:
      if (!(sigma >= 0)) bad("noise sigma must be non-negative");
      break;
    case DegradationKind::haze:
      if (!(beta_scatter >= 0)) bad("haze beta must be non-negative");
      if (!(airlight >= 0 && airlight <= 1)) bad("haze airlight must lie in [0,1]");
      break;
    case DegradationKind::rain:
      if (rain.count < 0) bad("rain count must be non-negative");
      if (!(rain.length > 0) || !(rain.width > 0)) bad("rain length and width must be positive");
      if (!(rain.intensity >= 0 && rain.intensity <= 1)) bad("rain intensity must lie in [0,1]");
      break;
    case DegradationKind::blur:
      if (kernel.type != "gaussian" && kernel.type != "box" && kernel.type != "motion") {
        bad("kernel type must be gaussian, box or motion");
      }
      if (kernel.size < 1 || kernel.size % 2 == 0) bad("kernel size must be odd");
      if (kernel.type == "gaussian" && !(kernel.sigma > 0)) bad("kernel sigma must be positive");
      break;
    case DegradationKind::lowlight:
      if (!(gamma >= 1)) bad("lowlight gamma must be at least 1");
      if (!(scale > 0 && scale <= 1)) bad("lowlight scale must lie in (0,1]");
      break;
    case DegradationKind::composite:
      for (const auto& p : parts) p.validate();
      break;
  }
}

std::string DegradationSpec::tag() const {
  if (kind != DegradationKind::composite) return kind_name(kind);
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "+") + p.tag();
  return out.empty() ? "identity" : out;
}

std::string DegradationSpec::to_json() const { return spec_to_json(*this).dump(); }

DegradationSpec DegradationSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("degradation spec is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

DegradationSpec DegradationSpec::noise(double sigma_255) {
  DegradationSpec s;
  s.kind = DegradationKind::noise;
  s.sigma = sigma_255;
  return s;
}

DegradationSpec DegradationSpec::haze(double beta_scatter, double airlight) {
  DegradationSpec s;
  s.kind = DegradationKind::haze;
  s.beta_scatter = beta_scatter;
  s.airlight = airlight;
  return s;
}

DegradationSpec DegradationSpec::rain_streaks(RainStreaks streaks) {
  DegradationSpec s;
  s.kind = DegradationKind::rain;
  s.rain = streaks;
  return s;
}

DegradationSpec DegradationSpec::blur(KernelSpec kernel) {
  DegradationSpec s;
  s.kind = DegradationKind::blur;
  s.kernel = std::move(kernel);
  return s;
}

DegradationSpec DegradationSpec::lowlight(double gamma, double scale) {
  DegradationSpec s;
  s.kind = DegradationKind::lowlight;
  s.gamma = gamma;
  s.scale = scale;
  return s;
}

DegradationSpec DegradationSpec::composite(std::vector<DegradationSpec> parts) {
  DegradationSpec s;
  s.kind = DegradationKind::composite;
  s.parts = std::move(parts);
  return s;
}

Image apply_degradation(const Image& img, const DegradationSpec& spec, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case DegradationKind::noise: return add_gaussian_noise(img, spec.sigma, seed);
    case DegradationKind::haze:
      require_image(img, "synth_haze");
      return synth_haze(img, spec.beta_scatter, spec.airlight, make_depth_map(img.dim(1), img.dim(2), seed));
    case DegradationKind::rain: return synth_rain(img, spec.rain, seed);
    case DegradationKind::blur: {
      const auto& k = spec.kernel;
      if (k.type == "box") return synth_blur(img, box_kernel(k.size, k.horizontal));
      if (k.type == "motion") return synth_blur(img, motion_kernel(k.size, k.angle));
      return synth_blur(img, gaussian_kernel(k.size, k.sigma));
    }
    case DegradationKind::lowlight: return synth_lowlight(img, spec.gamma, spec.scale);
    case DegradationKind::composite: return compose_degradations(img, spec.parts, seed);
  }
  return img.detach();
}

Image compose_degradations(const Image& img, const std::vector<DegradationSpec>& specs, std::uint64_t seed) {
  require_image(img, "compose_degradations");
  Image out = img.detach();
  for (std::size_t i = 0; i < specs.size(); ++i) out = apply_degradation(out, specs[i], derive_seed(seed, i));
  return out;
}

SamplePair make_pair(const Image& clean, const DegradationSpec& spec, std::uint64_t seed) {
  return SamplePair{clean.detach(), apply_degradation(clean, spec, seed), spec.tag()};
}

Image synthetic_clean_image(Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hh = static_cast<double>(height), ww = static_cast<double>(width);
  Image out({3, height, width});
  auto px = [&](Index c, Index y, Index x) -> double& { return out.data_mut()[(c * height + y) * width + x]; };

  for (Index c = 0; c < 3; ++c) {
    const double base = 0.2 + 0.6 * unit(rng), gy = 0.4 * (unit(rng) - 0.5), gx = 0.4 * (unit(rng) - 0.5);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) px(c, y, x) = base + gy * (y / hh - 0.5) + gx * (x / ww - 0.5);
  }
  const int rects = 2 + static_cast<int>(unit(rng) * 3);
  for (int r = 0; r < rects; ++r) {
    const double y0 = unit(rng) * hh, x0 = unit(rng) * ww;
    const double y1 = y0 + (0.15 + 0.4 * unit(rng)) * hh, x1 = x0 + (0.15 + 0.4 * unit(rng)) * ww;
    const double colour[3] = {unit(rng), unit(rng), unit(rng)};
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        if (y < y0 || y >= y1 || x < x0 || x >= x1) continue;
        for (Index c = 0; c < 3; ++c) px(c, y, x) = colour[c];
      }
  }
  const int discs = 1 + static_cast<int>(unit(rng) * 3);
  for (int d = 0; d < discs; ++d) {
    const double cy = unit(rng) * hh, cx = unit(rng) * ww, radius = (0.08 + 0.2 * unit(rng)) * std::min(hh, ww);
    const double colour[3] = {unit(rng), unit(rng), unit(rng)};
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        const double r = std::hypot(y - cy, x - cx);
        // one-pixel soft edge
        const double a = std::clamp(radius - r + 0.5, 0.0, 1.0);
        for (Index c = 0; c < 3; ++c) px(c, y, x) = (1 - a) * px(c, y, x) + a * colour[c];
      }
  }
  const double fy = 0.1 + 0.5 * unit(rng), fx = 0.1 + 0.5 * unit(rng), phase = 6.28 * unit(rng);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) px(c, y, x) += 0.05 * std::sin(fy * y + fx * x + phase);
  return clipped(std::move(out));
}

Batch make_training_batch(const std::vector<SamplePair>& pairs, Index patch, bool flips, std::uint64_t seed) {
  if (pairs.empty()) fail(ErrorKind::EmptyInput, "no sample pairs");
  if (patch <= 0 || patch % 2 != 0) fail(ErrorKind::InvalidConfig, "patch must be positive and even");
  for (const auto& p : pairs) {
    require_image(p.clean, "make_training_batch");
    if (p.clean.shape() != p.degraded.shape()) {
      fail(ErrorKind::ShapeMismatch, "clean " + shape_string(p.clean.shape()) + " vs degraded " +
                                         shape_string(p.degraded.shape()));
    }
    if (patch > std::min(p.clean.dim(1), p.clean.dim(2))) {
      fail(ErrorKind::PatchTooLarge, "patch " + std::to_string(patch) + " exceeds image " + shape_string(p.clean.shape()));
    }
  }
  const Index n = static_cast<Index>(pairs.size());
  Batch batch{Tensor<double>({n, 3, patch, patch}), Tensor<double>({n, 3, patch, patch})};
  for (Index i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    const Index h = p.clean.dim(1), w = p.clean.dim(2);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Index top = std::uniform_int_distribution<Index>(0, h - patch)(rng);
    const Index left = std::uniform_int_distribution<Index>(0, w - patch)(rng);
    const bool flip_h = flips && (rng() & 1), flip_v = flips && (rng() & 1);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < patch; ++y)
        for (Index x = 0; x < patch; ++x) {
          const Index sy = top + (flip_v ? patch - 1 - y : y), sx = left + (flip_h ? patch - 1 - x : x);
          const Index src = (c * h + sy) * w + sx, dst = ((i * 3 + c) * patch + y) * patch + x;
          batch.clean.data_mut()[dst] = p.clean.data()[src];
          batch.degraded.data_mut()[dst] = p.degraded.data()[src];
        }
  }
  return batch;
}

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
  std::vector<ManifestRecord> out;
  std::size_t start = 0, line_no = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      fail(ErrorKind::InvalidConfig, "manifest line " + std::to_string(line_no) + ": expected three tab-separated fields");
    }
    ManifestRecord r;
    r.clean_path = line.substr(0, t1);
    r.spec = DegradationSpec::from_json(line.substr(t1 + 1, t2 - t1 - 1));
    const std::string seed = line.substr(t2 + 1);
    const auto [ptr, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), r.seed);
    if (ec != std::errc{} || ptr != seed.data() + seed.size()) {
      fail(ErrorKind::InvalidConfig, "manifest line " + std::to_string(line_no) + ": bad seed '" + seed + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.clean_path + "\t" + r.spec.to_json() + "\t" + std::to_string(r.seed) + "\n";
  return out;
}

}  // namespace adair
