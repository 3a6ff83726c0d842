#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "adair/analyze.hpp"
#include "adair/image_io.hpp"
#include "test_support.hpp"

using namespace adair;
using adair::testing::random_tensor;

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

Image flat(Index h, Index w, double v) { return Image({3, h, w}, ArrayX<double>::Constant(3 * h * w, v)); }

Image plus_gaussian(const Image& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Image out = img.detach();
  for (Index i = 0; i < out.numel(); ++i) out.data_mut()[i] += n(rng);
  return out;
}

}  // namespace

TEST_CASE("ppm round trip and fixture") {
  // Values on the 1/255 lattice survive the round trip bit for bit.
  std::mt19937_64 rng(3);
  Image img({3, 5, 7});
  for (Index i = 0; i < img.numel(); ++i) img.data_mut()[i] = static_cast<double>(rng() % 256) / 255.0;
  const auto back = decode_ppm(encode_ppm(img));
  CHECK(back.shape() == img.shape());
  CHECK((back.data() == img.data()).all());

  std::string fixture = "P6\n# two by two\n2 2\n255\n";
  for (int b : {0, 128, 255, 10, 20, 30, 255, 255, 255, 1, 2, 3}) fixture.push_back(static_cast<char>(b));
  const auto px = decode_ppm(fixture);
  REQUIRE(px.shape() == Shape{3, 2, 2});
  CHECK(px.at({0, 0, 0}) == 0.0);
  CHECK(px.at({1, 0, 0}) == 128.0 / 255.0);
  CHECK(px.at({2, 0, 0}) == 1.0);
  CHECK(px.at({0, 0, 1}) == 10.0 / 255.0);
  CHECK(px.at({2, 1, 1}) == 3.0 / 255.0);

  std::string small = "P6 1 1 100\n";
  small += std::string{char(50), char(100), char(0)};
  const auto s = decode_ppm(small);
  CHECK(s.at({0, 0, 0}) == doctest::Approx(0.5));
  CHECK(s.at({1, 0, 0}) == 1.0);

  // Out-of-range values are clamped on write.
  Image wild({3, 1, 2}, ArrayX<double>::LinSpaced(6, -1.0, 2.0));
  const auto w = decode_ppm(encode_ppm(wild));
  CHECK(w.data().minCoeff() >= 0.0);
  CHECK(w.data().maxCoeff() <= 1.0);

  const std::string path = "test_analyze_roundtrip.ppm";
  write_image(path, img);
  CHECK((read_image(path).data() == img.data()).all());
  std::remove(path.c_str());
}

TEST_CASE("ppm errors") {
  CHECK(kind_of([] { decode_ppm("P3\n1 1\n255\n"); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm("P6\nx 1\n255\n"); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm("P6\n1 1\n65535\n"); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm("P6\n0 1\n255\n"); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm("P6\n1 1\n255"); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm(""); }) == ErrorKind::MalformedHeader);
  CHECK(kind_of([] { decode_ppm("P6\n2 2\n255\nabc"); }) == ErrorKind::TruncatedPayload);
  CHECK(kind_of([] { read_image("/nonexistent/dir/x.ppm"); }) == ErrorKind::Io);
  CHECK(kind_of([] { encode_ppm(Image({1, 2, 2})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("centered magnitude against a direct DFT") {
  for (auto [h, w] : {std::pair<Index, Index>{5, 6}, {4, 4}, {7, 3}}) {
    const auto r = random_tensor<double>({3, h, w}, 11 + h, -1, 1);
    const auto got = centered_magnitude(r);
    REQUIRE(got.shape() == Shape{h, w});
    const long double pi = 3.14159265358979323846264338327950288L;
    double worst = 0;
    for (Index u = 0; u < h; ++u)
      for (Index v = 0; v < w; ++v) {
        long double mag = 0;
        for (Index c = 0; c < 3; ++c) {
          std::complex<long double> acc = 0;
          for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
              const long double ph = -2 * pi * (static_cast<long double>(u * y) / h + static_cast<long double>(v * x) / w);
              acc += static_cast<long double>(r.at({c, y, x})) * std::complex<long double>(std::cos(ph), std::sin(ph));
            }
          mag += std::abs(acc) / static_cast<long double>(h * w);
        }
        mag /= 3;
        const Index cy = (u + h / 2) % h, cx = (v + w / 2) % w;
        worst = std::max(worst, std::abs(static_cast<double>(mag) - got.at({cy, cx})));
      }
    CHECK(worst < 1e-13);
  }

  // A constant residual is a single DC bin of height |c|.
  const auto dc = centered_magnitude(flat(6, 8, -0.25));
  CHECK(dc.at({3, 4}) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(dc.data().abs().sum() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(kind_of([] { centered_magnitude(Image({2, 2})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("resize about center") {
  // f(y, x) = y on a 160×160 plane: output row i samples 80 + (i − 160)/2.
  Tensor<double> ramp({160, 160});
  for (Index y = 0; y < 160; ++y)
    for (Index x = 0; x < 160; ++x) ramp.data_mut()[y * 160 + x] = static_cast<double>(y);
  const auto up = resize_about_center(ramp);
  REQUIRE(up.shape() == Shape{320, 320});
  double worst = 0;
  for (Index i = 0; i <= 317; ++i)
    for (Index j : {0, 100, 160, 319}) worst = std::max(worst, std::abs(up.at({i, j}) - (80.0 + (i - 160) / 2.0)));
  CHECK(worst < 1e-12);
  CHECK(up.at({319, 5}) == 159.0);

  // Identity at the native size, and the DC bin lands on (160,160) when shrinking.
  const auto same = random_tensor<double>({320, 320}, 2);
  CHECK((resize_about_center(same).data() == same.data()).all());
  Tensor<double> delta({641, 641});
  delta.data_mut()[320 * 641 + 320] = 1.0;
  const auto shrunk = resize_about_center(delta);
  CHECK(shrunk.at({160, 160}) == 1.0);
  CHECK(shrunk.data().sum() == 1.0);
}

TEST_CASE("square curve geometry") {
  // Cell value = half-side of the ring it lies on.
  Tensor<double> rings({320, 320});
  for (Index y = 0; y < 320; ++y)
    for (Index x = 0; x < 320; ++x) {
      const Index ry = y < 160 ? 160 - y : y - 159, rx = x < 160 ? 160 - x : x - 159;
      rings.data_mut()[y * 320 + x] = static_cast<double>(std::max(ry, rx));
    }
  const auto per = square_curve(rings);
  const auto fil = square_curve(rings, SquareMean::filled);
  REQUIRE(per.size() == 160);
  REQUIRE(fil.size() == 160);
  double weighted = 0;
  for (Index L = 1; L <= 160; ++L) {
    CHECK(per[L - 1] == doctest::Approx(static_cast<double>(L)).epsilon(1e-14));
    weighted += static_cast<double>(L * (8 * L - 4));
    CHECK(fil[L - 1] == doctest::Approx(weighted / static_cast<double>(4 * L * L)).epsilon(1e-13));
  }
  CHECK(kind_of([] { square_curve(Tensor<double>({10, 10})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("summary statistics") {
  CHECK(coefficient_of_variation({1, 3}, 1, 2) == doctest::Approx(0.5));
  CHECK(coefficient_of_variation({9, 2, 2, 2}, 2, 4) == 0.0);
  CHECK(coefficient_of_variation({0, 0}, 1, 2) == 0.0);
  CHECK(kind_of([] { coefficient_of_variation({1, 2}, 0, 2); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { coefficient_of_variation({1, 2}, 1, 3); }) == ErrorKind::InvalidRange);

  CHECK(spearman({1, 2, 3, 4}, {10, 20, 25, 100}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ties take the average rank: ranks (1,2,3.5,5,3.5) give 8/√95.
  CHECK(spearman({1, 2, 3, 4, 5}, {5, 6, 7, 8, 7}) == doctest::Approx(8.0 / std::sqrt(95.0)).epsilon(1e-14));
  CHECK(spearman({1, 2, 3}, {4, 4, 4}) == 0.0);
  CHECK(kind_of([] { spearman({1, 2}, {1}); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("residual spectrum curves") {
  const Index n = 128;
  const auto base = flat(n, n, 0.5);

  SUBCASE("constant residual is DC only") {
    const auto r = residual_spectrum_curve(base, flat(n, n, 0.3));
    REQUIRE(r.curve.size() == 160);
    // Upsampling 128 → 320 spreads the DC bin over the three innermost rings.
    CHECK(r.curve[0] > 0.04);
    CHECK(r.curve[0] > r.curve[1]);
    for (std::size_t i = 3; i < r.curve.size(); ++i) CHECK(r.curve[i] < 1e-15);
  }

  SUBCASE("identical images give zeros") {
    const auto img = synthetic_clean_image(n, n, 4);
    const auto r = residual_spectrum_curve(img, img, SquareMean::perimeter, "none");
    CHECK(r.tag == "none");
    for (double v : r.curve) CHECK(v == 0.0);
    CHECK(r.flatness == 0.0);
    CHECK(r.monotonicity == 0.0);
  }

  SUBCASE("white noise is flat") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto r = residual_spectrum_curve(base, plus_gaussian(base, 25.0 / 255.0, seed));
      CHECK(r.flatness < 0.15);
      for (double v : r.curve) CHECK(v >= 0.0);
    }
  }

  SUBCASE("low-passed noise decays") {
    const auto lp = synth_blur(plus_gaussian(base, 0.1, 8), gaussian_kernel(13, 2.0));
    const auto r = residual_spectrum_curve(base, lp);
    CHECK(r.monotonicity < -0.8);
    CHECK(r.curve[0] > 10 * r.curve[159]);
  }

  SUBCASE("haze and lowlight residuals decay") {
    const auto img = synthetic_clean_image(n, n, 5);
    CHECK(residual_spectrum_curve(img, apply_degradation(img, DegradationSpec::haze(1.0, 0.9), 1)).monotonicity <
          -0.8);
    CHECK(residual_spectrum_curve(img, apply_degradation(img, DegradationSpec::lowlight(2.0, 0.5), 1)).monotonicity <
          -0.8);
  }

  SUBCASE("rain residual mass lies off the center square") {
    const auto img = synthetic_clean_image(n, n, 5);
    RainStreaks streaks;
    streaks.count = 120;
    const auto rainy = apply_degradation(img, DegradationSpec::rain_streaks(streaks), 1);
    const Image residual(img.shape(), img.data() - rainy.data());
    const auto grid = resize_about_center(centered_magnitude(residual));
    double center = 0;
    for (Index y = 159; y <= 160; ++y)
      for (Index x = 159; x <= 160; ++x) center += grid.at({y, x});
    CHECK(grid.data().sum() - center > center);
    const auto r = residual_spectrum_curve(img, rainy);
    CHECK(r.curve[0] == doctest::Approx(center / 4).epsilon(1e-12));
  }

  SUBCASE("odd sizes and shape errors") {
    const auto odd = flat(33, 45, 0.5);
    const auto r = residual_spectrum_curve(odd, plus_gaussian(odd, 0.1, 5));
    CHECK(r.curve.size() == 160);
    CHECK(kind_of([&] { residual_spectrum_curve(base, flat(n, n + 2, 0.5)); }) == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("curve csv and svg") {
  CurveReport r;
  r.tag = "noise";
  r.curve = std::vector<double>(160, 0.125);
  r.curve[0] = 1.5;
  const auto csv = curve_csv(r);
  CHECK(csv.rfind("L,mean_magnitude\n1,1.5\n2,0.125\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 161);

  const auto svg = curve_svg({r, r});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), 'p') > 0);
  std::size_t polylines = 0;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++polylines;
  CHECK(polylines == 2);
}
