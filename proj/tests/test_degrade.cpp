#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adair/degrade.hpp"
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

Image test_image(Index h = 24, Index w = 20, std::uint64_t seed = 1) {
  return random_tensor<double>({3, h, w}, seed, 0.0, 1.0);
}

bool identical(const Image& a, const Image& b) { return a.shape() == b.shape() && (a.data() == b.data()).all(); }

bool in_unit_range(const Image& a) { return a.data().minCoeff() >= 0.0 && a.data().maxCoeff() <= 1.0; }

}  // namespace

TEST_CASE("gaussian noise") {
  const auto img = test_image();
  CHECK(identical(add_gaussian_noise(img, 0, 3), img));
  CHECK(identical(add_gaussian_noise(img, 25, 3), add_gaussian_noise(img, 25, 3)));
  CHECK_FALSE(identical(add_gaussian_noise(img, 25, 3), add_gaussian_noise(img, 25, 4)));
  CHECK(in_unit_range(add_gaussian_noise(img, 50, 3)));

  // 196608 samples: the sample std has relative spread ~0.16%, so 5% is far
  // outside 3σ; clipping at 0.5 ± 5σ is negligible
  const auto flat = Image::full({3, 256, 256}, 0.5);
  const auto noisy = add_gaussian_noise(flat, 25, 11);
  const ArrayX<double> d = noisy.data() - 0.5;
  const double std = std::sqrt((d - d.mean()).square().mean());
  CHECK(std::abs(std - 25.0 / 255.0) <= 0.05 * 25.0 / 255.0);
  CHECK(std::abs(d.mean()) < 3 * (25.0 / 255.0) / std::sqrt(static_cast<double>(d.size())));
  CHECK(kind_of([&] { add_gaussian_noise(img, -1, 0); }) == ErrorKind::InvalidRange);
}

TEST_CASE("haze") {
  const auto img = test_image(8, 6);
  const auto depth = make_depth_map(8, 6, 2);
  CHECK(identical(synth_haze(img, 0.0, 0.7, depth), img));
  const auto deep = Tensor<double>::full({8, 6}, 1e4);
  const auto white = synth_haze(img, 1.0, 0.8, deep);
  CHECK((white.data() - 0.8).abs().maxCoeff() < 1e-12);

  const auto black = Image::zeros({3, 2, 2});
  const auto mid = synth_haze(black, 1.0, 1.0, Tensor<double>::full({2, 2}, 1.0));
  CHECK(mid.data()[0] == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
  CHECK(mid.data()[0] == doctest::Approx(0.6321).epsilon(1e-4));
  CHECK(in_unit_range(synth_haze(img, 2.0, 0.9, depth)));

  CHECK(depth.data().minCoeff() >= 0.0);
  const auto tall = make_depth_map(64, 8, 5);
  double top = 0, bottom = 0;
  for (Index x = 0; x < 8; ++x) {
    top += tall.at({0, x});
    bottom += tall.at({63, x});
  }
  CHECK(top > bottom);
  CHECK(identical(make_depth_map(16, 16, 5), make_depth_map(16, 16, 5)));

  CHECK(kind_of([&] { synth_haze(img, -1.0, 0.5, depth); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([&] { synth_haze(img, 1.0, 1.5, depth); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([&] { synth_haze(img, 1.0, 0.5, make_depth_map(4, 4, 0)); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("rain streaks") {
  const auto img = test_image(48, 48, 6) * 0.5;
  CHECK(identical(synth_rain(img, RainStreaks{.count = 0}, 1), img));
  const RainStreaks s{.count = 40, .length = 14, .angle = 75, .width = 2, .intensity = 0.4};
  const auto rainy = synth_rain(img, s, 1);
  CHECK((rainy.data() >= img.data()).all());
  CHECK((rainy.data() - img.data()).maxCoeff() > 0.05);
  CHECK(in_unit_range(rainy));
  CHECK(identical(rainy, synth_rain(img, s, 1)));
  CHECK_FALSE(identical(rainy, synth_rain(img, s, 2)));

  // same streak layer on every channel
  const Index plane = 48 * 48;
  const ArrayX<double> r0 = rainy.data().segment(0, plane) - img.data().segment(0, plane);
  const ArrayX<double> r2 = rainy.data().segment(2 * plane, plane) - img.data().segment(2 * plane, plane);
  CHECK((r0 - r2).abs().maxCoeff() < 1e-12);
}

TEST_CASE("low light and blur") {
  const auto img = test_image();
  CHECK(identical(synth_lowlight(img, 1.0, 1.0), img));
  CHECK(synth_lowlight(Image::full({3, 1, 1}, 0.5), 2.0, 1.0).data()[0] == 0.25);
  CHECK(kind_of([&] { synth_lowlight(img, 0.5, 1.0); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([&] { synth_lowlight(img, 2.0, 0.0); }) == ErrorKind::InvalidRange);

  auto delta = Tensor<double>::zeros({3, 3});
  delta.data_mut()[4] = 1.0;
  CHECK(identical(synth_blur(img, delta), img));

  auto impulse = Image::zeros({3, 9, 21});
  for (Index c = 0; c < 3; ++c) impulse.data_mut()[(c * 9 + 4) * 21 + 10] = 1.0;
  const auto smeared = synth_blur(impulse, box_kernel(9, true));
  for (Index x = 0; x < 21; ++x) {
    const double expected = (x >= 6 && x <= 14) ? 1.0 / 9.0 : 0.0;
    CHECK(smeared.at({1, 4, x}) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(smeared.at({1, 3, x}) == 0.0);
  }

  auto heavy = Tensor<double>::full({3, 3}, 0.2);
  CHECK(kind_of([&] { synth_blur(img, heavy); }) == ErrorKind::UnnormalizedKernel);
  CHECK(kind_of([&] { synth_blur(img, Tensor<double>::full({2, 2}, 0.25)); }) == ErrorKind::ShapeMismatch);
  CHECK(gaussian_kernel(5, 1.2).data().sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(motion_kernel(7, 30).data().sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(in_unit_range(synth_blur(img, gaussian_kernel(5, 1.2))));
}

TEST_CASE("composition") {
  const auto img = test_image();
  CHECK(identical(compose_degradations(img, {}, 3), img));

  const auto rain = DegradationSpec::rain_streaks(RainStreaks{.count = 30});
  const auto noise = DegradationSpec::noise(50);
  const auto mixed = compose_degradations(img, {rain, noise}, 9);
  const auto manual = add_gaussian_noise(synth_rain(img, rain.rain, derive_seed(9, 0)), 50, derive_seed(9, 1));
  CHECK(identical(mixed, manual));
  CHECK(identical(apply_degradation(img, DegradationSpec::composite({rain, noise}), 9), mixed));
  CHECK(DegradationSpec::composite({rain, noise}).tag() == "rain+noise");

  const auto blur = DegradationSpec::blur(KernelSpec{.type = "gaussian", .size = 5, .sigma = 1.5});
  const auto nb = compose_degradations(img, {DegradationSpec::noise(25), blur}, 4);
  const auto bn = compose_degradations(img, {blur, DegradationSpec::noise(25)}, 4);
  CHECK((nb.data() - bn.data()).abs().maxCoeff() > 0);
}

TEST_CASE("null points and ranges for every generator") {
  const auto img = test_image(16, 16, 21);
  CHECK(identical(apply_degradation(img, DegradationSpec::noise(0), 1), img));
  CHECK(identical(apply_degradation(img, DegradationSpec::haze(0, 0.5), 1), img));
  CHECK(identical(apply_degradation(img, DegradationSpec::rain_streaks(RainStreaks{.count = 0}), 1), img));
  CHECK(identical(apply_degradation(img, DegradationSpec::lowlight(1, 1), 1), img));
  CHECK(identical(apply_degradation(img, DegradationSpec::blur(KernelSpec{.type = "box", .size = 1}), 1), img));

  const std::vector<DegradationSpec> specs{
      DegradationSpec::noise(50), DegradationSpec::haze(1.5, 1.0), DegradationSpec::rain_streaks(RainStreaks{.count = 50, .intensity = 1.0}),
      DegradationSpec::lowlight(3, 0.3), DegradationSpec::blur(KernelSpec{.type = "motion", .size = 7, .angle = 45})};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (const auto& s : specs) {
      const auto out = apply_degradation(img, s, seed);
      CHECK(out.shape() == img.shape());
      CHECK(in_unit_range(out));
      CHECK(identical(out, apply_degradation(img, s, seed)));
    }
  }
}

TEST_CASE("spec JSON and manifest") {
  const auto spec = DegradationSpec::composite(
      {DegradationSpec::rain_streaks(RainStreaks{.count = 7, .length = 9.5, .angle = 70, .width = 2, .intensity = 0.3}),
       DegradationSpec::noise(15), DegradationSpec::blur(KernelSpec{.type = "box", .size = 3, .horizontal = false}),
       DegradationSpec::haze(0.8, 0.85), DegradationSpec::lowlight(2.2, 0.6)});
  const auto back = DegradationSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
  CHECK(back.parts.size() == 5);
  CHECK(back.parts[0].rain.length == 9.5);

  CHECK(DegradationSpec::from_json(R"({"kind":"noise"})").sigma == 25);
  CHECK(kind_of([] { DegradationSpec::from_json("{"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { DegradationSpec::from_json(R"({"kind":"snow"})"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { DegradationSpec::from_json(R"({"kind":"noise","sigmaa":3})"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { DegradationSpec::from_json(R"({"kind":"noise","sigma":-3})"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { DegradationSpec::from_json(R"({"kind":"noise","sigma":"x"})"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { DegradationSpec::from_json(R"({"kind":"lowlight","gamma":0.5})"); }) == ErrorKind::InvalidConfig);

  const std::vector<ManifestRecord> records{{"a.ppm", DegradationSpec::noise(25), 7},
                                            {"dir/b.ppm", spec, 18446744073709551615ULL}};
  const auto text = format_manifest(records);
  const auto parsed = parse_manifest("# comment\n\n" + text);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].clean_path == "dir/b.ppm");
  CHECK(parsed[1].seed == 18446744073709551615ULL);
  CHECK(parsed[1].spec.to_json() == spec.to_json());
  CHECK(format_manifest(parsed) == text);
  CHECK(kind_of([] { parse_manifest("a.ppm\t{\"kind\":\"noise\"}\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_manifest("a.ppm\t{\"kind\":\"noise\"}\tx1\n"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("training batches") {
  std::vector<SamplePair> pairs;
  for (std::uint64_t i = 0; i < 3; ++i) {
    pairs.push_back(make_pair(synthetic_clean_image(16, 16, i), DegradationSpec::noise(25), 10 + i));
  }
  const auto whole = make_training_batch(pairs, 16, false, 5);
  CHECK(whole.clean.shape() == Shape{3, 3, 16, 16});
  for (Index i = 0; i < 3; ++i) {
    CHECK((whole.clean.data().segment(i * 768, 768) == pairs[i].clean.data()).all());
    CHECK((whole.degraded.data().segment(i * 768, 768) == pairs[i].degraded.data()).all());
  }

  // crops and flips applied identically to both members
  std::vector<SamplePair> residual_pairs;
  for (const auto& p : pairs) {
    residual_pairs.push_back(SamplePair{p.clean - p.degraded, Image::zeros(p.clean.shape()), p.tag});
  }
  const auto a = make_training_batch(pairs, 8, true, 6);
  const auto r = make_training_batch(residual_pairs, 8, true, 6);
  CHECK((r.clean.data() - (a.clean.data() - a.degraded.data())).abs().maxCoeff() < 1e-15);

  const auto b = make_training_batch(pairs, 8, true, 6);
  CHECK((a.clean.data() == b.clean.data()).all());
  CHECK_FALSE((a.clean.data() == make_training_batch(pairs, 8, true, 7).clean.data()).all());

  CHECK(kind_of([&] { make_training_batch(pairs, 18, false, 0); }) == ErrorKind::PatchTooLarge);
  CHECK(kind_of([&] { make_training_batch(pairs, 7, false, 0); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([&] { make_training_batch({}, 8, false, 0); }) == ErrorKind::EmptyInput);
}

TEST_CASE("synthetic clean images") {
  const auto a = synthetic_clean_image(40, 30, 3);
  CHECK(a.shape() == Shape{3, 40, 30});
  CHECK(in_unit_range(a));
  CHECK(identical(a, synthetic_clean_image(40, 30, 3)));
  CHECK_FALSE(identical(a, synthetic_clean_image(40, 30, 4)));
  const ArrayX<double> d = a.data() - a.data().mean();
  CHECK(std::sqrt(d.square().mean()) > 0.05);
}
