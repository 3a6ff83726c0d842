#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adair/cli.hpp"
#include "adair/config.hpp"
#include "adair/image_io.hpp"

using namespace adair;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("adair_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Index total_from(const std::string& params_output) {
  const auto pos = params_output.find("total");
  REQUIRE(pos != std::string::npos);
  return std::stoll(params_output.substr(pos + 5));
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"analyze", "--clean", "a.ppm"}).code == 1);
  CHECK(run({"params", "--set", "bogus=1"}).code == 1);
  CHECK(run({"params", "--set", "channels"}).code == 1);
  CHECK(run({"params", "--set", "mask=round"}).code == 1);
  const auto r = run({"params", "--config", "/nonexistent/x.cfg"});
  CHECK(r.code == 2);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("params against the reference counts") {
  const std::string cfg = std::string(ADAIR_CONFIG_DIR) + "/paper_scale.cfg";
  const auto base = run({"params", "--config", cfg, "--no-aflb"});
  REQUIRE(base.code == 0);
  CHECK(std::abs(static_cast<double>(total_from(base.out)) - 26.13e6) <= 0.03 * 26.13e6);
  CHECK(base.out.find("aflb overhead") == std::string::npos);

  const auto full = run({"params", "--config", cfg});
  REQUIRE(full.code == 0);
  const auto total = total_from(full.out);
  CHECK(total >= 26'500'000);
  CHECK(total <= 31'000'000);
  CHECK(full.out.find("reference 2.64M") != std::string::npos);

  const auto desk = run({"params", "--config", std::string(ADAIR_CONFIG_DIR) + "/desk.cfg"});
  CHECK(desk.code == 0);
  CHECK(total_from(desk.out) < 1'000'000);
  CHECK(run({"params"}).code == 0);
}

TEST_CASE("analyze") {
  const auto dir = scratch("analyze");
  const auto clean = synthetic_clean_image(40, 36, 3);
  write_image((dir / "a.ppm").string(), clean);
  write_image((dir / "b.ppm").string(), add_gaussian_noise(clean, 25, 4));

  const auto same = run({"analyze", "--clean", (dir / "a.ppm").string(), "--degraded", (dir / "a.ppm").string()});
  REQUIRE(same.code == 0);
  std::istringstream lines(same.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "L,mean_magnitude");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(line == std::to_string(rows) + ",0");
  }
  CHECK(rows == 160);

  auto once = [&](const std::string& csv, bool filled) {
    std::vector<std::string> args{"analyze", "--clean", (dir / "a.ppm").string(), "--degraded",
                                  (dir / "b.ppm").string(), "--out", (dir / csv).string(), "--svg",
                                  (dir / (csv + ".svg")).string(), "--tag", "noise"};
    if (filled) args.push_back("--filled");
    REQUIRE(run(args).code == 0);
    return read_text_file((dir / csv).string());
  };
  const auto first = once("one.csv", false);
  CHECK(first == once("two.csv", false));
  CHECK(first != once("three.csv", true));
  CHECK(read_text_file((dir / "one.csv.svg").string()).find("<polyline") != std::string::npos);

  write(dir / "bad.ppm", "P5\n1 1\n255\n\0");
  CHECK(run({"analyze", "--clean", (dir / "bad.ppm").string(), "--degraded", (dir / "a.ppm").string()}).code == 2);
  write_image((dir / "small.ppm").string(), synthetic_clean_image(20, 20, 1));
  CHECK(run({"analyze", "--clean", (dir / "small.ppm").string(), "--degraded", (dir / "a.ppm").string()}).code == 2);
}

TEST_CASE("train, restore and eval") {
  const auto dir = scratch("train");
  const auto cfg = dir / "tiny.cfg";
  write(cfg,
        "preset = desk\niterations = 3\nbatch_size = 2\npatch = 16\nkinds = noise, haze\npairs_per_kind = 1\n"
        "image_size = 16\nseed = 11\noutput = " +
            (dir / "m.ckpt").string() + "\nhistory = " + (dir / "h.csv").string() + "\n");
  const auto first = run({"train", "--config", cfg.string()});
  INFO(first.err);
  REQUIRE(first.code == 0);
  const auto history = read_text_file((dir / "h.csv").string());
  CHECK(history.rfind("step,loss,psnr_val\n1,", 0) == 0);
  REQUIRE(run({"train", "--config", cfg.string()}).code == 0);
  CHECK(read_text_file((dir / "h.csv").string()) == history);
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "12"}).code == 0);
  CHECK(read_text_file((dir / "h.csv").string()) != history);

  CHECK(run({"train", "--config", cfg.string(), "--set", "kinds=snow"}).code == 1);
  CHECK(run({"train", "--config", cfg.string(), "--set", "lr=-1"}).code == 1);
  CHECK(run({"train", "--config", cfg.string(), "--set", "colour=red"}).code == 1);

  // restore keeps the size of every input, odd sizes included
  fs::create_directories(dir / "in");
  write_image((dir / "in" / "a.ppm").string(), synthetic_clean_image(8, 8, 1));
  write_image((dir / "in" / "b.ppm").string(), synthetic_clean_image(21, 13, 2));
  write(dir / "in" / "notes.txt", "ignored");
  const auto restored = run({"restore", "--checkpoint", (dir / "m.ckpt").string(), "--input", (dir / "in").string(),
                             "--output", (dir / "out").string()});
  INFO(restored.err);
  REQUIRE(restored.code == 0);
  CHECK(read_image((dir / "out" / "a.ppm").string()).shape() == Shape{3, 8, 8});
  CHECK(read_image((dir / "out" / "b.ppm").string()).shape() == Shape{3, 21, 13});
  CHECK_FALSE(fs::exists(dir / "out" / "notes.txt"));
  CHECK(run({"restore", "--checkpoint", (dir / "m.ckpt").string(), "--input", (dir / "in").string(), "--output",
             (dir / "in").string()})
            .code == 1);
  CHECK(run({"restore", "--checkpoint", (dir / "missing.ckpt").string(), "--input", (dir / "in").string()}).code ==
        2);

  write(dir / "manifest.tsv", "# eval set\nin/a.ppm\t{\"kind\":\"noise\",\"sigma\":25}\t5\n"
                              "in/b.ppm\t{\"kind\":\"lowlight\",\"gamma\":2,\"scale\":0.5}\t6\n");
  const auto ev = run({"eval", "--checkpoint", (dir / "m.ckpt").string(), "--manifest",
                       (dir / "manifest.tsv").string(), "--csv", (dir / "scores.csv").string()});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.rfind("tag,count,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored\n", 0) == 0);
  CHECK(ev.out.find("\nnoise,1,") != std::string::npos);
  CHECK(ev.out.find("\nlowlight,1,") != std::string::npos);
  CHECK(read_text_file((dir / "scores.csv").string()) == ev.out);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--seed", "7"});
  CHECK(r.code == 0);
  for (const char* block : {"mgb", "cross_attention", "hl_unit", "lh_unit", "merge", "mdta", "gdfn",
                            "transformer_block", "aflb_soft_mask", "full_model"}) {
    CHECK(r.out.find(block) != std::string::npos);
  }
  CHECK(r.out.find("FAIL") == std::string::npos);
}
