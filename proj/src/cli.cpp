#include "adair/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "adair/analyze.hpp"
#include "adair/checkpoint.hpp"
#include "adair/gradsuite.hpp"
#include "adair/image_io.hpp"
#include "adair/network.hpp"
#include "adair/train.hpp"

namespace adair {

namespace fs = std::filesystem;

namespace {

constexpr double kReferenceAflbOverhead = 2.64e6;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot write " + path);
  f << text;
  if (!f) fail(ErrorKind::Io, "short write to " + path);
}

/// --seed wins, then ADAIR_SEED, then the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("ADAIR_SEED"); env && *env) {
    return static_cast<std::uint64_t>(parse_index(env, "ADAIR_SEED"));
  }
  return fallback;
}

KeyValueText load_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto keys = path.empty() ? KeyValueText::parse("") : KeyValueText::parse(read_text_file(path), path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    auto key = o.substr(0, eq), value = o.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    value.erase(0, value.find_first_not_of(' '));
    keys.set(key, value);
  }
  return keys;
}

std::vector<SamplePair> manifest_pairs(const std::string& manifest_path) {
  const auto records = parse_manifest(read_text_file(manifest_path));
  const auto base = fs::path(manifest_path).parent_path();
  std::vector<SamplePair> pairs;
  for (const auto& r : records) {
    fs::path p(r.clean_path);
    if (p.is_relative()) p = base / p;
    pairs.push_back(make_pair(read_image(p.string()), r.spec, r.seed));
  }
  return pairs;
}

struct DataConfig {
  std::string source = "synthetic";
  std::string manifest;
  std::vector<std::string> kinds{"noise"};
  Index pairs_per_kind = 4;
  Index val_pairs_per_kind = 0;
  Index image_size = 32;
  std::string output = "adair.ckpt";
  std::string history;

  static DataConfig from_keys(KeyValueText& keys) {
    DataConfig d;
    if (auto v = keys.take("data")) d.source = *v;
    if (auto v = keys.take("manifest")) d.manifest = *v;
    if (auto v = keys.take("kinds")) d.kinds = split_list(*v);
    if (auto v = keys.take("pairs_per_kind")) d.pairs_per_kind = parse_index(*v, "pairs_per_kind");
    if (auto v = keys.take("val_pairs_per_kind")) d.val_pairs_per_kind = parse_index(*v, "val_pairs_per_kind");
    if (auto v = keys.take("image_size")) d.image_size = parse_index(*v, "image_size");
    if (auto v = keys.take("output")) d.output = *v;
    if (auto v = keys.take("history")) d.history = *v;
    if (d.source != "synthetic" && d.source != "manifest") {
      fail(ErrorKind::InvalidConfig, "data must be synthetic or manifest");
    }
    if (d.source == "manifest" && d.manifest.empty()) fail(ErrorKind::InvalidConfig, "data = manifest needs manifest");
    if (d.kinds.empty()) fail(ErrorKind::InvalidConfig, "kinds is empty");
    if (d.pairs_per_kind < 1) fail(ErrorKind::InvalidConfig, "pairs_per_kind must be ≥ 1");
    if (d.val_pairs_per_kind < 0) fail(ErrorKind::InvalidConfig, "val_pairs_per_kind must be ≥ 0");
    if (d.image_size < 8) fail(ErrorKind::InvalidConfig, "image_size must be ≥ 8");
    for (const auto& k : d.kinds) synthetic_spec(k, d.image_size);
    return d;
  }
};

template <typename Scalar>
void train_with(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DataConfig& data, std::ostream& out) {
  std::vector<SamplePair> pairs, val;
  if (data.source == "manifest") {
    pairs = manifest_pairs(data.manifest);
  } else {
    pairs = synthetic_pairs(data.kinds, data.pairs_per_kind, data.image_size, train_cfg.seed);
    if (data.val_pairs_per_kind > 0) {
      val = synthetic_pairs(data.kinds, data.val_pairs_per_kind, data.image_size, derive_seed(train_cfg.seed, 0x7a1));
    }
  }
  auto model = build_model<Scalar>(model_cfg, train_cfg.seed);
  out << "training " << count_parameters(model).total << " parameters on " << pairs.size() << " pairs for "
      << train_cfg.iterations << " steps\n";
  const Index every = std::max<Index>(1, train_cfg.iterations / 10);
  auto state = train_loop(model, pairs, train_cfg, val, [&](const StepRecord& r) {
    if (r.step % every == 0 || r.step == 1 || r.psnr_val) {
      out << "step " << r.step << " loss " << format_double(r.loss);
      if (r.psnr_val) out << " psnr_val " << format_double(*r.psnr_val);
      out << "\n";
    }
  });
  save_checkpoint(data.output, model, &state.optimizer);
  out << "wrote " << data.output << "\n";
  if (!data.history.empty()) {
    write_text(data.history, history_csv(state.metrics.history));
    out << "wrote " << data.history << "\n";
  }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::optional<std::uint64_t>& seed, std::ostream& out) {
  auto keys = load_config(config_path, overrides);
  const auto model_cfg = ModelConfig::from_keys(keys);
  auto train_cfg = TrainConfig::from_keys(keys);
  const auto data = DataConfig::from_keys(keys);
  keys.reject_unused();
  train_cfg.seed = resolve_seed(seed, train_cfg.seed);
  if (model_cfg.precision == Precision::f64) train_with<double>(model_cfg, train_cfg, data, out);
  else train_with<float>(model_cfg, train_cfg, data, out);
  return 0;
}

template <typename Scalar>
void restore_with(const std::string& checkpoint, const std::vector<fs::path>& inputs, const fs::path& out_dir,
                  std::ostream& out) {
  const auto model = load_checkpoint<Scalar>(checkpoint).model;
  for (const auto& in : inputs) {
    const auto img = read_image(in.string());
    const auto x = img.template cast<Scalar>().reshape({1, 3, img.dim(1), img.dim(2)});
    const auto y = restore(model, x).template cast<double>().reshape(img.shape());
    const auto target = out_dir / in.filename();
    write_image(target.string(), y);
    out << in.string() << " -> " << target.string() << "\n";
  }
}

int cmd_restore(const std::string& checkpoint, const std::string& input, const std::string& output,
                std::ostream& out) {
  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  } else if (fs::exists(input)) {
    inputs.push_back(input);
  } else {
    fail(ErrorKind::Io, "no such input " + input);
  }
  const auto precision = inspect_checkpoint(checkpoint).precision;
  fs::create_directories(output);
  for (const auto& in : inputs) {
    const auto target = fs::path(output) / in.filename();
    if (fs::exists(target) && fs::equivalent(target, in)) throw UsageError("restore would overwrite " + in.string());
  }
  if (precision == Precision::f64) restore_with<double>(checkpoint, inputs, output, out);
  else restore_with<float>(checkpoint, inputs, output, out);
  return 0;
}

std::string scores_table(const std::vector<TagScores>& scores) {
  std::ostringstream ss;
  ss << "tag,count,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored\n";
  for (const auto& s : scores) {
    ss << s.tag << "," << s.count << "," << format_double(s.psnr_degraded) << "," << format_double(s.psnr_restored)
       << "," << format_double(s.ssim_degraded) << "," << format_double(s.ssim_restored) << "\n";
  }
  return ss.str();
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& csv, std::ostream& out) {
  const auto pairs = manifest_pairs(manifest);
  std::vector<TagScores> scores;
  if (inspect_checkpoint(checkpoint).precision == Precision::f64) {
    scores = evaluate(load_checkpoint<double>(checkpoint).model, pairs);
  } else {
    scores = evaluate(load_checkpoint<float>(checkpoint).model, pairs);
  }
  const auto table = scores_table(scores);
  if (!csv.empty()) write_text(csv, table);
  out << table;
  return 0;
}

int cmd_analyze(const std::string& clean, const std::string& degraded, const std::string& csv, const std::string& svg,
                bool filled, const std::string& tag, std::ostream& out) {
  const auto report = residual_spectrum_curve(read_image(clean), read_image(degraded),
                                              filled ? SquareMean::filled : SquareMean::perimeter, tag);
  if (csv.empty()) {
    out << curve_csv(report);
  } else {
    write_text(csv, curve_csv(report));
    out << "flatness (CV over L 8..160) " << format_double(report.flatness) << "\n"
        << "monotonicity (Spearman over L 1..160) " << format_double(report.monotonicity) << "\n";
  }
  if (!svg.empty()) write_text(svg, curve_svg({report}));
  return 0;
}

int cmd_gradcheck(const std::optional<std::uint64_t>& seed, std::ostream& out) {
  const auto entries = run_gradient_suite(resolve_seed(seed, 0));
  bool ok = true;
  for (const auto& e : entries) {
    out << std::left << std::setw(20) << e.block << " max_rel_error " << std::scientific << std::setprecision(3)
        << e.max_rel_error << " tol " << e.tolerance << " coords " << std::defaultfloat << e.checked
        << (e.passed() ? " ok" : " FAIL") << "\n";
    ok = ok && e.passed();
  }
  return ok ? 0 : 2;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& overrides, bool no_aflb,
               std::ostream& out) {
  auto keys = load_config(config_path, overrides);
  auto cfg = ModelConfig::from_keys(keys);
  // a full training config is accepted; its other sections are still checked
  TrainConfig::from_keys(keys);
  DataConfig::from_keys(keys);
  keys.reject_unused();
  if (no_aflb) cfg.aflb = {false, false, false};
  const auto count = count_parameters(cfg);
  for (const auto& [group, n] : count.groups) out << std::left << std::setw(12) << group << " " << n << "\n";
  out << std::left << std::setw(12) << "total" << " " << count.total << " (" << std::fixed << std::setprecision(2)
      << static_cast<double>(count.total) / 1e6 << "M)\n";
  if (cfg.aflb_count() > 0) {
    auto baseline = cfg;
    baseline.aflb = {false, false, false};
    const Index overhead = count.total - count_parameters(baseline).total;
    out << "aflb overhead " << overhead << " (" << static_cast<double>(overhead) / 1e6 << "M; reference "
        << kReferenceAflbOverhead / 1e6 << "M)\n";
  }
  out << std::defaultfloat;
  return 0;
}

}  // namespace

DegradationSpec synthetic_spec(const std::string& kind, Index image_size) {
  if (kind == "noise") return DegradationSpec::noise(25);
  if (kind == "haze") return DegradationSpec::haze(1.0, 0.9);
  if (kind == "rain") {
    RainStreaks s;
    s.count = std::max<Index>(1, 12 * image_size * image_size / 1024);
    s.length = 10;
    s.intensity = 0.5;
    return DegradationSpec::rain_streaks(s);
  }
  if (kind == "lowlight") return DegradationSpec::lowlight(2.0, 0.5);
  if (kind == "blur") {
    KernelSpec k;
    k.type = "gaussian";
    k.size = 5;
    k.sigma = 1.0;
    return DegradationSpec::blur(k);
  }
  fail(ErrorKind::InvalidConfig, "unknown degradation kind '" + kind + "' (noise, haze, rain, lowlight, blur)");
}

std::vector<SamplePair> synthetic_pairs(const std::vector<std::string>& kinds, Index pairs_per_kind, Index image_size,
                                        std::uint64_t seed) {
  std::vector<SamplePair> pairs;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    const auto spec = synthetic_spec(kinds[k], image_size);
    for (Index i = 0; i < pairs_per_kind; ++i) {
      const auto item = derive_seed(seed, k * 100003 + static_cast<std::uint64_t>(i));
      pairs.push_back(make_pair(synthetic_clean_image(image_size, image_size, item), spec, derive_seed(item, 1)));
    }
  }
  return pairs;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"All-in-one image restoration with adaptive frequency learning", "adair"};
  app.require_subcommand(1);

  std::string config, checkpoint, input, output = "restored", manifest, csv, svg, clean, degraded, tag;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool filled = false, no_aflb = false;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config,-c", config, "key = value config file")->required();
  train->add_option("--set", overrides, "override a config key (key=value)");
  train->add_option("--seed", seed, "seed (else ADAIR_SEED, else the config)");

  auto* rest = app.add_subcommand("restore", "restore P6 images with a checkpoint");
  rest->add_option("--checkpoint", checkpoint)->required();
  rest->add_option("--input,-i", input, "image file or directory of .ppm files")->required();
  rest->add_option("--output,-o", output, "output directory");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM per degradation tag");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--manifest", manifest, "clean_path<TAB>spec_json<TAB>seed per line")->required();
  ev->add_option("--csv", csv, "also write the table here");

  auto* an = app.add_subcommand("analyze", "residual spectrum square curve");
  an->add_option("--clean", clean)->required();
  an->add_option("--degraded", degraded)->required();
  an->add_option("--out,-o", csv, "CSV path (stdout when absent)");
  an->add_option("--svg", svg, "SVG plot path");
  an->add_option("--tag", tag, "label for the plot");
  an->add_flag("--filled", filled, "mean over the filled square instead of its perimeter");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", seed);

  auto* pr = app.add_subcommand("params", "parameter count per group");
  pr->add_option("--config,-c", config, "model config (desk preset when absent)");
  pr->add_option("--set", overrides, "override a config key (key=value)");
  pr->add_flag("--no-aflb", no_aflb, "drop every AFLB");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, overrides, seed, out);
    if (*rest) return cmd_restore(checkpoint, input, output, out);
    if (*ev) return cmd_eval(checkpoint, manifest, csv, out);
    if (*an) return cmd_analyze(clean, degraded, csv, svg, filled, tag, out);
    if (*gc) return cmd_gradcheck(seed, out);
    if (*pr) return cmd_params(config, overrides, no_aflb, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidConfig ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"adair"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace adair
