// gmlab: frequency-aware neural network laboratory.
//
// Subcommands: decompose, train, eval-freq, ablate, analyze-kernels,
// spectra, verify. Exit codes: 0 success, 2 usage, 3 I/O, 4 verification
// failure. Failures print one machine-readable JSON line on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "gmlab/ablation.hpp"
#include "gmlab/checkpoint.hpp"
#include "gmlab/config.hpp"
#include "gmlab/image_io.hpp"
#include "gmlab/models.hpp"
#include "gmlab/probes.hpp"
#include "gmlab/train.hpp"
#include "gmlab/verify.hpp"

namespace {

using namespace gmlab;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitVerify = 4;

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

void fail_line(const std::string& kind, const std::string& message) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

std::filesystem::path default_out_dir() {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto s = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return std::filesystem::path("runs") / std::to_string(s);
}

// ---------------------------------------------------------------------------
// shared model/dataset plumbing
// ---------------------------------------------------------------------------

struct ModelFlags {
  std::optional<std::string> family, scale, variant, act, glu;
  std::optional<long long> classes, resolution, seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--family", family, "model family: gmnet|resnet18|mbv2|contribution");
    cmd->add_option("--scale", scale, "gmnet scale (s1..s4, s1-toy) or contribution variant");
    cmd->add_option("--variant", variant, "resnet18: baseline|ewp|gate; mbv2: stock|glu");
    cmd->add_option("--act", act, "gate activation: identity|relu|relu6|gelu|silu");
    cmd->add_option("--glu", glu, "gate design: simple|ln|dw|pool_diff|fc|fc_sigma");
    cmd->add_option("--classes", classes, "number of classes");
    cmd->add_option("--resolution", resolution, "input resolution");
    cmd->add_option("--model-seed", seed, "initialization seed");
  }

  void apply(RunConfig& cfg) const {
    if (family) cfg.set("model.family", *family);
    if (scale) cfg.set("model.scale", *scale);
    if (variant) cfg.set("model.variant", *variant);
    if (act) cfg.set("model.act", *act);
    if (glu) cfg.set("model.glu", *glu);
    if (classes) cfg.set("model.classes", std::to_string(*classes));
    if (resolution) cfg.set("model.resolution", std::to_string(*resolution));
    if (seed) cfg.set("model.seed", std::to_string(*seed));
  }
};

ModelConfig model_config_from(const RunConfig& cfg) {
  ModelConfig mc;
  mc.family = cfg.get_str("model.family", "gmnet");
  mc.scale = cfg.get_str("model.scale", "s1-toy");
  mc.variant = cfg.get_str("model.variant", "gate");
  mc.act = activation_from_string(cfg.get_str("model.act", "relu6"));
  mc.glu = glu_variant_from_string(cfg.get_str("model.glu", "simple"));
  mc.num_classes = cfg.get_int("model.classes", 10);
  mc.input_resolution = cfg.get_int("model.resolution", 32);
  mc.seed = static_cast<std::uint64_t>(cfg.get_int("model.seed", cfg.get_int("train.seed", 0)));
  return mc;
}

std::filesystem::path dataset_root(const RunConfig& cfg) {
  std::string dir = cfg.get_str("data.dir", "");
  if (dir.empty()) {
    const char* env = std::getenv("SPECTRAL_GATE_DATA");
    if (env) dir = env;
  }
  if (dir.empty()) dir = "data";
  return dir;
}

struct LoadedData {
  data::Dataset train;
  data::Dataset test;
  data::Normalization norm;
};

LoadedData load_data(const RunConfig& cfg) {
  LoadedData out;
  const std::string kind = cfg.get_str("data.dataset", "synthetic");
  if (kind == "cifar10") {
    const auto root = dataset_root(cfg);
    try {
      auto cifar = data::load_cifar10(root);
      out.train = std::move(cifar.train);
      out.test = std::move(cifar.test);
    } catch (const std::runtime_error& e) {
      throw CliError(kExitIo, e.what());
    }
    out.norm = data::kCifarNorm;
  } else if (kind == "synthetic") {
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", 0));
    const int classes = static_cast<int>(cfg.get_int("model.classes", 10));
    out.train = data::synth_frequency_dataset(seed + 1, cfg.get_int("data.train_n", 2000), classes);
    out.test = data::synth_frequency_dataset(seed + 2, cfg.get_int("data.test_n", 512), classes);
    out.norm = data::kIdentityNorm;
  } else {
    throw CliError(kExitUsage, "unknown dataset kind: " + kind);
  }
  return out;
}

TrainRecipe recipe_from(const RunConfig& cfg) {
  TrainRecipe r;
  r.optimizer = cfg.get_str("train.optimizer", "sgd");
  r.lr = cfg.get_double("train.lr", 0.1);
  r.momentum = cfg.get_double("train.momentum", 0.9);
  r.weight_decay = cfg.get_double("train.weight_decay", 5e-4);
  r.beta1 = cfg.get_double("train.beta1", 0.9);
  r.beta2 = cfg.get_double("train.beta2", 0.999);
  r.batch_size = cfg.get_int("train.batch_size", 128);
  r.epochs = static_cast<int>(cfg.get_int("train.epochs", 100));
  r.warmup_epochs = static_cast<int>(cfg.get_int("train.warmup_epochs", 0));
  r.label_smoothing = cfg.get_double("train.label_smoothing", 0.0);
  r.augment = cfg.get_bool("train.augment", true);
  r.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  r.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every", 0));
  return r;
}

std::shared_ptr<Module<float>> build_from(const RunConfig& cfg) {
  try {
    return build_model<float>(model_config_from(cfg));
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitUsage, e.what());
  }
}

std::shared_ptr<Module<float>> build_and_load(const RunConfig& cfg,
                                              const std::filesystem::path& ckpt) {
  auto model = build_from(cfg);
  try {
    checkpoint_load(*model, ckpt);
  } catch (const CheckpointError& e) {
    throw CliError(kExitIo, e.what());
  }
  return model;
}

std::vector<std::string> probe_taps_for(const RunConfig& cfg) {
  const std::string family = cfg.get_str("model.family", "gmnet");
  if (family == "gmnet") {
    auto gm = gmnet_scale_config(cfg.get_str("model.scale", "s1-toy"),
                                 cfg.get_int("model.classes", 10),
                                 cfg.get_int("model.resolution", 32));
    return gmnet_probe_taps(gm);
  }
  if (family == "contribution") {
    std::vector<std::string> taps;
    for (int j = 0; j < 4; ++j) {
      taps.push_back("block" + std::to_string(j) + ".gate_in");
      taps.push_back("block" + std::to_string(j) + ".gate_out");
    }
    return taps;
  }
  throw CliError(kExitUsage, "spectral probes support gmnet and contribution families");
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_decompose(const std::string& input, const std::string& radii_text,
                  std::filesystem::path out_dir, const std::string& format) {
  std::vector<double> radii;
  try {
    radii = parse_radii(radii_text);
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitUsage, e.what());
  }
  imageio::RgbImage img;
  try {
    img = imageio::read_image(input);
  } catch (const std::runtime_error& e) {
    throw CliError(kExitUsage, e.what());
  }
  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);

  const Index h = img.height, w = img.width;
  const std::size_t bands = radii.size() + 1;
  std::vector<std::vector<float>> band_raw(bands);  // float-domain components
  for (auto& r : band_raw) r.assign(static_cast<std::size_t>(3 * h * w), 0.0f);

  spectral::Image chan(h, w);
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) chan(y, x) = img.plane(c)[y * w + x];
    auto split = spectral::band_split(chan, radii);
    for (std::size_t b = 0; b < bands; ++b)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
          band_raw[b][static_cast<std::size_t>((c * h + y) * w + x)] =
              static_cast<float>(split.components[b](y, x));
  }
  double residual = 0;
  for (std::size_t i = 0; i < band_raw[0].size(); ++i) {
    float sum = 0;
    for (std::size_t b = 0; b < bands; ++b) sum += band_raw[b][i];
    residual = std::max(residual, static_cast<double>(std::abs(sum - img.pixels[i])));
  }
  for (std::size_t b = 0; b < bands; ++b) {
    // band 0 carries the DC level; higher bands are zero-mean and get a
    // mid-gray offset for display
    imageio::RgbImage out;
    out.height = h;
    out.width = w;
    out.pixels.resize(band_raw[b].size());
    const float offset = b == 0 ? 0.0f : 0.5f;
    for (std::size_t i = 0; i < band_raw[b].size(); ++i)
      out.pixels[i] = band_raw[b][i] + offset;
    const auto stem = out_dir / ("band_" + std::to_string(b));
    if (format == "ppm")
      imageio::write_ppm(stem.string() + ".ppm", out);
    else
      imageio::write_png(stem.string() + ".png", out);
  }
  {
    std::ofstream res(out_dir / "residual.txt", std::ios::trunc);
    res << std::setprecision(17) << residual << "\n";
  }
  nlohmann::json j = {{"bands", bands}, {"residual", residual}, {"out", out_dir.string()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, std::filesystem::path out_dir) {
  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);

  auto model = build_from(cfg);
  TrainRecipe recipe = recipe_from(cfg);
  try {
    recipe.validate();
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitUsage, e.what());
  }
  LoadedData ds = load_data(cfg);

  cfg.set("data.normalization",
          cfg.get_str("data.dataset", "synthetic") == "cifar10" ? "cifar" : "identity");
  cfg.echo_to_file(out_dir / "config_resolved.txt");

  std::optional<FrequencyEvalSet> bands;
  if (cfg.has("eval.radii")) {
    const auto radii = cfg.get_radii("eval.radii", {});
    bands = FrequencyEvalSet::build(ds.test, radii);
  }
  std::ofstream jsonl(out_dir / "metrics.jsonl", std::ios::trunc);

  TrainOptions opt;
  opt.out_dir = out_dir;
  opt.norm = ds.norm;
  opt.jsonl = &jsonl;
  if (cfg.get_bool("eval.test", false)) opt.test = &ds.test;
  if (bands) opt.bands = &*bands;

  auto result = train_classifier(*model, recipe, ds.train, opt);
  nlohmann::json j = {
      {"epochs_run", result.records.size()},
      {"aborted_nan", result.aborted_nan},
      {"final_train_loss", result.records.empty()
                               ? nlohmann::json(nullptr)
                               : nlohmann::json(result.records.back().train_loss)},
      {"checkpoint", result.last_checkpoint.string()},
      {"out", out_dir.string()},
  };
  std::cout << j.dump() << "\n";
  return result.aborted_nan ? 1 : 0;
}

int cmd_eval_freq(RunConfig cfg, const std::filesystem::path& ckpt, const std::string& radii_text,
                  std::filesystem::path out_dir) {
  std::vector<double> radii;
  try {
    radii = parse_radii(radii_text);
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitUsage, e.what());
  }
  auto model = build_and_load(cfg, ckpt);
  LoadedData ds = load_data(cfg);
  auto eval_set = FrequencyEvalSet::build(ds.test, radii);
  auto result = eval_frequency(*model, eval_set, ds.norm);

  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);
  cfg.echo_to_file(out_dir / "config_resolved.txt");
  {
    std::ofstream csv(out_dir / "eval_freq.csv", std::ios::trunc);
    csv << "band_r_low,band_r_high,accuracy\n" << std::setprecision(10);
    csv << 0 << ",inf," << result.overall << "\n";
    for (const auto& b : result.bands) {
      csv << b.r_low << ",";
      if (std::isinf(b.r_high))
        csv << "inf";
      else
        csv << b.r_high;
      csv << "," << b.accuracy << "\n";
    }
  }
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : result.bands)
    jb.push_back({{"r_low", b.r_low},
                  {"r_high",
                   std::isinf(b.r_high) ? nlohmann::json("inf") : nlohmann::json(b.r_high)},
                  {"accuracy", b.accuracy}});
  nlohmann::json j = {{"overall", result.overall}, {"bands", jb}, {"out", out_dir.string()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& suite, bool check_only,
               std::filesystem::path out_dir) {
  AblationConfig acfg;
  acfg.seeds = static_cast<int>(cfg.get_int("ablate.seeds", 3));
  acfg.base_seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  acfg.train_n = cfg.get_int("data.train_n", 2000);
  acfg.test_n = cfg.get_int("data.test_n", 512);
  acfg.classes = static_cast<int>(cfg.get_int("model.classes", 10));
  acfg.recipe = recipe_from(cfg);

  if (check_only) {
    try {
      std::vector<std::pair<std::string, long long>> budgets;
      for (auto& v : detail::ablation_variants(suite, acfg.classes)) {
        ModelConfig mc = v.model;
        mc.seed = acfg.base_seed;
        budgets.emplace_back(v.name, build_model<float>(mc)->parameter_count());
      }
      for (auto& [name, p] : budgets) std::cout << name << " params=" << p << "\n";
      if (suite == "contribution_breakdown") verify_matched_budgets(budgets);
    } catch (const std::invalid_argument& e) {
      throw CliError(kExitUsage, e.what());
    } catch (const std::runtime_error& e) {
      throw CliError(kExitVerify, e.what());
    }
    std::cout << nlohmann::json({{"suite", suite}, {"budget_check", "pass"}}).dump() << "\n";
    return 0;
  }

  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);
  cfg.echo_to_file(out_dir / "config_resolved.txt");
  std::ofstream csv(out_dir / ("ablation_" + suite + ".csv"), std::ios::trunc);
  try {
    run_ablation(suite, acfg, &csv);
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitUsage, e.what());
  } catch (const std::runtime_error& e) {
    throw CliError(kExitVerify, e.what());
  }
  std::cout << nlohmann::json({{"suite", suite}, {"out", out_dir.string()}}).dump() << "\n";
  return 0;
}

int cmd_analyze_kernels(RunConfig cfg, const std::filesystem::path& ckpt,
                        std::filesystem::path out_dir) {
  auto model = ckpt.empty() ? build_from(cfg) : build_and_load(cfg, ckpt);
  auto rows = analyze_kernel_bandwidths(*model);
  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "kernel_bandwidths.csv", std::ios::trunc);
  write_probe_csv(csv, rows);
  std::cout << nlohmann::json({{"rows", rows.size()}, {"out", out_dir.string()}}).dump() << "\n";
  return 0;
}

int cmd_spectra(RunConfig cfg, const std::filesystem::path& ckpt, std::filesystem::path out_dir) {
  auto model = ckpt.empty() ? build_from(cfg) : build_and_load(cfg, ckpt);
  const Index probe_n = cfg.get_int("probe.n", 64);
  const Index res = cfg.get_int("model.resolution", 32);
  Tensor<float> batch;
  if (cfg.get_str("probe.source", "synthetic") == "noise") {
    batch = white_noise_batch(static_cast<std::uint64_t>(cfg.get_int("probe.seed", 0)), probe_n,
                              3, res, res);
  } else {
    auto ds = data::synth_frequency_dataset(
        static_cast<std::uint64_t>(cfg.get_int("probe.seed", 0)) + 2, probe_n,
        static_cast<int>(cfg.get_int("model.classes", 10)), res);
    std::vector<Index> idx(static_cast<std::size_t>(probe_n));
    for (Index i = 0; i < probe_n; ++i) idx[static_cast<std::size_t>(i)] = i;
    batch = data::make_batch(ds, idx, data::kIdentityNorm);
  }
  std::vector<ProbeRow> rows;
  try {
    rows = spectral_probe(*model, batch, probe_taps_for(cfg));
  } catch (const std::runtime_error& e) {
    throw CliError(kExitVerify, e.what());
  }
  if (out_dir.empty()) out_dir = default_out_dir();
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "spectra.csv", std::ios::trunc);
  write_probe_csv(csv, rows);
  std::cout << nlohmann::json({{"rows", rows.size()}, {"out", out_dir.string()}}).dump() << "\n";
  return 0;
}

int cmd_verify(const std::string& suite) {
  verify::CheckList checks;
  if (suite == "conv_theorem")
    checks = verify::conv_theorem_suite();
  else if (suite == "decay")
    checks = verify::decay_suite();
  else if (suite == "gradcheck")
    checks = verify::gradcheck_suite();
  else if (suite == "counts")
    checks = verify::counts_suite();
  else
    throw CliError(kExitUsage, "unknown verify suite: " + suite);
  for (const auto& c : checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " " << c.detail << "\n";
  if (!verify::all_passed(checks)) {
    fail_line("verify", "suite '" + suite + "' has failing checks");
    return kExitVerify;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-aware neural network laboratory"};
  app.require_subcommand(1);

  // decompose
  auto* decompose = app.add_subcommand("decompose", "split an image into frequency bands");
  std::string dec_input, dec_radii = "0,6,12,18,inf", dec_format = "png";
  std::filesystem::path dec_out;
  decompose->add_option("--input", dec_input, "PNG or binary PPM image")->required();
  decompose->add_option("--radii", dec_radii, "comma-separated cut radii");
  decompose->add_option("--out", dec_out, "output directory");
  decompose->add_option("--format", dec_format, "band image format: png|ppm")
      ->check(CLI::IsMember({"png", "ppm"}));

  auto add_config_flag = [](CLI::App* cmd, std::optional<std::string>& cfg_path) {
    cmd->add_option("--config", cfg_path, "key=value configuration file");
  };

  // train
  auto* train = app.add_subcommand("train", "train a model and stream metrics");
  std::optional<std::string> train_cfg_path;
  add_config_flag(train, train_cfg_path);
  ModelFlags train_model;
  train_model.add_to(train);
  std::optional<std::string> t_dataset, t_data_dir, t_optimizer, t_radii;
  std::optional<long long> t_epochs, t_batch, t_seed, t_warmup, t_train_n, t_test_n, t_ckpt_every;
  std::optional<double> t_lr, t_wd, t_momentum, t_smooth;
  bool t_eval_test = false, t_no_augment = false;
  std::filesystem::path train_out;
  train->add_option("--dataset", t_dataset, "synthetic|cifar10");
  train->add_option("--data", t_data_dir, "dataset root (or env SPECTRAL_GATE_DATA)");
  train->add_option("--optimizer", t_optimizer, "sgd|adamw");
  train->add_option("--epochs", t_epochs);
  train->add_option("--batch", t_batch);
  train->add_option("--seed", t_seed);
  train->add_option("--warmup", t_warmup);
  train->add_option("--train-n", t_train_n, "synthetic train size");
  train->add_option("--test-n", t_test_n, "synthetic test size");
  train->add_option("--checkpoint-every", t_ckpt_every);
  train->add_option("--lr", t_lr);
  train->add_option("--wd", t_wd);
  train->add_option("--momentum", t_momentum);
  train->add_option("--label-smoothing", t_smooth);
  train->add_flag("--eval-test", t_eval_test, "evaluate test accuracy every epoch");
  train->add_flag("--no-augment", t_no_augment);
  train->add_option("--radii", t_radii, "per-epoch band evaluation radii");
  train->add_option("--out", train_out, "output directory");

  // eval-freq
  auto* eval_freq = app.add_subcommand("eval-freq", "per-band accuracy of a checkpoint");
  std::optional<std::string> ef_cfg_path;
  add_config_flag(eval_freq, ef_cfg_path);
  ModelFlags ef_model;
  ef_model.add_to(eval_freq);
  std::filesystem::path ef_ckpt, ef_out;
  std::string ef_radii = "0,6,12,18,inf";
  std::optional<std::string> ef_dataset, ef_data_dir;
  std::optional<long long> ef_test_n;
  eval_freq->add_option("--checkpoint", ef_ckpt)->required();
  eval_freq->add_option("--radii", ef_radii);
  eval_freq->add_option("--dataset", ef_dataset, "synthetic|cifar10");
  eval_freq->add_option("--data", ef_data_dir);
  eval_freq->add_option("--test-n", ef_test_n);
  eval_freq->add_option("--out", ef_out);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  std::optional<std::string> ab_cfg_path;
  add_config_flag(ablate, ab_cfg_path);
  std::string ab_suite;
  bool ab_check_only = false;
  std::optional<long long> ab_seeds, ab_epochs, ab_train_n, ab_test_n, ab_batch, ab_classes;
  std::optional<double> ab_lr;
  std::filesystem::path ab_out;
  ablate
      ->add_option("--suite", ab_suite,
                   "activation_sweep|glu_design_sweep|contribution_breakdown")
      ->required();
  ablate->add_flag("--check-only", ab_check_only, "verify budgets, skip training");
  ablate->add_option("--seeds", ab_seeds);
  ablate->add_option("--epochs", ab_epochs);
  ablate->add_option("--train-n", ab_train_n);
  ablate->add_option("--test-n", ab_test_n);
  ablate->add_option("--batch", ab_batch);
  ablate->add_option("--classes", ab_classes);
  ablate->add_option("--lr", ab_lr);
  ablate->add_option("--out", ab_out);

  // analyze-kernels
  auto* kernels = app.add_subcommand("analyze-kernels", "kernel bandwidth histograms");
  std::optional<std::string> ak_cfg_path;
  add_config_flag(kernels, ak_cfg_path);
  ModelFlags ak_model;
  ak_model.add_to(kernels);
  std::filesystem::path ak_ckpt, ak_out;
  kernels->add_option("--checkpoint", ak_ckpt);
  kernels->add_option("--out", ak_out);

  // spectra
  auto* spectra = app.add_subcommand("spectra", "per-stage gate energy ratios");
  std::optional<std::string> sp_cfg_path;
  add_config_flag(spectra, sp_cfg_path);
  ModelFlags sp_model;
  sp_model.add_to(spectra);
  std::filesystem::path sp_ckpt, sp_out;
  std::optional<std::string> sp_source;
  std::optional<long long> sp_n, sp_seed;
  spectra->add_option("--checkpoint", sp_ckpt);
  spectra->add_option("--probe-source", sp_source, "synthetic|noise");
  spectra->add_option("--probe-n", sp_n);
  spectra->add_option("--probe-seed", sp_seed);
  spectra->add_option("--out", sp_out);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run a verification suite");
  std::string vf_suite;
  verify_cmd->add_option("--suite", vf_suite, "conv_theorem|decay|gradcheck|counts")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    fail_line("usage", e.what());
    return kExitUsage;
  }

  auto load_cfg = [&](const std::optional<std::string>& path) {
    if (!path) return RunConfig{};
    try {
      return RunConfig::from_file(*path);
    } catch (const std::runtime_error& e) {
      throw CliError(kExitIo, e.what());
    }
  };

  try {
    if (decompose->parsed()) return cmd_decompose(dec_input, dec_radii, dec_out, dec_format);
    if (train->parsed()) {
      RunConfig cfg = load_cfg(train_cfg_path);
      train_model.apply(cfg);
      if (t_dataset) cfg.set("data.dataset", *t_dataset);
      if (t_data_dir) cfg.set("data.dir", *t_data_dir);
      if (t_optimizer) cfg.set("train.optimizer", *t_optimizer);
      if (t_epochs) cfg.set("train.epochs", std::to_string(*t_epochs));
      if (t_batch) cfg.set("train.batch_size", std::to_string(*t_batch));
      if (t_seed) cfg.set("train.seed", std::to_string(*t_seed));
      if (t_warmup) cfg.set("train.warmup_epochs", std::to_string(*t_warmup));
      if (t_train_n) cfg.set("data.train_n", std::to_string(*t_train_n));
      if (t_test_n) cfg.set("data.test_n", std::to_string(*t_test_n));
      if (t_ckpt_every) cfg.set("train.checkpoint_every", std::to_string(*t_ckpt_every));
      if (t_lr) cfg.set("train.lr", std::to_string(*t_lr));
      if (t_wd) cfg.set("train.weight_decay", std::to_string(*t_wd));
      if (t_momentum) cfg.set("train.momentum", std::to_string(*t_momentum));
      if (t_smooth) cfg.set("train.label_smoothing", std::to_string(*t_smooth));
      if (t_eval_test) cfg.set("eval.test", "true");
      if (t_no_augment) cfg.set("train.augment", "false");
      if (t_radii) cfg.set("eval.radii", *t_radii);
      return cmd_train(std::move(cfg), train_out);
    }
    if (eval_freq->parsed()) {
      RunConfig cfg = load_cfg(ef_cfg_path);
      ef_model.apply(cfg);
      if (ef_dataset) cfg.set("data.dataset", *ef_dataset);
      if (ef_data_dir) cfg.set("data.dir", *ef_data_dir);
      if (ef_test_n) cfg.set("data.test_n", std::to_string(*ef_test_n));
      return cmd_eval_freq(std::move(cfg), ef_ckpt, ef_radii, ef_out);
    }
    if (ablate->parsed()) {
      RunConfig cfg = load_cfg(ab_cfg_path);
      if (ab_seeds) cfg.set("ablate.seeds", std::to_string(*ab_seeds));
      if (ab_epochs) cfg.set("train.epochs", std::to_string(*ab_epochs));
      if (ab_train_n) cfg.set("data.train_n", std::to_string(*ab_train_n));
      if (ab_test_n) cfg.set("data.test_n", std::to_string(*ab_test_n));
      if (ab_batch) cfg.set("train.batch_size", std::to_string(*ab_batch));
      if (ab_classes) cfg.set("model.classes", std::to_string(*ab_classes));
      if (ab_lr) cfg.set("train.lr", std::to_string(*ab_lr));
      if (!cfg.has("train.epochs")) cfg.set("train.epochs", "3");
      if (!cfg.has("train.batch_size")) cfg.set("train.batch_size", "32");
      if (!cfg.has("train.lr")) cfg.set("train.lr", "0.05");
      if (!cfg.has("train.augment")) cfg.set("train.augment", "false");
      return cmd_ablate(std::move(cfg), ab_suite, ab_check_only, ab_out);
    }
    if (kernels->parsed()) {
      RunConfig cfg = load_cfg(ak_cfg_path);
      ak_model.apply(cfg);
      return cmd_analyze_kernels(std::move(cfg), ak_ckpt, ak_out);
    }
    if (spectra->parsed()) {
      RunConfig cfg = load_cfg(sp_cfg_path);
      sp_model.apply(cfg);
      if (sp_source) cfg.set("probe.source", *sp_source);
      if (sp_n) cfg.set("probe.n", std::to_string(*sp_n));
      if (sp_seed) cfg.set("probe.seed", std::to_string(*sp_seed));
      return cmd_spectra(std::move(cfg), sp_ckpt, sp_out);
    }
    if (verify_cmd->parsed()) return cmd_verify(vf_suite);
  } catch (const CliError& e) {
    fail_line(e.code == kExitUsage ? "usage" : (e.code == kExitIo ? "io" : "verify"), e.what());
    return e.code;
  } catch (const std::invalid_argument& e) {
    fail_line("usage", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fail_line("error", e.what());
    return 1;
  }
  return 0;
}
