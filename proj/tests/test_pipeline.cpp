#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gmlab/ablation.hpp"
#include "gmlab/config.hpp"
#include "gmlab/models.hpp"
#include "gmlab/probes.hpp"
#include "gmlab/train.hpp"

using namespace gmlab;

namespace {

std::filesystem::path temp_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "gmlab_pipeline" / name;
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small fixed-width model for fast pipeline tests.
std::shared_ptr<Module<float>> tiny_model(int classes, std::uint64_t seed) {
  auto v = ContributionNet<float>::variant_by_name("full");
  return std::make_shared<ContributionNet<float>>(v, classes, seed, /*width=*/16, /*depth=*/2,
                                                  /*mlp_ratio=*/2);
}

}  // namespace

TEST_CASE("cifar record parsing and loader errors") {
  const auto dir = temp_dir("cifar");
  const auto file = dir / "data_batch_1.bin";
  {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    // two records: label byte + R,G,B planes
    for (int rec = 0; rec < 2; ++rec) {
      out.put(static_cast<char>(rec == 0 ? 7 : 2));
      for (int i = 0; i < 3072; ++i) out.put(static_cast<char>((rec * 31 + i) % 256));
    }
  }
  auto ds = data::load_cifar10_file(file);
  CHECK(ds.n == 2);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.labels[1] == 2);
  // byte 1 of the record is pixel (0,0) of the R plane
  CHECK(ds.image(0)[0] == doctest::Approx(0.0f / 255.0f));
  CHECK(ds.image(0)[1] == doctest::Approx(1.0f / 255.0f));
  // the G plane starts 1024 pixels in
  CHECK(ds.image(0)[1024] == doctest::Approx((1024 % 256) / 255.0f));

  SUBCASE("missing file error names the file") {
    try {
      data::load_cifar10(dir);  // test_batch.bin absent
      FAIL("expected missing-file error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(".bin") != std::string::npos);
    }
  }
  SUBCASE("truncated file is rejected") {
    const auto bad = dir / "trunc.bin";
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    out.write("abc", 3);
    out.close();
    CHECK_THROWS_WITH_AS(static_cast<void>(data::load_cifar10_file(bad)),
                         doctest::Contains("truncated"), std::runtime_error);
  }
}

TEST_CASE("synthetic dataset: determinism and band concentration") {
  auto a = data::synth_frequency_dataset(3, 40, 4);
  auto b = data::synth_frequency_dataset(3, 40, 4);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);

  const auto edges = data::synth_band_edges(4);
  // interior cuts for band_split: edges without the outermost bracket
  std::vector<double> cuts(edges.begin() + 1, edges.end() - 1);
  cuts.insert(cuts.begin(), edges.front());
  for (Index i = 0; i < 8; ++i) {
    const int cls = a.labels[static_cast<std::size_t>(i)];
    spectral::Image img(32, 32);
    const float* plane = a.image(i);  // first channel
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) img(y, x) = plane[y * 32 + x];
    auto split = spectral::band_split(img, cuts);
    // bands: [0,edge0) [edge0,edge1) ... ; class k concentrates in band k+1
    std::vector<double> energy(split.components.size());
    double total = 0;
    for (std::size_t bnd = 0; bnd < split.components.size(); ++bnd) {
      energy[bnd] = spectral::spatial_energy(split.components[bnd]);
      total += energy[bnd];
    }
    CHECK(energy[static_cast<std::size_t>(cls) + 1] / total >= 0.8);
  }
}

TEST_CASE("batch assembly normalizes and augments deterministically") {
  auto ds = data::synth_frequency_dataset(5, 8, 2);
  data::Normalization norm{{0.5f, 0.5f, 0.5f}, {2.0f, 2.0f, 2.0f}};
  auto plain = data::make_batch(ds, {0, 1}, norm);
  CHECK(plain.shape() == Shape{2, 3, 32, 32});
  CHECK(plain.value()[0] == doctest::Approx((ds.image(0)[0] - 0.5f) / 2.0f));

  std::mt19937_64 r1(9), r2(9);
  auto a = data::make_batch(ds, {0, 1, 2}, norm, true, &r1);
  auto b = data::make_batch(ds, {0, 1, 2}, norm, true, &r2);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  CHECK_THROWS_AS(data::make_batch(ds, {0}, norm, true, nullptr), std::invalid_argument);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  TrainRecipe r;
  r.lr = 0.1;
  r.epochs = 100;
  r.warmup_epochs = 0;
  CHECK(cosine_lr(r, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(cosine_lr(r, 50) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(r, 100)) < 1e-12);

  r.warmup_epochs = 5;
  CHECK(cosine_lr(r, 0) == doctest::Approx(0.1 / 5.0));
  CHECK(cosine_lr(r, 4) == doctest::Approx(0.1));
  CHECK(cosine_lr(r, 5) == doctest::Approx(0.1));  // cosine starts at base
  CHECK(std::abs(cosine_lr(r, 100)) < 1e-12);

  TrainRecipe bad = r;
  bad.lr = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = r;
  bad.warmup_epochs = 200;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = r;
  bad.optimizer = "lion";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("two-epoch smoke run: training loss decreases") {
  auto train_set = data::synth_frequency_dataset(11, 256, 4);
  auto model = tiny_model(4, 1);
  TrainRecipe recipe;
  recipe.optimizer = "sgd";
  recipe.lr = 0.05;
  recipe.batch_size = 32;
  recipe.epochs = 2;
  recipe.augment = false;
  recipe.seed = 5;
  TrainOptions opt;
  auto result = train_classifier(*model, recipe, train_set, opt);
  REQUIRE(result.records.size() == 2);
  CHECK_FALSE(result.aborted_nan);
  CHECK(result.records[1].train_loss < result.records[0].train_loss);
}

TEST_CASE("adamw smoke run stays finite and learns") {
  auto train_set = data::synth_frequency_dataset(13, 128, 2);
  auto model = tiny_model(2, 2);
  TrainRecipe recipe;
  recipe.optimizer = "adamw";
  recipe.lr = 3e-3;
  recipe.weight_decay = 0.03;
  recipe.batch_size = 32;
  recipe.epochs = 3;
  recipe.warmup_epochs = 1;
  recipe.augment = false;
  TrainOptions opt;
  auto result = train_classifier(*model, recipe, train_set, opt);
  REQUIRE(result.records.size() == 3);
  CHECK(result.records.back().train_loss < result.records.front().train_loss);
}

TEST_CASE("fixed seed reproduces the first-epoch loss bitwise") {
  auto train_set = data::synth_frequency_dataset(17, 96, 3);
  auto run = [&] {
    auto model = tiny_model(3, 7);
    TrainRecipe recipe;
    recipe.lr = 0.02;
    recipe.batch_size = 32;
    recipe.epochs = 1;
    recipe.seed = 21;
    TrainOptions opt;
    return train_classifier(*model, recipe, train_set, opt).records[0].train_loss;
  };
  const double a = run();
  const double b = run();
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("non-finite loss aborts and keeps the last good checkpoint") {
  auto train_set = data::synth_frequency_dataset(19, 64, 2);
  auto model = tiny_model(2, 3);
  // poison one parameter
  model->visit_parameters([](const std::string& name, Tensor<float>& t) {
    if (name == "stem.weight") t.value()[0] = std::numeric_limits<float>::infinity();
  });
  TrainRecipe recipe;
  recipe.epochs = 2;
  recipe.batch_size = 32;
  recipe.seed = 1;
  TrainOptions opt;
  opt.out_dir = temp_dir("nan_abort");
  auto result = train_classifier(*model, recipe, train_set, opt);
  CHECK(result.aborted_nan);
  CHECK(std::filesystem::exists(opt.out_dir / "last_good.gmck"));
  auto fresh = tiny_model(2, 3);
  checkpoint_load(*fresh, opt.out_dir / "last_good.gmck");  // loadable, not corrupted
}

TEST_CASE("frequency eval set structure and reconstruction") {
  auto test_set = data::synth_frequency_dataset(23, 12, 3);
  auto eval_set = FrequencyEvalSet::build(test_set, {6, 12, 18});
  REQUIRE(eval_set.bands.size() == 4);
  for (const auto& b : eval_set.bands) {
    CHECK(b.n == test_set.n);
    CHECK(b.labels == test_set.labels);
  }
  CHECK(eval_set.band_range(0) == std::pair{0.0, 6.0});
  CHECK(eval_set.band_range(3).first == 18.0);
  CHECK(std::isinf(eval_set.band_range(3).second));
  // the bands sum back to the raw image
  for (Index px = 0; px < test_set.image_size(); ++px) {
    float sum = 0;
    for (const auto& b : eval_set.bands) sum += b.image(5)[px];
    CHECK(sum == doctest::Approx(test_set.image(5)[px]).epsilon(1e-4));
  }
}

TEST_CASE("untrained model sits at chance level on every band") {
  auto test_set = data::synth_frequency_dataset(29, 10000, 10);
  auto eval_set = FrequencyEvalSet::build(test_set, {10.0});
  auto model = tiny_model(10, 31);
  auto freq = eval_frequency(*model, eval_set, data::kIdentityNorm);
  CHECK(freq.overall == doctest::Approx(0.1).epsilon(0.2));
  for (const auto& band : freq.bands) {
    CAPTURE(band.r_low);
    CHECK(band.accuracy > 0.08);
    CHECK(band.accuracy < 0.12);
  }
}

TEST_CASE("model predictions on the all-band sum match the raw predictions") {
  auto test_set = data::synth_frequency_dataset(37, 1000, 4);
  auto eval_set = FrequencyEvalSet::build(test_set, {6, 12, 18});
  data::Dataset summed = test_set;
  std::fill(summed.images.begin(), summed.images.end(), 0.0f);
  for (const auto& b : eval_set.bands)
    for (std::size_t i = 0; i < summed.images.size(); ++i) summed.images[i] += b.images[i];

  auto model = tiny_model(4, 41);
  model->set_training(false);
  std::vector<Index> idx(static_cast<std::size_t>(test_set.n));
  for (Index i = 0; i < test_set.n; ++i) idx[static_cast<std::size_t>(i)] = i;
  auto raw_pred = argmax_rows(model->forward(data::make_batch(test_set, idx, data::kIdentityNorm)));
  auto sum_pred = argmax_rows(model->forward(data::make_batch(summed, idx, data::kIdentityNorm)));
  Index agree = 0;
  for (std::size_t i = 0; i < raw_pred.size(); ++i)
    if (raw_pred[i] == sum_pred[i]) ++agree;
  CHECK(agree >= 999);
}

TEST_CASE("metrics jsonl shape") {
  MetricsRecord rec;
  rec.epoch = 3;
  rec.train_loss = 1.25;
  rec.lr = 0.05;
  SUBCASE("train-only epoch emits exactly one object") {
    std::ostringstream os;
    append_metrics_jsonl(os, rec);
    std::istringstream in(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j["epoch"] == 3);
      CHECK(j["split"] == "train");
      CHECK(j["band_r_high"] == "inf");
      CHECK(j.contains("accuracy"));
      CHECK(j.contains("loss"));
      CHECK(j.contains("lr"));
      ++lines;
    }
    CHECK(lines == 1);
  }
  SUBCASE("bands add one object each") {
    rec.test_accuracy = 0.5;
    rec.band_accuracy = {{0.0, 10.0, 0.4}, {10.0, std::numeric_limits<double>::infinity(), 0.2}};
    std::ostringstream os;
    append_metrics_jsonl(os, rec);
    std::istringstream in(os.str());
    std::string line;
    std::vector<nlohmann::json> lines;
    while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 4);
    CHECK(lines[1]["split"] == "test");
    CHECK(lines[1]["accuracy"] == 0.5);
    CHECK(lines[2]["split"] == "test_band");
    CHECK(lines[2]["band_r_high"] == 10.0);
    CHECK(lines[3]["band_r_high"] == "inf");
  }
}

TEST_CASE("ablation suite enumerations") {
  using detail::ablation_variants;
  auto glu = ablation_variants("glu_design_sweep", 10);
  REQUIRE(glu.size() == 6);
  CHECK(glu[0].name == "simple");
  CHECK(glu[1].name == "ln");
  CHECK(glu[2].name == "dw");
  CHECK(glu[3].name == "pool_diff");
  CHECK(glu[4].name == "fc");
  CHECK(glu[5].name == "fc_sigma");
  auto acts = ablation_variants("activation_sweep", 10);
  REQUIRE(acts.size() == 4);
  CHECK(acts[0].name == "identity");
  CHECK(acts[3].name == "relu6");
  auto contrib = ablation_variants("contribution_breakdown", 10);
  REQUIRE(contrib.size() == 8);
  CHECK_THROWS_AS(ablation_variants("nope", 10), std::invalid_argument);
}

TEST_CASE("matched-budget verification") {
  verify_matched_budgets({{"a", 1000}, {"b", 1010}, {"c", 995}});
  CHECK_THROWS_WITH_AS(verify_matched_budgets({{"a", 1000}, {"b", 1500}}),
                       doctest::Contains("budgets differ"), std::runtime_error);
}

TEST_CASE("tiny ablation run produces the reporting contract") {
  AblationConfig cfg;
  cfg.seeds = 1;
  cfg.base_seed = 3;
  cfg.train_n = 64;
  cfg.test_n = 32;
  cfg.classes = 4;
  cfg.recipe.epochs = 1;
  cfg.recipe.batch_size = 32;
  cfg.recipe.lr = 0.05;
  cfg.recipe.augment = false;
  std::ostringstream csv;
  auto rows = run_ablation("activation_sweep", cfg, &csv);
  // per variant: 3 per-seed rows + mean/std/n_seeds + single-seed flag
  CHECK(rows.size() == 4 * 7);
  int n_seed_rows = 0, flags = 0;
  for (const auto& r : rows) {
    if (r.metric == "n_seeds") {
      CHECK(r.value == 1.0);
      ++n_seed_rows;
    }
    if (r.metric == "single_seed_flag") ++flags;
  }
  CHECK(n_seed_rows == 4);
  CHECK(flags == 4);
  CHECK(csv.str().rfind("variant,seed,metric,value\n", 0) == 0);
}

TEST_CASE("spectral probe on an untrained model") {
  ModelConfig mc;
  mc.scale = "s1-toy";
  mc.seed = 5;
  auto model = build_model<float>(mc);
  auto cfg = gmnet_scale_config("s1-toy", 10, 32);
  auto taps = gmnet_probe_taps(cfg);
  auto batch = white_noise_batch(1, 4, 3, 32, 32);
  auto rows = spectral_probe(*model, batch, taps);
  REQUIRE(rows.size() >= taps.size());
  for (const auto& r : rows) {
    if (r.metric != "high_low_ratio") continue;
    CAPTURE(r.layer);
    CHECK(r.value > 0.0);
    CHECK(std::isfinite(r.value));
    CHECK(r.stage.rfind("stage", 0) == 0);
  }
  SUBCASE("missing tap is an error naming the layer") {
    CHECK_THROWS_WITH_AS(spectral_probe(*model, batch, {"stage9.block0.gate_in"}),
                         doctest::Contains("stage9.block0.gate_in"), std::runtime_error);
  }
}

TEST_CASE("identity-gate probe recomputes the post-gate ratio") {
  ModelConfig mc;
  mc.scale = "s1-toy";
  mc.act = Activation::Identity;
  mc.seed = 9;
  auto model = build_model<float>(mc);
  auto batch = white_noise_batch(2, 2, 3, 32, 32);

  // capture the raw gate input of stage0.block0 ourselves
  Tensor<float> gate_in;
  TapSink<float> sink;
  sink.put = [&](const std::string& name, const Tensor<float>& t) {
    if (name == "stage0.block0.gate_in") gate_in = t;
  };
  model->set_training(false);
  {
    TapSink<float>::Scope scope(sink);
    model->forward(batch);
  }
  REQUIRE(gate_in.numel() > 0);
  Tensor<float> squared(gate_in.shape());
  squared.value() = gate_in.value() * gate_in.value();
  const double manual = spectral::energy_ratio_high_low_nchw(squared).ratio;

  auto rows = spectral_probe(*model, batch,
                             {"stage0.block0.gate_in", "stage0.block0.gate_out"});
  double f_ratio = -1, g_ratio = -1;
  for (const auto& r : rows) {
    if (r.layer == "stage0.block0.gate_in") f_ratio = r.value;
    if (r.layer == "stage0.block0.gate_out") g_ratio = r.value;
  }
  CHECK(g_ratio == doctest::Approx(manual).epsilon(1e-9));
  CHECK(g_ratio != doctest::Approx(f_ratio).epsilon(1e-6));  // squaring moved energy
}

TEST_CASE("kernel bandwidth analysis walks spatial convs only") {
  ModelConfig mc;
  mc.scale = "s1-toy";
  mc.seed = 13;
  auto model = build_model<float>(mc);
  auto rows = analyze_kernel_bandwidths(*model);
  long long kernels = 0, hist_total = 0;
  for (const auto& r : rows) {
    // block-internal 1x1 convs are excluded; block rows must be DW kernels
    if (r.layer.find("block") != std::string::npos)
      CHECK(r.layer.find(".dw") != std::string::npos);
    if (r.metric == "kernel_bandwidth") {
      ++kernels;
      CHECK(r.value > 0.0);
      CHECK(r.value <= 1.0);
    } else {
      hist_total += static_cast<long long>(r.value);
    }
  }
  CHECK(kernels > 0);
  CHECK(hist_total == kernels);
}

TEST_CASE("run config parsing, overrides, and radii") {
  const auto dir = temp_dir("config");
  const auto file = dir / "run.cfg";
  {
    std::ofstream out(file);
    out << "# comment\n[model]\nfamily = resnet18\nvariant = gate\n\n[train]\nlr = 0.1\n"
        << "epochs = 100\naugment = true\n[eval]\nradii = 0,6,12,18,inf\n";
  }
  auto cfg = RunConfig::from_file(file);
  CHECK(cfg.get_str("model.family", "") == "resnet18");
  CHECK(cfg.get_double("train.lr", 0) == 0.1);
  CHECK(cfg.get_int("train.epochs", 0) == 100);
  CHECK(cfg.get_bool("train.augment", false));
  auto radii = cfg.get_radii("eval.radii", {});
  CHECK(radii == std::vector<double>{6, 12, 18});

  cfg.set("train.lr", "0.5");  // flag override
  CHECK(cfg.get_double("train.lr", 0) == 0.5);

  std::ostringstream echo;
  cfg.echo(echo);
  CHECK(echo.str().find("[train]") != std::string::npos);
  CHECK(echo.str().find("lr = 0.5") != std::string::npos);

  CHECK(parse_radii("10") == std::vector<double>{10});
  CHECK(parse_radii("0,6,12,18") == std::vector<double>{6, 12, 18});
  CHECK_THROWS_AS(parse_radii(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_radii("12,6"), std::invalid_argument);
  CHECK_THROWS_AS(parse_radii("0"), std::invalid_argument);
}
