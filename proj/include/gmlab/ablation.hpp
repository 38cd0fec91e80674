#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gmlab/models.hpp"
#include "gmlab/train.hpp"

namespace gmlab {

struct AblationConfig {
  TrainRecipe recipe;          // per-run recipe (epochs/batch scaled for desk runs)
  int seeds = 3;
  std::uint64_t base_seed = 0;
  Index train_n = 2000;
  Index test_n = 512;
  int classes = 10;
  double eval_cut_radius = 10.0;  // single low/high split for the report
  // dataset: synthetic by default; callers may supply their own pair
  const data::Dataset* train_set = nullptr;
  const data::Dataset* test_set = nullptr;
  data::Normalization norm;  // identity for synthetic data
};

struct AblationRow {
  std::string variant;
  std::string seed;  // seed index, or "agg" for aggregates
  std::string metric;
  double value = 0;
};

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,seed,metric,value\n";
  os << std::setprecision(10);
  for (const auto& r : rows) os << r.variant << "," << r.seed << "," << r.metric << "," << r.value
                                << "\n";
}

/// Matched-budget gate: every variant must be within rel_tol of the
/// smallest parameter count, checked before any training starts.
inline void verify_matched_budgets(const std::vector<std::pair<std::string, long long>>& budgets,
                                   double rel_tol = 0.03) {
  if (budgets.empty()) return;
  long long lo = budgets.front().second, hi = lo;
  for (const auto& [name, p] : budgets) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  if (static_cast<double>(hi - lo) / static_cast<double>(hi) > rel_tol) {
    std::ostringstream os;
    os << "ablation: parameter budgets differ beyond " << rel_tol * 100 << "%:";
    for (const auto& [name, p] : budgets) os << " " << name << "=" << p;
    throw std::runtime_error(os.str());
  }
}

namespace detail {

struct AblationVariant {
  std::string name;
  ModelConfig model;
};

inline std::vector<AblationVariant> ablation_variants(const std::string& suite, int classes) {
  std::vector<AblationVariant> out;
  auto base = [&] {
    ModelConfig mc;
    mc.family = "gmnet";
    mc.scale = "s1-toy";
    mc.num_classes = classes;
    mc.input_resolution = 32;
    return mc;
  };
  if (suite == "activation_sweep") {
    for (auto act : {Activation::Identity, Activation::ReLU, Activation::GELU,
                     Activation::ReLU6}) {
      ModelConfig mc = base();
      mc.act = act;
      out.push_back({to_string(act), mc});
    }
  } else if (suite == "glu_design_sweep") {
    for (auto v : kAllGluVariants) {
      ModelConfig mc = base();
      mc.glu = v;
      mc.act = Activation::ReLU6;
      out.push_back({to_string(v), mc});
    }
  } else if (suite == "contribution_breakdown") {
    for (const auto& v : ContributionNet<float>::variants()) {
      ModelConfig mc;
      mc.family = "contribution";
      mc.scale = v.name;
      mc.num_classes = classes;
      out.push_back({v.name, mc});
    }
  } else {
    throw std::invalid_argument("unknown ablation suite: " + suite);
  }
  return out;
}

}  // namespace detail

/// Trains every variant of a suite over the configured seeds and reports
/// final raw accuracy plus low/high accuracy at the configured cut. The
/// contribution suite verifies matched budgets before any training.
inline std::vector<AblationRow> run_ablation(const std::string& suite, const AblationConfig& cfg,
                                             std::ostream* csv = nullptr) {
  auto variants = detail::ablation_variants(suite, cfg.classes);

  {
    std::vector<std::pair<std::string, long long>> budgets;
    for (auto& v : variants) {
      ModelConfig mc = v.model;
      mc.seed = cfg.base_seed;
      budgets.emplace_back(v.name, build_model<float>(mc)->parameter_count());
    }
    if (suite == "contribution_breakdown") verify_matched_budgets(budgets);
  }

  data::Dataset train_local, test_local;
  const data::Dataset* train_set = cfg.train_set;
  const data::Dataset* test_set = cfg.test_set;
  if (!train_set) {
    train_local = data::synth_frequency_dataset(cfg.base_seed + 1, cfg.train_n, cfg.classes);
    train_set = &train_local;
  }
  if (!test_set) {
    test_local = data::synth_frequency_dataset(cfg.base_seed + 2, cfg.test_n, cfg.classes);
    test_set = &test_local;
  }
  FrequencyEvalSet eval_set = FrequencyEvalSet::build(*test_set, {cfg.eval_cut_radius});

  std::vector<AblationRow> rows;
  for (auto& variant : variants) {
    std::vector<double> accs, lows, highs;
    for (int s = 0; s < cfg.seeds; ++s) {
      ModelConfig mc = variant.model;
      mc.seed = cfg.base_seed + static_cast<std::uint64_t>(s);
      auto model = build_model<float>(mc);
      TrainRecipe recipe = cfg.recipe;
      recipe.seed = mc.seed;
      TrainOptions opt;
      opt.norm = cfg.norm;
      train_classifier(*model, recipe, *train_set, opt);
      auto freq = eval_frequency(*model, eval_set, cfg.norm);
      const double low = freq.bands.at(0).accuracy;
      const double high = freq.bands.at(1).accuracy;
      rows.push_back({variant.name, std::to_string(s), "accuracy", freq.overall});
      rows.push_back({variant.name, std::to_string(s), "acc_low_r10", low});
      rows.push_back({variant.name, std::to_string(s), "acc_high_r10", high});
      accs.push_back(freq.overall);
      lows.push_back(low);
      highs.push_back(high);
    }
    auto mean_std = [](const std::vector<double>& v) {
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s2 = 0;
      for (double x : v) s2 += (x - m) * (x - m);
      const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
      return std::pair{m, sd};
    };
    const auto [am, as] = mean_std(accs);
    rows.push_back({variant.name, "agg", "accuracy_mean", am});
    rows.push_back({variant.name, "agg", "accuracy_std", as});
    rows.push_back({variant.name, "agg", "n_seeds", static_cast<double>(cfg.seeds)});
    if (cfg.seeds == 1) rows.push_back({variant.name, "agg", "single_seed_flag", 1.0});
  }
  if (csv) write_ablation_csv(*csv, rows);
  return rows;
}

}  // namespace gmlab
