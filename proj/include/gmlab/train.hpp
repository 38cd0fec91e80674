#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gmlab/checkpoint.hpp"
#include "gmlab/data.hpp"
#include "gmlab/eval.hpp"
#include "gmlab/nn.hpp"

namespace gmlab {

struct TrainRecipe {
  std::string optimizer = "sgd";  // sgd | adamw
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 128;
  int epochs = 100;
  int warmup_epochs = 0;
  double label_smoothing = 0.0;
  bool augment = true;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // extra numbered checkpoints every k epochs; 0 = none

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("recipe: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("recipe: batch_size must be positive");
    if (epochs < 1) throw std::invalid_argument("recipe: epochs must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw std::invalid_argument("recipe: warmup_epochs must be in [0, epochs)");
    if (optimizer != "sgd" && optimizer != "adamw")
      throw std::invalid_argument("recipe: unknown optimizer " + optimizer);
  }
};

/// Cosine decay to zero after a linear warmup:
///   t <  W : lr * (t+1)/W
///   t >= W : lr/2 * (1 + cos(pi (t-W)/(T-W)))
inline double cosine_lr(const TrainRecipe& r, int epoch) {
  if (epoch < r.warmup_epochs)
    return r.lr * static_cast<double>(epoch + 1) / static_cast<double>(r.warmup_epochs);
  const double t = static_cast<double>(epoch - r.warmup_epochs);
  const double span = static_cast<double>(r.epochs - r.warmup_epochs);
  return 0.5 * r.lr * (1.0 + std::cos(std::numbers::pi * t / span));
}

/// SGD with momentum (coupled weight decay) and AdamW (decoupled).
class Optimizer {
 public:
  Optimizer(std::vector<Tensor<float>> params, const TrainRecipe& recipe)
      : params_(std::move(params)), recipe_(recipe) {
    state_m_.resize(params_.size());
    state_v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      state_m_[i] = ArrayX<float>::Zero(params_[i].numel());
      if (recipe_.optimizer == "adamw") state_v_[i] = ArrayX<float>::Zero(params_[i].numel());
    }
  }

  void step(double lr) {
    ++t_;
    const auto lrf = static_cast<float>(lr);
    if (recipe_.optimizer == "sgd") {
      const auto wd = static_cast<float>(recipe_.weight_decay);
      const auto mu = static_cast<float>(recipe_.momentum);
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        ArrayX<float> g = p.grad() + wd * p.value();
        state_m_[i] = mu * state_m_[i] + g;
        p.value() -= lrf * state_m_[i];
      }
    } else {
      const auto wd = static_cast<float>(recipe_.weight_decay);
      const auto b1 = static_cast<float>(recipe_.beta1);
      const auto b2 = static_cast<float>(recipe_.beta2);
      const auto eps = static_cast<float>(recipe_.adam_eps);
      const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t_));
      const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t_));
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        p.value() -= lrf * wd * p.value();
        const auto& g = p.grad();
        state_m_[i] = b1 * state_m_[i] + (1.0f - b1) * g;
        state_v_[i] = b2 * state_v_[i] + (1.0f - b2) * g * g;
        p.value() -= lrf * (state_m_[i] / bc1) / ((state_v_[i] / bc2).sqrt() + eps);
      }
    }
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<float>> params_;
  TrainRecipe recipe_;
  std::vector<ArrayX<float>> state_m_, state_v_;
  long long t_ = 0;
};

/// One epoch's measurements.
struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0;
  double lr = 0;
  std::optional<double> test_accuracy;
  std::vector<BandAccuracy> band_accuracy;
};

/// JSON-lines serialization; one object per measurement with keys
/// {epoch, split, band_r_low, band_r_high, accuracy, loss, lr}.
void append_metrics_jsonl(std::ostream& os, const MetricsRecord& rec);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  const data::Dataset* test = nullptr;
  const FrequencyEvalSet* bands = nullptr;
  data::Normalization norm;
  std::ostream* jsonl = nullptr;
  Index eval_batch = 256;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  bool aborted_nan = false;
  std::filesystem::path last_checkpoint;
};

/// Runs the recipe: shuffled minibatches, per-epoch cosine learning rate,
/// optional per-epoch test/band evaluation, checkpoint after every epoch.
/// A non-finite loss aborts immediately and keeps the last good checkpoint.
inline TrainResult train_classifier(Module<float>& model, const TrainRecipe& recipe,
                                    const data::Dataset& train_set, const TrainOptions& opt) {
  recipe.validate();
  TrainResult result;
  const bool to_disk = !opt.out_dir.empty();
  if (to_disk) std::filesystem::create_directories(opt.out_dir);
  const auto ckpt_path = opt.out_dir / "last_good.gmck";
  if (to_disk) {
    checkpoint_save(model, ckpt_path);
    result.last_checkpoint = ckpt_path;
  }

  Optimizer optimizer(
      [&] {
        std::vector<Tensor<float>> p;
        model.visit_parameters([&](const std::string&, Tensor<float>& t) { p.push_back(t); });
        return p;
      }(),
      recipe);

  std::mt19937_64 data_rng(recipe.seed);
  std::vector<Index> order(static_cast<std::size_t>(train_set.n));
  for (Index i = 0; i < train_set.n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double lr = cosine_lr(recipe, epoch);
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), data_rng);
    double loss_sum = 0;
    Index batches = 0;
    for (Index start = 0; start + recipe.batch_size <= train_set.n;
         start += recipe.batch_size) {
      std::vector<Index> idx(order.begin() + start, order.begin() + start + recipe.batch_size);
      Tensor<float> x = data::make_batch(train_set, idx, opt.norm, recipe.augment, &data_rng);
      const std::vector<int> labels = data::gather_labels(train_set, idx);
      Tape<float> tape;
      Tensor<float> logits = model.forward(x);
      Tensor<float> loss =
          softmax_cross_entropy(logits, labels, static_cast<float>(recipe.label_smoothing));
      const double loss_v = loss.item();
      if (!std::isfinite(loss_v)) {
        result.aborted_nan = true;
        std::fputs("gmlab: non-finite loss, aborting run (last good checkpoint kept)\n", stderr);
        return result;
      }
      tape.backward(loss);
      optimizer.step(lr);
      loss_sum += loss_v;
      ++batches;
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    if (opt.test)
      rec.test_accuracy = evaluate_accuracy(model, *opt.test, opt.norm, opt.eval_batch);
    if (opt.bands) {
      auto freq = eval_frequency(model, *opt.bands, opt.norm, opt.eval_batch);
      if (!opt.test) rec.test_accuracy = freq.overall;
      rec.band_accuracy = std::move(freq.bands);
    }
    if (opt.jsonl) append_metrics_jsonl(*opt.jsonl, rec);
    result.records.push_back(std::move(rec));

    if (to_disk) {
      checkpoint_save(model, ckpt_path);
      if (recipe.checkpoint_every > 0 && (epoch + 1) % recipe.checkpoint_every == 0)
        checkpoint_save(model,
                        opt.out_dir / ("epoch_" + std::to_string(epoch + 1) + ".gmck"));
    }
  }
  if (to_disk) {
    const auto final_path = opt.out_dir / "final.gmck";
    checkpoint_save(model, final_path);
    result.last_checkpoint = final_path;
  }
  return result;
}

}  // namespace gmlab
