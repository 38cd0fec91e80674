#pragma once

#include <array>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlab/blocks.hpp"
#include "gmlab/nn.hpp"

namespace gmlab {

/// One network scale. Stage widths double from c1; depths/ratios are per
/// stage. Four tabulated scales are exposed through gmnet_scale_config.
struct GmNetConfig {
  Index c1 = 48;
  std::array<Index, 4> depths{3, 3, 8, 3};
  std::array<Index, 4> ratios{4, 4, 4, 4};
  double drop_path = 0.0;
  Index num_classes = 1000;
  Index input_resolution = 224;
  GluVariant variant = GluVariant::SimpleGate;
  Activation act = Activation::ReLU6;
};

inline GmNetConfig gmnet_scale_config(const std::string& scale, Index num_classes = 1000,
                                      Index input_resolution = 224) {
  GmNetConfig cfg;
  cfg.num_classes = num_classes;
  cfg.input_resolution = input_resolution;
  if (scale == "s1") {
    cfg.c1 = 40;
    cfg.depths = {2, 2, 10, 2};
    cfg.ratios = {3, 3, 3, 2};
    cfg.drop_path = 0.0;
  } else if (scale == "s2") {
    cfg.c1 = 48;
    cfg.depths = {2, 2, 8, 3};
    cfg.ratios = {3, 3, 3, 2};
    cfg.drop_path = 0.0;
  } else if (scale == "s3") {
    cfg.c1 = 48;
    cfg.depths = {3, 3, 8, 3};
    cfg.ratios = {4, 4, 4, 4};
    cfg.drop_path = 0.02;
  } else if (scale == "s4") {
    cfg.c1 = 68;
    cfg.depths = {3, 3, 11, 3};
    cfg.ratios = {4, 4, 4, 4};
    cfg.drop_path = 0.02;
  } else if (scale == "s1-toy") {
    // S1 widths at reduced depth, for probe-scale experiments
    cfg.c1 = 40;
    cfg.depths = {1, 1, 2, 1};
    cfg.ratios = {3, 3, 3, 2};
    cfg.drop_path = 0.0;
  } else {
    throw std::invalid_argument("unknown GmNet scale: " + scale);
  }
  return cfg;
}

/// Hybrid conv backbone: a two-conv stem to 1/4 resolution, four stages of
/// gated blocks with stride-2 channel-doubling convs between them, and a
/// GAP -> BN -> linear head. Inputs at 64 px or below use a stride-1 stem.
template <class S>
class GmNet : public Module<S> {
 public:
  explicit GmNet(const GmNetConfig& cfg, std::uint64_t seed = 0)
      : cfg_(cfg), drop_rng_(std::make_unique<std::mt19937_64>(seed ^ 0x9e3779b97f4a7c15ULL)) {
    std::mt19937_64 rng(seed);
    const bool small_input = cfg.input_resolution <= 64;
    const Index stem_stride = small_input ? 1 : 2;
    const Index half = cfg.c1 / 2;
    stem_conv1_ = &this->register_module(
        "stem.conv1", std::make_shared<Conv2dLayer<S>>(3, half, 3, stem_stride, 1, 1, false, rng));
    stem_bn1_ = &this->register_module("stem.bn1", std::make_shared<BatchNorm2dLayer<S>>(half));
    stem_conv2_ = &this->register_module(
        "stem.conv2",
        std::make_shared<Conv2dLayer<S>>(half, cfg.c1, 3, stem_stride, 1, 1, false, rng));
    stem_bn2_ = &this->register_module("stem.bn2", std::make_shared<BatchNorm2dLayer<S>>(cfg.c1));

    Index dim = cfg.c1;
    for (int stage = 0; stage < 4; ++stage) {
      if (stage > 0) {
        const Index next = dim * 2;
        down_conv_[stage - 1] = &this->register_module(
            "down" + std::to_string(stage),
            std::make_shared<Conv2dLayer<S>>(dim, next, 3, 2, 1, 1, false, rng));
        down_bn_[stage - 1] = &this->register_module("down" + std::to_string(stage) + ".bn",
                                                     std::make_shared<BatchNorm2dLayer<S>>(next));
        dim = next;
      }
      for (Index j = 0; j < cfg.depths[static_cast<std::size_t>(stage)]; ++j) {
        GmBlockOptions<S> opt;
        opt.dim = dim;
        opt.mlp_ratio = cfg.ratios[static_cast<std::size_t>(stage)];
        opt.drop_path_rate = cfg.drop_path;
        opt.variant = cfg.variant;
        opt.act = cfg.act;
        auto block = std::make_shared<GmNetBlock<S>>(opt, rng, drop_rng_.get());
        block->set_tap_prefix("stage" + std::to_string(stage) + ".block" + std::to_string(j));
        blocks_[static_cast<std::size_t>(stage)].push_back(
            &this->register_module("stage" + std::to_string(stage) + ".block" + std::to_string(j),
                                   std::move(block)));
      }
    }
    head_bn_ = &this->register_module("head.bn", std::make_shared<BatchNorm2dLayer<S>>(dim));
    fc_ = &this->register_module("head.fc",
                                 std::make_shared<LinearLayer<S>>(dim, cfg.num_classes, rng));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> t = relu6(stem_bn1_->forward(stem_conv1_->forward(x)));
    t = relu6(stem_bn2_->forward(stem_conv2_->forward(t)));
    for (int stage = 0; stage < 4; ++stage) {
      if (stage > 0)
        t = relu6(down_bn_[stage - 1]->forward(down_conv_[stage - 1]->forward(t)));
      for (auto* block : blocks_[static_cast<std::size_t>(stage)]) t = block->forward(t);
    }
    t = global_avg_pool(t);
    const Index n = t.dim(0), c = t.dim(1);
    t = reshape(head_bn_->forward(reshape(t, {n, c, 1, 1})), {n, c});
    return fc_->forward(t);
  }

  const GmNetConfig& config() const { return cfg_; }

 private:
  GmNetConfig cfg_;
  std::unique_ptr<std::mt19937_64> drop_rng_;
  Conv2dLayer<S>*stem_conv1_, *stem_conv2_;
  BatchNorm2dLayer<S>*stem_bn1_, *stem_bn2_;
  std::array<Conv2dLayer<S>*, 3> down_conv_{};
  std::array<BatchNorm2dLayer<S>*, 3> down_bn_{};
  std::array<std::vector<GmNetBlock<S>*>, 4> blocks_;
  BatchNorm2dLayer<S>* head_bn_;
  LinearLayer<S>* fc_;
};

/// 32x32-input ResNet-18 with the block variants under study. All variants
/// share the exact same parameter count (the gates are parameter-free).
template <class S>
class ResNet18 : public Module<S> {
 public:
  ResNet18(ResBlockVariant variant, Activation gate_act, Index num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv1_ = &this->register_module("conv1",
                                    std::make_shared<Conv2dLayer<S>>(3, 64, 3, 1, 1, 1, false, rng));
    bn1_ = &this->register_module("bn1", std::make_shared<BatchNorm2dLayer<S>>(64));
    const Index planes[4] = {64, 128, 256, 512};
    Index in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const Index out = planes[stage];
      for (int j = 0; j < 2; ++j) {
        const Index stride = (stage > 0 && j == 0) ? 2 : 1;
        blocks_.push_back(&this->register_module(
            "layer" + std::to_string(stage + 1) + ".block" + std::to_string(j),
            std::make_shared<ResNetBasicBlock<S>>(in, out, stride, variant, gate_act, rng)));
        in = out;
      }
    }
    fc_ = &this->register_module("fc",
                                 std::make_shared<LinearLayer<S>>(512, num_classes, rng));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> t = relu(bn1_->forward(conv1_->forward(x)));
    for (auto* b : blocks_) t = b->forward(t);
    return fc_->forward(global_avg_pool(t));
  }

 private:
  Conv2dLayer<S>* conv1_;
  BatchNorm2dLayer<S>* bn1_;
  std::vector<ResNetBasicBlock<S>*> blocks_;
  LinearLayer<S>* fc_;
};

/// 32x32-input MobileNetV2; with use_glu the activation after each
/// expansion conv becomes sigma(x)*x.
template <class S>
class MobileNetV2Glu : public Module<S> {
 public:
  MobileNetV2Glu(bool use_glu, Activation glu_act, Index num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    stem_ = &this->register_module("stem",
                                   std::make_shared<Conv2dLayer<S>>(3, 32, 3, 1, 1, 1, false, rng));
    stem_bn_ = &this->register_module("stem_bn", std::make_shared<BatchNorm2dLayer<S>>(32));
    struct Cfg {
      Index t, c, n, s;
    };
    // first two downsamples removed for 32x32 inputs
    const Cfg cfgs[] = {{1, 16, 1, 1}, {6, 24, 2, 1}, {6, 32, 3, 2}, {6, 64, 4, 2},
                        {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
    Index in = 32;
    int idx = 0;
    for (const auto& c : cfgs)
      for (Index j = 0; j < c.n; ++j) {
        const Index stride = j == 0 ? c.s : 1;
        blocks_.push_back(&this->register_module(
            "block" + std::to_string(idx++),
            std::make_shared<Mbv2Block<S>>(in, c.c, stride, c.t, use_glu, glu_act, rng)));
        in = c.c;
      }
    head_ = &this->register_module(
        "head", std::make_shared<Conv2dLayer<S>>(in, 1280, 1, 1, 0, 1, false, rng));
    head_bn_ = &this->register_module("head_bn", std::make_shared<BatchNorm2dLayer<S>>(1280));
    fc_ = &this->register_module("fc",
                                 std::make_shared<LinearLayer<S>>(1280, num_classes, rng));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> t = relu6(stem_bn_->forward(stem_->forward(x)));
    for (auto* b : blocks_) t = b->forward(t);
    t = relu6(head_bn_->forward(head_->forward(t)));
    return fc_->forward(global_avg_pool(t));
  }

 private:
  Conv2dLayer<S>*stem_, *head_;
  BatchNorm2dLayer<S>*stem_bn_, *head_bn_;
  std::vector<Mbv2Block<S>*> blocks_;
  LinearLayer<S>* fc_;
};

/// Fixed-width stack of gated blocks for the contribution-breakdown study.
/// Keeping the width constant makes the DW7x7 <-> 1x1 linear swap (49d vs
/// d*d at d = 48) parameter-neutral to well under 3%.
template <class S>
class ContributionNet : public Module<S> {
 public:
  struct Variant {
    std::string name;
    bool use_dw;
    bool use_gate;
    Activation act;
  };

  static const std::vector<Variant>& variants() {
    static const std::vector<Variant> v = {
        {"baseline", false, false, Activation::ReLU},
        {"dwconv7", true, false, Activation::ReLU},
        {"gate_identity", false, true, Activation::Identity},
        {"gate_relu", false, true, Activation::ReLU},
        {"gate_gelu", false, true, Activation::GELU},
        {"gate_relu6", false, true, Activation::ReLU6},
        {"relu6", false, false, Activation::ReLU6},
        {"full", true, true, Activation::ReLU6},
    };
    return v;
  }

  static Variant variant_by_name(const std::string& name) {
    for (const auto& v : variants())
      if (v.name == name) return v;
    throw std::invalid_argument("unknown contribution variant: " + name);
  }

  ContributionNet(const Variant& variant, Index num_classes, std::uint64_t seed,
                  Index width = 48, Index depth = 4, Index mlp_ratio = 3)
      : drop_rng_(std::make_unique<std::mt19937_64>(seed ^ 0x9e3779b97f4a7c15ULL)) {
    std::mt19937_64 rng(seed);
    stem_ = &this->register_module(
        "stem", std::make_shared<Conv2dLayer<S>>(3, width, 3, 1, 1, 1, false, rng));
    stem_bn_ = &this->register_module("stem_bn", std::make_shared<BatchNorm2dLayer<S>>(width));
    for (Index j = 0; j < depth; ++j) {
      GmBlockOptions<S> opt;
      opt.dim = width;
      opt.mlp_ratio = mlp_ratio;
      opt.use_dw = variant.use_dw;
      opt.use_gate = variant.use_gate;
      opt.act = variant.act;
      auto block = std::make_shared<GmNetBlock<S>>(opt, rng, drop_rng_.get());
      block->set_tap_prefix("block" + std::to_string(j));
      blocks_.push_back(
          &this->register_module("block" + std::to_string(j), std::move(block)));
    }
    head_bn_ = &this->register_module("head_bn", std::make_shared<BatchNorm2dLayer<S>>(width));
    fc_ = &this->register_module("fc",
                                 std::make_shared<LinearLayer<S>>(width, num_classes, rng));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> t = relu6(stem_bn_->forward(stem_->forward(x)));
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      t = blocks_[j]->forward(t);
      if (j + 1 == blocks_.size() / 2) t = avg_pool2d(t, 2, 2, 0);  // parameter-free downsample
    }
    t = global_avg_pool(t);
    const Index n = t.dim(0), c = t.dim(1);
    t = reshape(head_bn_->forward(reshape(t, {n, c, 1, 1})), {n, c});
    return fc_->forward(t);
  }

 private:
  std::unique_ptr<std::mt19937_64> drop_rng_;
  Conv2dLayer<S>* stem_;
  BatchNorm2dLayer<S>*stem_bn_, *head_bn_;
  std::vector<GmNetBlock<S>*> blocks_;
  LinearLayer<S>* fc_;
};

// ---------------------------------------------------------------------------
// Model configuration and cost accounting
// ---------------------------------------------------------------------------

/// Declarative model description used by the CLI and the harness.
struct ModelConfig {
  std::string family = "gmnet";  // gmnet | resnet18 | mbv2 | contribution
  std::string scale = "s1";      // gmnet scales, or contribution variant name
  std::string variant = "gate";  // resnet18: baseline|ewp|gate ; mbv2: stock|glu
  Activation act = Activation::ReLU6;
  GluVariant glu = GluVariant::SimpleGate;
  Index num_classes = 10;
  Index input_resolution = 32;
  std::uint64_t seed = 0;
};

template <class S>
std::shared_ptr<Module<S>> build_model(const ModelConfig& mc) {
  if (mc.family == "gmnet") {
    GmNetConfig cfg = gmnet_scale_config(mc.scale, mc.num_classes, mc.input_resolution);
    cfg.variant = mc.glu;
    cfg.act = mc.act;
    return std::make_shared<GmNet<S>>(cfg, mc.seed);
  }
  if (mc.family == "resnet18") {
    ResBlockVariant v;
    if (mc.variant == "baseline")
      v = ResBlockVariant::Baseline;
    else if (mc.variant == "ewp")
      v = ResBlockVariant::Ewp;
    else if (mc.variant == "gate")
      v = ResBlockVariant::Gate;
    else
      throw std::invalid_argument("unknown resnet18 variant: " + mc.variant);
    return std::make_shared<ResNet18<S>>(v, mc.act, mc.num_classes, mc.seed);
  }
  if (mc.family == "mbv2") {
    if (mc.variant != "stock" && mc.variant != "glu")
      throw std::invalid_argument("unknown mbv2 variant: " + mc.variant);
    return std::make_shared<MobileNetV2Glu<S>>(mc.variant == "glu", mc.act, mc.num_classes,
                                               mc.seed);
  }
  if (mc.family == "contribution") {
    auto v = ContributionNet<S>::variant_by_name(mc.scale);
    return std::make_shared<ContributionNet<S>>(v, mc.num_classes, mc.seed);
  }
  throw std::invalid_argument("unknown model family: " + mc.family);
}

/// Parameter / multiply-accumulate report measured on the live module tree
/// (never from formulas). flops() is the 2*MAC + bias-add convention.
struct CostReport {
  long long params = 0;
  long long macs = 0;
  long long bias_adds = 0;
  long long flops() const { return 2 * macs + bias_adds; }
};

template <class S>
CostReport cost_report(Module<S>& model, Index resolution, Index in_channels = 3) {
  CostReport report;
  report.params = model.parameter_count();
  const bool was_training = model.training();
  model.set_training(false);
  CostMeter meter;
  {
    CostMeter::Scope scope(meter);
    Tensor<S> probe({1, in_channels, resolution, resolution});
    model.forward(probe);
  }
  model.set_training(was_training);
  report.macs = meter.macs;
  report.bias_adds = meter.bias_adds;
  return report;
}

}  // namespace gmlab
