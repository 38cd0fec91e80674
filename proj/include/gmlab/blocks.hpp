#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <string>

#include "gmlab/nn.hpp"

namespace gmlab {

/// Gate designs under study. The gate multiplies an activated copy of the
/// signal with a (possibly transformed) copy of itself.
enum class GluVariant {
  SimpleGate,   // sigma(x) * x
  LNGate,       // sigma(x) * LN(x)
  DWGate,       // sigma(x) * DW3x3(x)
  PoolDiffGate, // sigma(x) * (x - Pool3x3(x))
  FCGate,       // sigma(x) * FC(x)
  FCSigmaGate,  // sigma(FC(x)) * x
};

inline const char* to_string(GluVariant v) {
  switch (v) {
    case GluVariant::SimpleGate: return "simple";
    case GluVariant::LNGate: return "ln";
    case GluVariant::DWGate: return "dw";
    case GluVariant::PoolDiffGate: return "pool_diff";
    case GluVariant::FCGate: return "fc";
    case GluVariant::FCSigmaGate: return "fc_sigma";
  }
  return "?";
}

inline GluVariant glu_variant_from_string(const std::string& s) {
  if (s == "simple") return GluVariant::SimpleGate;
  if (s == "ln") return GluVariant::LNGate;
  if (s == "dw") return GluVariant::DWGate;
  if (s == "pool_diff") return GluVariant::PoolDiffGate;
  if (s == "fc") return GluVariant::FCGate;
  if (s == "fc_sigma") return GluVariant::FCSigmaGate;
  throw std::invalid_argument("unknown GLU variant: " + s);
}

constexpr GluVariant kAllGluVariants[] = {GluVariant::SimpleGate,   GluVariant::LNGate,
                                          GluVariant::DWGate,       GluVariant::PoolDiffGate,
                                          GluVariant::FCGate,       GluVariant::FCSigmaGate};

/// One gated linear unit. SimpleGate/PoolDiffGate add no parameters;
/// LN/DW/FC variants own exactly their sub-layer's parameters. `channels`
/// is the dimension the gate operates on.
template <class S>
class GluGate : public Module<S> {
 public:
  GluGate(GluVariant variant, Activation act, Index channels, std::mt19937_64& rng)
      : variant_(variant), act_(act), channels_(channels) {
    switch (variant_) {
      case GluVariant::LNGate:
        ln_ = &this->register_module("ln", std::make_shared<LayerNormLayer<S>>(channels));
        break;
      case GluVariant::DWGate:
        dw_ = &this->register_module(
            "dw", std::make_shared<Conv2dLayer<S>>(channels, channels, 3, 1, 1, channels,
                                                   /*bias=*/true, rng));
        break;
      case GluVariant::FCGate:
      case GluVariant::FCSigmaGate:
        fc_ = &this->register_module(
            "fc", std::make_shared<Conv2dLayer<S>>(channels, channels, 1, 1, 0, 1,
                                                   /*bias=*/true, rng));
        break;
      default:
        break;
    }
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    if (x.ndim() != 4 || x.dim(1) != channels_)
      throw std::invalid_argument("glu gate: expected " + std::to_string(channels_) +
                                  " channels, got input " + shape_str(x.shape()));
    switch (variant_) {
      case GluVariant::SimpleGate:
        return mul(activation(x, act_), x);
      case GluVariant::LNGate:
        return mul(activation(x, act_), ln_->forward(x));
      case GluVariant::DWGate:
        return mul(activation(x, act_), dw_->forward(x));
      case GluVariant::PoolDiffGate:
        return mul(activation(x, act_), sub(x, avg_pool2d(x, 3, 1, 1)));
      case GluVariant::FCGate:
        return mul(activation(x, act_), fc_->forward(x));
      case GluVariant::FCSigmaGate:
        return mul(activation(fc_->forward(x), act_), x);
    }
    throw std::logic_error("glu gate: unreachable");
  }

  GluVariant variant() const { return variant_; }
  Activation act() const { return act_; }

 private:
  GluVariant variant_;
  Activation act_;
  Index channels_;
  LayerNormLayer<S>* ln_ = nullptr;
  Conv2dLayer<S>* dw_ = nullptr;
  Conv2dLayer<S>* fc_ = nullptr;
};

/// Configuration of one gated block. use_dw / use_gate exist for the
/// contribution-breakdown ablation: the mixing convs become channel-wise
/// linear maps and the gate becomes a plain activation.
template <class S>
struct GmBlockOptions {
  Index dim = 48;
  Index mlp_ratio = 4;
  Index kernel = 7;
  double drop_path_rate = 0.0;
  S layer_scale_init = S(1e-6);
  bool use_dw = true;
  bool use_gate = true;
  GluVariant variant = GluVariant::SimpleGate;
  Activation act = Activation::ReLU6;
};

/// Gated block: DW7x7 -> BN -> 1x1 expand -> gate -> 1x1 project -> BN ->
/// DW7x7, wrapped in input + drop_path(layer_scale(.)).
template <class S>
class GmNetBlock : public Module<S> {
 public:
  GmNetBlock(const GmBlockOptions<S>& opt, std::mt19937_64& rng, std::mt19937_64* drop_rng)
      : opt_(opt), drop_rng_(drop_rng) {
    if (opt.dim < 1 || opt.mlp_ratio < 1)
      throw std::invalid_argument("gm block: dim and mlp_ratio must be positive");
    if (opt.drop_path_rate < 0 || opt.drop_path_rate >= 1)
      throw std::invalid_argument("gm block: drop_path_rate must be in [0,1)");
    const Index d = opt.dim, h = opt.dim * opt.mlp_ratio;
    if (opt.use_dw) {
      mix1_ = &this->register_module("dw1", std::make_shared<Conv2dLayer<S>>(
                                                d, d, opt.kernel, 1, opt.kernel / 2, d,
                                                /*bias=*/false, rng));
      mix2_ = &this->register_module("dw2", std::make_shared<Conv2dLayer<S>>(
                                                d, d, opt.kernel, 1, opt.kernel / 2, d,
                                                /*bias=*/false, rng));
    } else {
      mix1_ = &this->register_module(
          "lin1", std::make_shared<Conv2dLayer<S>>(d, d, 1, 1, 0, 1, /*bias=*/false, rng));
      mix2_ = &this->register_module(
          "lin2", std::make_shared<Conv2dLayer<S>>(d, d, 1, 1, 0, 1, /*bias=*/false, rng));
    }
    bn1_ = &this->register_module("bn1", std::make_shared<BatchNorm2dLayer<S>>(d));
    conv1_ = &this->register_module(
        "conv1", std::make_shared<Conv2dLayer<S>>(d, h, 1, 1, 0, 1, /*bias=*/true, rng));
    if (opt.use_gate)
      gate_ = &this->register_module("gate",
                                     std::make_shared<GluGate<S>>(opt.variant, opt.act, h, rng));
    conv2_ = &this->register_module(
        "conv2", std::make_shared<Conv2dLayer<S>>(h, d, 1, 1, 0, 1, /*bias=*/false, rng));
    bn2_ = &this->register_module("bn2", std::make_shared<BatchNorm2dLayer<S>>(d));
    layer_scale_ =
        this->register_parameter("layer_scale", Tensor<S>::full({d}, opt.layer_scale_init));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    if (x.ndim() != 4 || x.dim(1) != opt_.dim)
      throw std::invalid_argument("gm block: expected " + std::to_string(opt_.dim) +
                                  " channels, got input " + shape_str(x.shape()));
    Tensor<S> t = mix1_->forward(x);
    if (!tap_prefix_.empty()) tap(tap_prefix_ + ".dw1", t);
    t = bn1_->forward(t);
    t = conv1_->forward(t);
    if (!tap_prefix_.empty()) tap(tap_prefix_ + ".gate_in", t);
    t = opt_.use_gate ? gate_->forward(t) : activation(t, opt_.act);
    if (!tap_prefix_.empty()) tap(tap_prefix_ + ".gate_out", t);
    t = conv2_->forward(t);
    t = bn2_->forward(t);
    t = mix2_->forward(t);
    t = channel_scale(t, layer_scale_);
    t = drop_path(t, opt_.drop_path_rate, this->training_, drop_rng_);
    return add(x, t);
  }

  void set_tap_prefix(std::string prefix) { tap_prefix_ = std::move(prefix); }
  Tensor<S>& layer_scale() { return layer_scale_; }

 private:
  GmBlockOptions<S> opt_;
  std::mt19937_64* drop_rng_;
  std::string tap_prefix_;
  Conv2dLayer<S>*mix1_, *mix2_, *conv1_, *conv2_;
  BatchNorm2dLayer<S>*bn1_, *bn2_;
  GluGate<S>* gate_ = nullptr;
  Tensor<S> layer_scale_;
};

/// Mid-activation choice of the basic residual block.
enum class ResBlockVariant { Baseline, Ewp, Gate };

inline const char* to_string(ResBlockVariant v) {
  switch (v) {
    case ResBlockVariant::Baseline: return "baseline";
    case ResBlockVariant::Ewp: return "ewp";
    case ResBlockVariant::Gate: return "gate";
  }
  return "?";
}

/// Standard 3x3 basic block with the mid activation swapped per variant:
/// Baseline keeps ReLU, Ewp uses out*out, Gate uses sigma(out)*out. The
/// final post-residual ReLU stays in all variants.
template <class S>
class ResNetBasicBlock : public Module<S> {
 public:
  ResNetBasicBlock(Index in_planes, Index planes, Index stride, ResBlockVariant variant,
                   Activation gate_act, std::mt19937_64& rng)
      : variant_(variant), gate_act_(gate_act) {
    if (stride < 1 || planes < 1)
      throw std::invalid_argument("basic block: stride and planes must be positive");
    conv1_ = &this->register_module("conv1", std::make_shared<Conv2dLayer<S>>(
                                                 in_planes, planes, 3, stride, 1, 1, false, rng));
    bn1_ = &this->register_module("bn1", std::make_shared<BatchNorm2dLayer<S>>(planes));
    conv2_ = &this->register_module(
        "conv2", std::make_shared<Conv2dLayer<S>>(planes, planes, 3, 1, 1, 1, false, rng));
    bn2_ = &this->register_module("bn2", std::make_shared<BatchNorm2dLayer<S>>(planes));
    if (stride != 1 || in_planes != planes) {
      sc_conv_ = &this->register_module(
          "shortcut_conv",
          std::make_shared<Conv2dLayer<S>>(in_planes, planes, 1, stride, 0, 1, false, rng));
      sc_bn_ = &this->register_module("shortcut_bn", std::make_shared<BatchNorm2dLayer<S>>(planes));
    }
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> out = bn1_->forward(conv1_->forward(x));
    switch (variant_) {
      case ResBlockVariant::Baseline: out = relu(out); break;
      case ResBlockVariant::Ewp: out = mul(out, out); break;
      case ResBlockVariant::Gate: out = mul(activation(out, gate_act_), out); break;
    }
    out = bn2_->forward(conv2_->forward(out));
    Tensor<S> sc = sc_conv_ ? sc_bn_->forward(sc_conv_->forward(x)) : x;
    return relu(add(out, sc));
  }

 private:
  ResBlockVariant variant_;
  Activation gate_act_;
  Conv2dLayer<S>*conv1_, *conv2_;
  BatchNorm2dLayer<S>*bn1_, *bn2_;
  Conv2dLayer<S>* sc_conv_ = nullptr;
  BatchNorm2dLayer<S>* sc_bn_ = nullptr;
};

/// Inverted residual (1x1 expand, DW 3x3, 1x1 project). With use_glu the
/// activation after the expansion conv becomes sigma(x)*x; everything else
/// is stock. The gate adds no parameters.
template <class S>
class Mbv2Block : public Module<S> {
 public:
  Mbv2Block(Index in_ch, Index out_ch, Index stride, Index expansion, bool use_glu,
            Activation glu_act, std::mt19937_64& rng)
      : use_glu_(use_glu), glu_act_(glu_act), expansion_(expansion),
        residual_(stride == 1 && in_ch == out_ch) {
    if (stride < 1 || expansion < 1)
      throw std::invalid_argument("mbv2 block: stride and expansion must be positive");
    const Index hidden = in_ch * expansion;
    if (expansion != 1) {
      expand_ = &this->register_module(
          "expand", std::make_shared<Conv2dLayer<S>>(in_ch, hidden, 1, 1, 0, 1, false, rng));
      expand_bn_ = &this->register_module("expand_bn",
                                          std::make_shared<BatchNorm2dLayer<S>>(hidden));
    }
    dw_ = &this->register_module("dw", std::make_shared<Conv2dLayer<S>>(
                                           hidden, hidden, 3, stride, 1, hidden, false, rng));
    dw_bn_ = &this->register_module("dw_bn", std::make_shared<BatchNorm2dLayer<S>>(hidden));
    project_ = &this->register_module(
        "project", std::make_shared<Conv2dLayer<S>>(hidden, out_ch, 1, 1, 0, 1, false, rng));
    project_bn_ = &this->register_module("project_bn",
                                         std::make_shared<BatchNorm2dLayer<S>>(out_ch));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> t = x;
    if (expand_) {
      t = expand_bn_->forward(expand_->forward(t));
      t = use_glu_ ? mul(activation(t, glu_act_), t) : relu6(t);
    }
    t = relu6(dw_bn_->forward(dw_->forward(t)));
    t = project_bn_->forward(project_->forward(t));
    return residual_ ? add(x, t) : t;
  }

 private:
  bool use_glu_;
  Activation glu_act_;
  Index expansion_;
  bool residual_;
  Conv2dLayer<S>* expand_ = nullptr;
  BatchNorm2dLayer<S>* expand_bn_ = nullptr;
  Conv2dLayer<S>*dw_, *project_;
  BatchNorm2dLayer<S>*dw_bn_, *project_bn_;
};

}  // namespace gmlab
