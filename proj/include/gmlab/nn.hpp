#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gmlab/ops.hpp"
#include "gmlab/tensor.hpp"

namespace gmlab {

/// Sink for named intermediate feature maps (spectral probing). Active per
/// thread; blocks publish through tap() when a sink is installed.
template <class S>
struct TapSink {
  std::function<void(const std::string&, const Tensor<S>&)> put;

  struct Scope {
    explicit Scope(TapSink& sink) : prev_(active) { active = &sink; }
    ~Scope() { active = prev_; }

   private:
    TapSink* prev_;
  };

  static inline thread_local TapSink* active = nullptr;
};

template <class S>
inline void tap(const std::string& name, const Tensor<S>& t) {
  if (TapSink<S>::active && TapSink<S>::active->put) TapSink<S>::active->put(name, t);
}

/// Base class for stateful layers: owns named parameters, named buffers
/// (running statistics), and child modules. Parameter names are dotted
/// paths through the module tree.
template <class S>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<S> forward(const Tensor<S>& x) = 0;

  void set_training(bool b) {
    training_ = b;
    for (auto& [name, child] : children_) child->set_training(b);
  }
  bool training() const { return training_; }

  void visit_parameters(const std::function<void(const std::string&, Tensor<S>&)>& fn,
                        const std::string& prefix = "") {
    for (auto& [name, t] : params_) fn(prefix + name, t);
    for (auto& [name, child] : children_) child->visit_parameters(fn, prefix + name + ".");
  }
  void visit_buffers(const std::function<void(const std::string&, Tensor<S>&)>& fn,
                     const std::string& prefix = "") {
    for (auto& [name, t] : buffers_) fn(prefix + name, t);
    for (auto& [name, child] : children_) child->visit_buffers(fn, prefix + name + ".");
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    visit_parameters([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
    return out;
  }
  std::vector<std::pair<std::string, Tensor<S>>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    visit_buffers([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
    return out;
  }
  /// Parameters followed by buffers: everything a checkpoint carries.
  std::vector<std::pair<std::string, Tensor<S>>> named_state() {
    auto out = named_parameters();
    auto bufs = named_buffers();
    out.insert(out.end(), bufs.begin(), bufs.end());
    return out;
  }

  Index parameter_count() {
    Index n = 0;
    visit_parameters([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
  }

  void zero_grad() {
    visit_parameters([](const std::string&, Tensor<S>& t) { t.zero_grad(); });
  }

 protected:
  Tensor<S>& register_parameter(const std::string& name, Tensor<S> t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
    return params_.back().second;
  }
  Tensor<S>& register_buffer(const std::string& name, Tensor<S> t) {
    buffers_.emplace_back(name, std::move(t));
    return buffers_.back().second;
  }
  template <class M>
  M& register_module(const std::string& name, std::shared_ptr<M> m) {
    M& ref = *m;
    children_.emplace_back(name, std::move(m));
    return ref;
  }

  bool training_ = true;
  std::vector<std::pair<std::string, Tensor<S>>> params_;
  std::vector<std::pair<std::string, Tensor<S>>> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module<S>>>> children_;
};

namespace init {

/// Kaiming-normal, fan-out mode (ReLU gain).
template <class S>
void kaiming_normal_fan_out(Tensor<S>& w, Index fan_out, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_out)));
  for (Index i = 0; i < w.numel(); ++i) w.value()[i] = static_cast<S>(dist(rng));
}

template <class S>
void normal(Tensor<S>& w, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < w.numel(); ++i) w.value()[i] = static_cast<S>(dist(rng));
}

}  // namespace init

template <class S>
class Conv2dLayer : public Module<S> {
 public:
  Conv2dLayer(Index in_ch, Index out_ch, Index kernel, Index stride, Index pad, Index groups,
              bool bias, std::mt19937_64& rng)
      : stride_(stride), pad_(pad), groups_(groups) {
    Tensor<S> w({out_ch, in_ch / groups, kernel, kernel});
    init::kaiming_normal_fan_out(w, kernel * kernel * out_ch / groups, rng);
    weight_ = this->register_parameter("weight", std::move(w));
    if (bias) bias_ = this->register_parameter("bias", Tensor<S>({out_ch}));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    return bias_.numel() ? conv2d(x, weight_, bias_, stride_, pad_, groups_)
                         : conv2d(x, weight_, stride_, pad_, groups_);
  }

  Tensor<S>& weight() { return weight_; }

 private:
  Tensor<S> weight_;
  Tensor<S> bias_{Shape{0}};
  Index stride_, pad_, groups_;
};

template <class S>
class BatchNorm2dLayer : public Module<S> {
 public:
  explicit BatchNorm2dLayer(Index channels, S momentum = S(0.1), S eps = S(1e-5))
      : momentum_(momentum), eps_(eps) {
    gamma_ = this->register_parameter("weight", Tensor<S>::full({channels}, S(1)));
    beta_ = this->register_parameter("bias", Tensor<S>({channels}));
    running_mean_ = this->register_buffer("running_mean", Tensor<S>({channels}));
    running_var_ = this->register_buffer("running_var", Tensor<S>::full({channels}, S(1)));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    return batch_norm2d(x, gamma_, beta_, running_mean_, running_var_, this->training_,
                        momentum_, eps_);
  }

 private:
  Tensor<S> gamma_, beta_, running_mean_, running_var_;
  S momentum_, eps_;
};

template <class S>
class LayerNormLayer : public Module<S> {
 public:
  explicit LayerNormLayer(Index channels, S eps = S(1e-6)) : eps_(eps) {
    gamma_ = this->register_parameter("weight", Tensor<S>::full({channels}, S(1)));
    beta_ = this->register_parameter("bias", Tensor<S>({channels}));
  }
  Tensor<S> forward(const Tensor<S>& x) override { return layer_norm(x, gamma_, beta_, eps_); }

 private:
  Tensor<S> gamma_, beta_;
  S eps_;
};

template <class S>
class LinearLayer : public Module<S> {
 public:
  LinearLayer(Index in, Index out, std::mt19937_64& rng, double init_std = 0.01) {
    Tensor<S> w({out, in});
    init::normal(w, init_std, rng);
    weight_ = this->register_parameter("weight", std::move(w));
    bias_ = this->register_parameter("bias", Tensor<S>({out}));
  }
  Tensor<S> forward(const Tensor<S>& x) override { return linear(x, weight_, bias_); }

 private:
  Tensor<S> weight_, bias_;
};

}  // namespace gmlab
