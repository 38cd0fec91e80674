#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlab/activations.hpp"
#include "gmlab/tensor.hpp"

namespace gmlab {

/// Collects multiply-accumulate counts of conv/linear ops while active on
/// the current thread (used for cost reports).
struct CostMeter {
  long long macs = 0;
  long long bias_adds = 0;

  struct Scope {
    explicit Scope(CostMeter& m) : prev_(active) { active = &m; }
    ~Scope() { active = prev_; }

   private:
    CostMeter* prev_;
  };

  static inline thread_local CostMeter* active = nullptr;
};

namespace detail {

template <class S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class S>
inline void require_4d(const Tensor<S>& x, const char* op) {
  if (x.ndim() != 4)
    throw std::invalid_argument(std::string(op) + ": expected NCHW tensor, got shape " +
                                shape_str(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> y(a.shape());
  y.value() = a.value() + b.value();
  if (Tape<S>::active() && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([as, bs, ys] {
      if (as->requires_grad) {
        as->ensure_grad();
        as->grad += ys->grad;
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        bs->grad += ys->grad;
      }
    });
  }
  return y;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> y(a.shape());
  y.value() = a.value() - b.value();
  if (Tape<S>::active() && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([as, bs, ys] {
      if (as->requires_grad) {
        as->ensure_grad();
        as->grad += ys->grad;
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        bs->grad -= ys->grad;
      }
    });
  }
  return y;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> y(a.shape());
  y.value() = a.value() * b.value();
  if (Tape<S>::active() && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([as, bs, ys] {
      if (as->requires_grad) {
        as->ensure_grad();
        as->grad += ys->grad * bs->value;
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        bs->grad += ys->grad * as->value;
      }
    });
  }
  return y;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> y(x.shape());
  y.value() = x.value() * c;
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([xs, ys, c] {
      xs->ensure_grad();
      xs->grad += ys->grad * c;
    });
  }
  return y;
}

template <class S>
Tensor<S> activation(const Tensor<S>& x, Activation a) {
  if (a == Activation::Identity) {
    Tensor<S> y(x.shape());
    y.value() = x.value();
    if (tracing(x)) {
      y.set_requires_grad(true);
      auto xs = x.storage(), ys = y.storage();
      ys->ensure_grad();
      Tape<S>::active()->record([xs, ys] {
        xs->ensure_grad();
        xs->grad += ys->grad;
      });
    }
    return y;
  }
  Tensor<S> y(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) y.value()[i] = act_value(a, x.value()[i]);
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([xs, ys, a, n] {
      xs->ensure_grad();
      for (Index i = 0; i < n; ++i) xs->grad[i] += ys->grad[i] * act_grad(a, xs->value[i]);
    });
  }
  return y;
}

template <class S>
Tensor<S> identity(const Tensor<S>& x) {
  return activation(x, Activation::Identity);
}
template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  return activation(x, Activation::ReLU);
}
template <class S>
Tensor<S> relu6(const Tensor<S>& x) {
  return activation(x, Activation::ReLU6);
}
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  return activation(x, Activation::GELU);
}
template <class S>
Tensor<S> silu(const Tensor<S>& x) {
  return activation(x, Activation::SiLU);
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::scalar(x.value().sum());
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([xs, ys] {
      xs->ensure_grad();
      xs->grad += ys->grad[0];
    });
  }
  return y;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  const S inv = S(1) / static_cast<S>(x.numel());
  Tensor<S> y = Tensor<S>::scalar(x.value().sum() * inv);
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([xs, ys, inv] {
      xs->ensure_grad();
      xs->grad += ys->grad[0] * inv;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Direct convolution kernel. Per output element the reduction order is
/// (ci, kh, kw), independent of stride/padding/grouping, so a grouped conv
/// is bitwise identical to the equivalent stack of independent convs.
template <class S>
void conv2d_forward_direct(const S* x, const S* w, const S* b, S* y, Index N, Index C, Index H,
                           Index W, Index O, Index kH, Index kW, Index stride, Index pad,
                           Index groups, Index Ho, Index Wo) {
  const Index Cg = C / groups, Og = O / groups;
  for (Index n = 0; n < N; ++n) {
    for (Index oc = 0; oc < O; ++oc) {
      S* yp = y + ((n * O + oc) * Ho) * Wo;
      const S bias = b ? b[oc] : S(0);
      for (Index i = 0; i < Ho * Wo; ++i) yp[i] = bias;
    }
    for (Index g = 0; g < groups; ++g) {
      for (Index oc = g * Og; oc < (g + 1) * Og; ++oc) {
        const S* wbase = w + oc * Cg * kH * kW;
        S* ybase = y + ((n * O + oc) * Ho) * Wo;
        for (Index ci = 0; ci < Cg; ++ci) {
          const S* xbase = x + ((n * C + g * Cg + ci) * H) * W;
          for (Index kh = 0; kh < kH; ++kh) {
            const Index oh_lo = pad > kh ? (pad - kh + stride - 1) / stride : 0;
            const Index oh_hi = std::min(Ho - 1, (H - 1 + pad - kh) / stride);
            for (Index oh = oh_lo; oh <= oh_hi; ++oh) {
              const Index ih = oh * stride - pad + kh;
              const S* xrow = xbase + ih * W;
              S* yrow = ybase + oh * Wo;
              for (Index kw = 0; kw < kW; ++kw) {
                const Index ow_lo = pad > kw ? (pad - kw + stride - 1) / stride : 0;
                const Index ow_hi = std::min(Wo - 1, (W - 1 + pad - kw) / stride);
                const S wv = wbase[(ci * kH + kh) * kW + kw];
                const Index shift = -pad + kw;
                if (stride == 1) {
                  const S* xs = xrow + shift;
                  for (Index ow = ow_lo; ow <= ow_hi; ++ow) yrow[ow] += wv * xs[ow];
                } else {
                  for (Index ow = ow_lo; ow <= ow_hi; ++ow)
                    yrow[ow] += wv * xrow[ow * stride + shift];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <class S>
void conv2d_backward_direct(const S* x, const S* w, const S* dy, S* dx, S* dw, S* db, Index N,
                            Index C, Index H, Index W, Index O, Index kH, Index kW, Index stride,
                            Index pad, Index groups, Index Ho, Index Wo) {
  const Index Cg = C / groups, Og = O / groups;
  if (db) {
    for (Index n = 0; n < N; ++n)
      for (Index oc = 0; oc < O; ++oc) {
        const S* dyp = dy + ((n * O + oc) * Ho) * Wo;
        S s = 0;
        for (Index i = 0; i < Ho * Wo; ++i) s += dyp[i];
        db[oc] += s;
      }
  }
  for (Index n = 0; n < N; ++n) {
    for (Index g = 0; g < groups; ++g) {
      for (Index oc = g * Og; oc < (g + 1) * Og; ++oc) {
        const S* wbase = w + oc * Cg * kH * kW;
        S* dwbase = dw ? dw + oc * Cg * kH * kW : nullptr;
        const S* dybase = dy + ((n * O + oc) * Ho) * Wo;
        for (Index ci = 0; ci < Cg; ++ci) {
          const S* xbase = x + ((n * C + g * Cg + ci) * H) * W;
          S* dxbase = dx ? dx + ((n * C + g * Cg + ci) * H) * W : nullptr;
          for (Index kh = 0; kh < kH; ++kh) {
            const Index oh_lo = pad > kh ? (pad - kh + stride - 1) / stride : 0;
            const Index oh_hi = std::min(Ho - 1, (H - 1 + pad - kh) / stride);
            for (Index oh = oh_lo; oh <= oh_hi; ++oh) {
              const Index ih = oh * stride - pad + kh;
              const S* xrow = xbase + ih * W;
              S* dxrow = dxbase ? dxbase + ih * W : nullptr;
              const S* dyrow = dybase + oh * Wo;
              for (Index kw = 0; kw < kW; ++kw) {
                const Index ow_lo = pad > kw ? (pad - kw + stride - 1) / stride : 0;
                const Index ow_hi = std::min(Wo - 1, (W - 1 + pad - kw) / stride);
                const Index shift = -pad + kw;
                const S wv = wbase[(ci * kH + kh) * kW + kw];
                if (dwbase) {
                  S acc = 0;
                  for (Index ow = ow_lo; ow <= ow_hi; ++ow)
                    acc += dyrow[ow] * xrow[ow * stride + shift];
                  dwbase[(ci * kH + kh) * kW + kw] += acc;
                }
                if (dxrow) {
                  for (Index ow = ow_lo; ow <= ow_hi; ++ow)
                    dxrow[ow * stride + shift] += wv * dyrow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution, NCHW input, OIHW weight (I = C/groups). `bias` may be an
/// empty tensor. groups == C gives depth-wise semantics.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 Index stride, Index pad, Index groups = 1) {
  detail::require_4d(input, "conv2d input");
  detail::require_4d(weight, "conv2d weight");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const Index O = weight.dim(0), Cw = weight.dim(1), kH = weight.dim(2), kW = weight.dim(3);
  if (groups < 1 || C % groups != 0 || O % groups != 0)
    throw std::invalid_argument("conv2d: channels " + std::to_string(C) + "->" +
                                std::to_string(O) + " not divisible by groups " +
                                std::to_string(groups));
  if (Cw != C / groups)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(Cw) +
                                " input channels per group, input has " +
                                std::to_string(C / groups));
  if (H + 2 * pad < kH || W + 2 * pad < kW)
    throw std::invalid_argument("conv2d: padded input " + std::to_string(H + 2 * pad) + "x" +
                                std::to_string(W + 2 * pad) + " smaller than kernel " +
                                std::to_string(kH) + "x" + std::to_string(kW));
  if (bias.numel() != 0 && bias.numel() != O)
    throw std::invalid_argument("conv2d: bias size " + std::to_string(bias.numel()) +
                                " != out channels " + std::to_string(O));
  const Index Ho = (H + 2 * pad - kH) / stride + 1;
  const Index Wo = (W + 2 * pad - kW) / stride + 1;
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: zero-size output");

  if (CostMeter::active) {
    CostMeter::active->macs += static_cast<long long>(N) * Ho * Wo * O * Cw * kH * kW;
    if (bias.numel()) CostMeter::active->bias_adds += static_cast<long long>(N) * Ho * Wo * O;
  }

  Tensor<S> y({N, O, Ho, Wo});
  const bool has_bias = bias.numel() != 0;

  if (kH == 1 && kW == 1 && stride == 1 && pad == 0 && groups == 1) {
    // pointwise conv as per-sample GEMM
    using RM = detail::RowMat<S>;
    Eigen::Map<const RM> Wm(weight.value().data(), O, C);
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const RM> Xm(input.value().data() + n * C * H * W, C, H * W);
      Eigen::Map<RM> Ym(y.value().data() + n * O * H * W, O, H * W);
      Ym.noalias() = Wm * Xm;
      if (has_bias)
        Ym.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(bias.value().data(), O);
    }
  } else {
    detail::conv2d_forward_direct(input.value().data(), weight.value().data(),
                                  has_bias ? bias.value().data() : nullptr, y.value().data(), N, C,
                                  H, W, O, kH, kW, stride, pad, groups, Ho, Wo);
  }

  const bool track = Tape<S>::active() && (input.requires_grad() || weight.requires_grad() ||
                                           (has_bias && bias.requires_grad()));
  if (track) {
    y.set_requires_grad(true);
    auto xs = input.storage(), ws = weight.storage(), ys = y.storage();
    auto bs = has_bias ? bias.storage() : nullptr;
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      S* dx = nullptr;
      if (xs->requires_grad) {
        xs->ensure_grad();
        dx = xs->grad.data();
      }
      S* dw = nullptr;
      if (ws->requires_grad) {
        ws->ensure_grad();
        dw = ws->grad.data();
      }
      S* db = nullptr;
      if (bs && bs->requires_grad) {
        bs->ensure_grad();
        db = bs->grad.data();
      }
      if (kH == 1 && kW == 1 && stride == 1 && pad == 0 && groups == 1) {
        using RM = detail::RowMat<S>;
        Eigen::Map<const RM> Wm(ws->value.data(), O, C);
        for (Index n = 0; n < N; ++n) {
          Eigen::Map<const RM> dYm(ys->grad.data() + n * O * H * W, O, H * W);
          Eigen::Map<const RM> Xm(xs->value.data() + n * C * H * W, C, H * W);
          if (dx) {
            Eigen::Map<RM> dXm(dx + n * C * H * W, C, H * W);
            dXm.noalias() += Wm.transpose() * dYm;
          }
          if (dw) {
            Eigen::Map<RM> dWm(dw, O, C);
            dWm.noalias() += dYm * Xm.transpose();
          }
          if (db) {
            Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(db, O);
            dB.noalias() += dYm.rowwise().sum();
          }
        }
      } else {
        detail::conv2d_backward_direct(xs->value.data(), ws->value.data(), ys->grad.data(), dx, dw,
                                       db, N, C, H, W, O, kH, kW, stride, pad, groups, Ho, Wo);
      }
    });
  }
  return y;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, Index stride, Index pad,
                 Index groups = 1) {
  return conv2d(input, weight, Tensor<S>(Shape{0}), stride, pad, groups);
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// Average pooling; the divisor counts only in-bounds elements, so a
/// constant image pools to the same constant at borders too.
template <class S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index k, Index stride, Index pad) {
  detail::require_4d(x, "avg_pool2d");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw std::invalid_argument("avg_pool2d: window larger than padded input");
  const Index Ho = (H + 2 * pad - k) / stride + 1;
  const Index Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<S> y({N, C, Ho, Wo});
  const S* xp = x.value().data();
  S* yp = y.value().data();
  for (Index nc = 0; nc < N * C; ++nc) {
    const S* xi = xp + nc * H * W;
    S* yi = yp + nc * Ho * Wo;
    for (Index oh = 0; oh < Ho; ++oh)
      for (Index ow = 0; ow < Wo; ++ow) {
        const Index h0 = std::max<Index>(0, oh * stride - pad);
        const Index h1 = std::min(H, oh * stride - pad + k);
        const Index w0 = std::max<Index>(0, ow * stride - pad);
        const Index w1 = std::min(W, ow * stride - pad + k);
        S acc = 0;
        for (Index h = h0; h < h1; ++h)
          for (Index w = w0; w < w1; ++w) acc += xi[h * W + w];
        yi[oh * Wo + ow] = acc / static_cast<S>((h1 - h0) * (w1 - w0));
      }
  }
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      xs->ensure_grad();
      S* dx = xs->grad.data();
      const S* dy = ys->grad.data();
      for (Index nc = 0; nc < N * C; ++nc) {
        S* dxi = dx + nc * H * W;
        const S* dyi = dy + nc * Ho * Wo;
        for (Index oh = 0; oh < Ho; ++oh)
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index h0 = std::max<Index>(0, oh * stride - pad);
            const Index h1 = std::min(H, oh * stride - pad + k);
            const Index w0 = std::max<Index>(0, ow * stride - pad);
            const Index w1 = std::min(W, ow * stride - pad + k);
            const S g = dyi[oh * Wo + ow] / static_cast<S>((h1 - h0) * (w1 - w0));
            for (Index h = h0; h < h1; ++h)
              for (Index w = w0; w < w1; ++w) dxi[h * W + w] += g;
          }
      }
    });
  }
  return y;
}

/// NCHW -> (N, C) mean over spatial positions.
template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  detail::require_4d(x, "global_avg_pool");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y({N, C});
  const S inv = S(1) / static_cast<S>(HW);
  for (Index nc = 0; nc < N * C; ++nc) {
    const S* xi = x.value().data() + nc * HW;
    S acc = 0;
    for (Index i = 0; i < HW; ++i) acc += xi[i];
    y.value()[nc] = acc * inv;
  }
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      xs->ensure_grad();
      for (Index nc = 0; nc < N * C; ++nc) {
        S* dxi = xs->grad.data() + nc * HW;
        const S g = ys->grad[nc] * inv;
        for (Index i = 0; i < HW; ++i) dxi[i] += g;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Batch normalization over (N,H,W) per channel. Training mode normalizes
/// with batch statistics and updates the running buffers in place; eval mode
/// normalizes with the running statistics.
template <class S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                       S momentum = S(0.1), S eps = S(1e-5)) {
  detail::require_4d(x, "batch_norm2d");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("batch_norm2d: affine params must have C=" + std::to_string(C));
  const Index m = N * HW;
  Tensor<S> y(x.shape());

  ArrayX<S> mean(C), inv_std(C);
  if (training) {
    for (Index c = 0; c < C; ++c) {
      S s = 0;
      for (Index n = 0; n < N; ++n) {
        const S* xi = x.value().data() + ((n * C + c) * HW);
        for (Index i = 0; i < HW; ++i) s += xi[i];
      }
      const S mu = s / static_cast<S>(m);
      S v = 0;
      for (Index n = 0; n < N; ++n) {
        const S* xi = x.value().data() + ((n * C + c) * HW);
        for (Index i = 0; i < HW; ++i) {
          const S d = xi[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<S>(m);
      mean[c] = mu;
      inv_std[c] = S(1) / std::sqrt(v + eps);
      running_mean.value()[c] = (S(1) - momentum) * running_mean.value()[c] + momentum * mu;
      const S v_unbiased = m > 1 ? v * static_cast<S>(m) / static_cast<S>(m - 1) : v;
      running_var.value()[c] = (S(1) - momentum) * running_var.value()[c] + momentum * v_unbiased;
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = running_mean.value()[c];
      inv_std[c] = S(1) / std::sqrt(running_var.value()[c] + eps);
    }
  }
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const S* xi = x.value().data() + ((n * C + c) * HW);
      S* yi = y.value().data() + ((n * C + c) * HW);
      const S g = gamma.value()[c], b = beta.value()[c], mu = mean[c], is = inv_std[c];
      for (Index i = 0; i < HW; ++i) yi[i] = g * (xi[i] - mu) * is + b;
    }

  const bool track = Tape<S>::active() && (x.requires_grad() || gamma.requires_grad() ||
                                           beta.requires_grad());
  if (track) {
    y.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      const S* dy = ys->grad.data();
      for (Index c = 0; c < C; ++c) {
        const S mu = mean[c], is = inv_std[c], g = gs->value[c];
        S sum_dy = 0, sum_dy_xhat = 0;
        for (Index n = 0; n < N; ++n) {
          const S* dyi = dy + ((n * C + c) * HW);
          const S* xi = xs->value.data() + ((n * C + c) * HW);
          for (Index i = 0; i < HW; ++i) {
            sum_dy += dyi[i];
            sum_dy_xhat += dyi[i] * (xi[i] - mu) * is;
          }
        }
        if (bs->requires_grad) {
          bs->ensure_grad();
          bs->grad[c] += sum_dy;
        }
        if (gs->requires_grad) {
          gs->ensure_grad();
          gs->grad[c] += sum_dy_xhat;
        }
        if (xs->requires_grad) {
          xs->ensure_grad();
          if (training) {
            const S inv_m = S(1) / static_cast<S>(m);
            for (Index n = 0; n < N; ++n) {
              const S* dyi = dy + ((n * C + c) * HW);
              const S* xi = xs->value.data() + ((n * C + c) * HW);
              S* dxi = xs->grad.data() + ((n * C + c) * HW);
              for (Index i = 0; i < HW; ++i) {
                const S xhat = (xi[i] - mu) * is;
                dxi[i] += g * is * (dyi[i] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
              }
            }
          } else {
            for (Index n = 0; n < N; ++n) {
              const S* dyi = dy + ((n * C + c) * HW);
              S* dxi = xs->grad.data() + ((n * C + c) * HW);
              for (Index i = 0; i < HW; ++i) dxi[i] += g * is * dyi[i];
            }
          }
        }
      }
    });
  }
  return y;
}

/// Layer normalization across the channel dimension at every spatial
/// position, with per-channel affine parameters.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-6)) {
  detail::require_4d(x, "layer_norm");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("layer_norm: affine params must have C=" + std::to_string(C));
  Tensor<S> y(x.shape());
  ArrayX<S> mean(N * HW), inv_std(N * HW);
  const S* xp = x.value().data();
  S* yp = y.value().data();
  for (Index n = 0; n < N; ++n)
    for (Index i = 0; i < HW; ++i) {
      const Index base = n * C * HW + i;
      S mu = 0;
      for (Index c = 0; c < C; ++c) mu += xp[base + c * HW];
      mu /= static_cast<S>(C);
      S v = 0;
      for (Index c = 0; c < C; ++c) {
        const S d = xp[base + c * HW] - mu;
        v += d * d;
      }
      v /= static_cast<S>(C);
      const S is = S(1) / std::sqrt(v + eps);
      mean[n * HW + i] = mu;
      inv_std[n * HW + i] = is;
      for (Index c = 0; c < C; ++c)
        yp[base + c * HW] = gamma.value()[c] * (xp[base + c * HW] - mu) * is + beta.value()[c];
    }

  const bool track = Tape<S>::active() && (x.requires_grad() || gamma.requires_grad() ||
                                           beta.requires_grad());
  if (track) {
    y.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      const S* dy = ys->grad.data();
      const S* xv = xs->value.data();
      const S inv_c = S(1) / static_cast<S>(C);
      for (Index n = 0; n < N; ++n)
        for (Index i = 0; i < HW; ++i) {
          const Index base = n * C * HW + i;
          const S mu = mean[n * HW + i], is = inv_std[n * HW + i];
          S mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (Index c = 0; c < C; ++c) {
            const S xhat = (xv[base + c * HW] - mu) * is;
            const S dxhat = dy[base + c * HW] * gs->value[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat *= inv_c;
          mean_dxhat_xhat *= inv_c;
          if (xs->requires_grad) {
            xs->ensure_grad();
            for (Index c = 0; c < C; ++c) {
              const S xhat = (xv[base + c * HW] - mu) * is;
              const S dxhat = dy[base + c * HW] * gs->value[c];
              xs->grad[base + c * HW] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
          }
          if (gs->requires_grad || bs->requires_grad) {
            for (Index c = 0; c < C; ++c) {
              const S xhat = (xv[base + c * HW] - mu) * is;
              if (gs->requires_grad) {
                gs->ensure_grad();
                gs->grad[c] += dy[base + c * HW] * xhat;
              }
              if (bs->requires_grad) {
                bs->ensure_grad();
                bs->grad[c] += dy[base + c * HW];
              }
            }
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear / loss
// ---------------------------------------------------------------------------

/// y = x W^T + b for x (N, in), W (out, in).
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (x.ndim() != 2) throw std::invalid_argument("linear: expected 2-D input");
  const Index N = x.dim(0), in = x.dim(1);
  const Index out = weight.dim(0);
  if (weight.ndim() != 2 || weight.dim(1) != in)
    throw std::invalid_argument("linear: weight shape " + shape_str(weight.shape()) +
                                " incompatible with input " + shape_str(x.shape()));
  const bool has_bias = bias.numel() != 0;
  if (has_bias && bias.numel() != out)
    throw std::invalid_argument("linear: bias size mismatch");
  if (CostMeter::active) {
    CostMeter::active->macs += static_cast<long long>(N) * in * out;
    if (has_bias) CostMeter::active->bias_adds += static_cast<long long>(N) * out;
  }
  Tensor<S> y({N, out});
  using RM = detail::RowMat<S>;
  Eigen::Map<const RM> Xm(x.value().data(), N, in);
  Eigen::Map<const RM> Wm(weight.value().data(), out, in);
  Eigen::Map<RM> Ym(y.value().data(), N, out);
  Ym.noalias() = Xm * Wm.transpose();
  if (has_bias)
    Ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data(), out);

  const bool track = Tape<S>::active() && (x.requires_grad() || weight.requires_grad() ||
                                           (has_bias && bias.requires_grad()));
  if (track) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ws = weight.storage(), ys = y.storage();
    auto bs = has_bias ? bias.storage() : nullptr;
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      Eigen::Map<const RM> dYm(ys->grad.data(), N, out);
      Eigen::Map<const RM> Xm2(xs->value.data(), N, in);
      Eigen::Map<const RM> Wm2(ws->value.data(), out, in);
      if (xs->requires_grad) {
        xs->ensure_grad();
        Eigen::Map<RM> dXm(xs->grad.data(), N, in);
        dXm.noalias() += dYm * Wm2;
      }
      if (ws->requires_grad) {
        ws->ensure_grad();
        Eigen::Map<RM> dWm(ws->grad.data(), out, in);
        dWm.noalias() += dYm.transpose() * Xm2;
      }
      if (bs && bs->requires_grad) {
        bs->ensure_grad();
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> dB(bs->grad.data(), out);
        dB.noalias() += dYm.colwise().sum();
      }
    });
  }
  return y;
}

/// Mean softmax cross-entropy over the batch, with optional label smoothing.
template <class S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                                S label_smoothing = S(0)) {
  if (logits.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy: expected (N,C)");
  const Index N = logits.dim(0), C = logits.dim(1);
  if (static_cast<Index>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= C) throw std::invalid_argument("softmax_cross_entropy: label out of range");

  ArrayX<S> probs(N * C);
  S loss = 0;
  const S eps_c = label_smoothing / static_cast<S>(C);
  for (Index n = 0; n < N; ++n) {
    const S* row = logits.value().data() + n * C;
    S mx = row[0];
    for (Index c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    S z = 0;
    for (Index c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const S log_z = std::log(z) + mx;
    for (Index c = 0; c < C; ++c) {
      const S logp = row[c] - log_z;
      probs[n * C + c] = std::exp(logp);
      S q = eps_c + (c == labels[static_cast<std::size_t>(n)] ? S(1) - label_smoothing : S(0));
      loss -= q * logp;
    }
  }
  Tensor<S> y = Tensor<S>::scalar(loss / static_cast<S>(N));
  if (tracing(logits)) {
    y.set_requires_grad(true);
    auto xs = logits.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=, labels = labels, probs = std::move(probs)] {
      xs->ensure_grad();
      const S g = ys->grad[0] / static_cast<S>(N);
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) {
          S q = eps_c + (c == labels[static_cast<std::size_t>(n)] ? S(1) - label_smoothing : S(0));
          xs->grad[n * C + c] += g * (probs[n * C + c] - q);
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Residual-branch helpers
// ---------------------------------------------------------------------------

/// Per-channel scaling of an NCHW tensor by a learned C-vector.
template <class S>
Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& gamma) {
  detail::require_4d(x, "channel_scale");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C) throw std::invalid_argument("channel_scale: gamma size != C");
  Tensor<S> y(x.shape());
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const S* xi = x.value().data() + (n * C + c) * HW;
      S* yi = y.value().data() + (n * C + c) * HW;
      const S g = gamma.value()[c];
      for (Index i = 0; i < HW; ++i) yi[i] = g * xi[i];
    }
  const bool track = Tape<S>::active() && (x.requires_grad() || gamma.requires_grad());
  if (track) {
    y.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=] {
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) {
          const S* dyi = ys->grad.data() + (n * C + c) * HW;
          if (xs->requires_grad) {
            xs->ensure_grad();
            S* dxi = xs->grad.data() + (n * C + c) * HW;
            const S g = gs->value[c];
            for (Index i = 0; i < HW; ++i) dxi[i] += g * dyi[i];
          }
          if (gs->requires_grad) {
            gs->ensure_grad();
            const S* xi = xs->value.data() + (n * C + c) * HW;
            S acc = 0;
            for (Index i = 0; i < HW; ++i) acc += dyi[i] * xi[i];
            gs->grad[c] += acc;
          }
        }
    });
  }
  return y;
}

/// Stochastic depth. In training, each sample's branch is kept with
/// probability 1-rate and rescaled by 1/(1-rate); in eval it is the identity.
template <class S>
Tensor<S> drop_path(const Tensor<S>& x, double rate, bool training, std::mt19937_64* rng) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("drop_path: rate must be in [0,1)");
  if (!training || rate == 0) return identity(x);
  if (!rng) throw std::invalid_argument("drop_path: training mode needs an RNG");
  const Index N = x.dim(0);
  const Index per = x.numel() / N;
  std::vector<S> keep(static_cast<std::size_t>(N));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const S scale_v = S(1) / S(1 - rate);
  for (Index n = 0; n < N; ++n)
    keep[static_cast<std::size_t>(n)] = uni(*rng) < rate ? S(0) : scale_v;
  Tensor<S> y(x.shape());
  for (Index n = 0; n < N; ++n) {
    const S k = keep[static_cast<std::size_t>(n)];
    const S* xi = x.value().data() + n * per;
    S* yi = y.value().data() + n * per;
    for (Index i = 0; i < per; ++i) yi[i] = k * xi[i];
  }
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([=, keep = std::move(keep)] {
      xs->ensure_grad();
      for (Index n = 0; n < N; ++n) {
        const S k = keep[static_cast<std::size_t>(n)];
        const S* dyi = ys->grad.data() + n * per;
        S* dxi = xs->grad.data() + n * per;
        for (Index i = 0; i < per; ++i) dxi[i] += k * dyi[i];
      }
    });
  }
  return y;
}

/// Same data, new extents (row-major order preserved).
template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  Tensor<S> y(std::move(shape));
  y.value() = x.value();
  if (tracing(x)) {
    y.set_requires_grad(true);
    auto xs = x.storage(), ys = y.storage();
    ys->ensure_grad();
    Tape<S>::active()->record([xs, ys] {
      xs->ensure_grad();
      xs->grad += ys->grad;
    });
  }
  return y;
}

/// Row-wise argmax of an (N, C) tensor; no gradient participation.
template <class S>
std::vector<int> argmax_rows(const Tensor<S>& x) {
  const Index N = x.dim(0), C = x.dim(1);
  std::vector<int> out(static_cast<std::size_t>(N));
  for (Index n = 0; n < N; ++n) {
    const S* row = x.value().data() + n * C;
    int best = 0;
    for (Index c = 1; c < C; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

}  // namespace gmlab
