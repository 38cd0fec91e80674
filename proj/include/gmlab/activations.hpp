#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace gmlab {

/// The gate nonlinearities studied by this lab.
enum class Activation { Identity, ReLU, ReLU6, GELU, SiLU };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::ReLU6: return "relu6";
    case Activation::GELU: return "gelu";
    case Activation::SiLU: return "silu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "relu6") return Activation::ReLU6;
  if (s == "gelu") return Activation::GELU;
  if (s == "silu" || s == "swish") return Activation::SiLU;
  throw std::invalid_argument("unknown activation: " + s);
}

namespace detail {

template <class S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class S>
inline S gelu_tanh(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S u = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <class S>
inline S gelu_tanh_grad(S x) {
  const S c = S(0.7978845608028654);
  const S u = c * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = c * (S(1) + S(0.134145) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

}  // namespace detail

/// sigma(x). ReLU-family kinks take the one-sided value; see act_grad.
template <class S>
inline S act_value(Activation a, S x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::ReLU: return x > S(0) ? x : S(0);
    case Activation::ReLU6: return x < S(0) ? S(0) : (x > S(6) ? S(6) : x);
    case Activation::GELU: return detail::gelu_tanh(x);
    case Activation::SiLU: return x * detail::sigmoid(x);
  }
  return S(0);
}

/// sigma'(x); subgradient 0 exactly at the ReLU/ReLU6 kink points.
template <class S>
inline S act_grad(Activation a, S x) {
  switch (a) {
    case Activation::Identity: return S(1);
    case Activation::ReLU: return x > S(0) ? S(1) : S(0);
    case Activation::ReLU6: return (x > S(0) && x < S(6)) ? S(1) : S(0);
    case Activation::GELU: return detail::gelu_tanh_grad(x);
    case Activation::SiLU: {
      const S s = detail::sigmoid(x);
      return s * (S(1) + x * (S(1) - s));
    }
  }
  return S(0);
}

constexpr Activation kAllActivations[] = {Activation::Identity, Activation::ReLU,
                                          Activation::ReLU6, Activation::GELU, Activation::SiLU};

}  // namespace gmlab
