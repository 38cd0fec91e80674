#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

/// Shared storage behind a Tensor handle. Gradient buffer is allocated
/// lazily the first time an accumulation touches it.
template <class S>
struct TensorStorage {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = ArrayX<S>::Zero(value.size());
  }
  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
};

/// Dense N-dimensional row-major tensor with value semantics on the handle
/// and shared underlying storage (copies alias the same buffer).
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() : s_(std::make_shared<TensorStorage<S>>()) {}

  explicit Tensor(Shape shape) : s_(std::make_shared<TensorStorage<S>>()) {
    s_->shape = std::move(shape);
    s_->value = ArrayX<S>::Zero(shape_numel(s_->shape));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.value().setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from_vector(Shape shape, const std::vector<S>& data) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(data.size()) != t.numel())
      throw std::invalid_argument("from_vector: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(t.shape()));
    for (Index i = 0; i < t.numel(); ++i) t.value()[i] = data[static_cast<std::size_t>(i)];
    return t;
  }

  const Shape& shape() const { return s_->shape; }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  Index dim(int i) const { return s_->shape.at(static_cast<std::size_t>(i)); }
  Index numel() const { return s_->value.size(); }

  ArrayX<S>& value() { return s_->value; }
  const ArrayX<S>& value() const { return s_->value; }
  ArrayX<S>& grad() {
    s_->ensure_grad();
    return s_->grad;
  }
  bool has_grad() const { return s_->has_grad(); }
  void zero_grad() {
    if (s_->has_grad()) s_->grad.setZero();
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    s_->requires_grad = b;
    return *this;
  }

  S item() const {
    if (numel() != 1)
      throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
    return s_->value[0];
  }

  S operator[](Index i) const { return s_->value[i]; }
  S& operator[](Index i) { return s_->value[i]; }

  /// Flat index of (n,c,h,w) for a 4-D tensor.
  Index idx4(Index n, Index c, Index h, Index w) const {
    const Shape& sh = s_->shape;
    return ((n * sh[1] + c) * sh[2] + h) * sh[3] + w;
  }

  bool all_finite() const { return s_->value.isFinite().all(); }

  /// Deep copy: fresh storage, same values. Gradient state is not copied.
  Tensor clone() const {
    Tensor t;
    t.s_->shape = s_->shape;
    t.s_->value = s_->value;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  const std::shared_ptr<TensorStorage<S>>& storage() const { return s_; }

 private:
  std::shared_ptr<TensorStorage<S>> s_;
};

/// Define-by-run gradient tape. Constructing a Tape activates it for the
/// current thread (RAII); operations executed while a tape is active record
/// their backward rules in execution order. backward() replays the rules in
/// reverse, visiting each recorded operation exactly once, then resets the
/// tape.
template <class S>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward_rule) { ops_.push_back(std::move(backward_rule)); }

  std::size_t size() const { return ops_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked input.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(loss.shape()));
    if (ops_.empty()) {
      std::fputs("gmlab: warning: backward on detached graph, gradients stay zero\n", stderr);
      return;
    }
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] += S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  std::vector<std::function<void()>> ops_;
  Tape* prev_ = nullptr;
  static thread_local Tape* active_;
};

template <class S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

/// True when an op executed right now should record a backward rule for
/// an output that depends on `x`.
template <class S>
inline bool tracing(const Tensor<S>& x) {
  return Tape<S>::active() != nullptr && x.requires_grad();
}

}  // namespace gmlab
