#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geovit/rng.hpp"

namespace geovit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until gradient flows
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that recorded the producing op, if any
};
}  // namespace detail

/// Dense row-major N-D array of doubles with reverse-mode gradient support.
/// Values are immutable once a tensor participates in a graph; parameters are
/// only mutated by the optimizer between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;  // numel()==1 only

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Identity of the underlying buffer; two Tensors may alias one impl.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
  friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad);

/// Ordered record of executed kernels. Constructing a Tape makes it the
/// active tape for the current thread; destruction restores the previous one.
/// Backward replays the record in exact reverse order. Two graphs never share
/// a tape; a tape must be drained (backward) or dropped on the thread that
/// built it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
  /// `loss` must be a scalar produced by an op recorded on this tape.
  void backward(const Tensor& loss);

  size_t steps() const { return steps_.size(); }

  static Tape* active();
  void record(std::function<void()> step, const Tensor& output);

 private:
  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

/// RAII guard that suspends recording (evaluation mode).
class NoTape {
 public:
  NoTape();
  ~NoTape();
  NoTape(const NoTape&) = delete;
  NoTape& operator=(const NoTape&) = delete;

 private:
  Tape* prev_;
};

/// Toggles the post-kernel NaN/Inf output check (on by default). A non-finite
/// value anywhere in a kernel result is an error state, not a silent NaN.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {
void ensure_grad(TensorImpl& t);
void accumulate_grad(TensorImpl& t, const std::vector<double>& g);
void check_finite(const Tensor& t, const char* op);
}  // namespace detail

}  // namespace geovit
