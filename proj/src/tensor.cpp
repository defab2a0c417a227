#include "geovit/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace geovit {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {
void validate_shape(const Shape& s) {
  for (int64_t d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(s));
  }
}
}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), value);
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = rng.gaussian() * stddev;
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("grad: no gradient present for tensor " + shape_str(shape()));
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_finite_checks = true;
}  // namespace

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> step, const Tensor& output) {
  output.impl()->tape = this;
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  }
  if (loss.impl()->tape != this) {
    throw std::invalid_argument("backward: loss was not produced by an op recorded on this tape");
  }
  detail::ensure_grad(*loss.impl());
  loss.impl()->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

NoTape::NoTape() {
  prev_ = g_active_tape;
  g_active_tape = nullptr;
}

NoTape::~NoTape() { g_active_tape = prev_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

namespace detail {

void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
}

void accumulate_grad(TensorImpl& t, const std::vector<double>& g) {
  ensure_grad(t);
  for (size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_checks) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output of shape " + shape_str(t.shape()));
    }
  }
}

}  // namespace detail

}  // namespace geovit
