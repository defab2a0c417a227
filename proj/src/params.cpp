#include "geovit/params.hpp"

#include <cmath>
#include <stdexcept>

namespace geovit {

void quantize_f32(std::vector<double>& data) {
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

Tensor ParamStore::insert(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  geovit::quantize_f32(t.values());
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) { return insert(name, Tensor::zeros(shape)); }

Tensor ParamStore::ones(const std::string& name, Shape shape) { return insert(name, Tensor::full(shape, 1.0)); }

Tensor ParamStore::trunc_normal(const std::string& name, Shape shape, double stddev) {
  const int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng_.trunc_normal(stddev, 2.0);
  return insert(name, Tensor::from_data(std::move(shape), std::move(data)));
}

Tensor ParamStore::he_normal(const std::string& name, Shape shape, int64_t fan_in) {
  if (fan_in <= 0) throw std::invalid_argument("ParamStore: fan_in must be positive for '" + name + "'");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  const int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng_.gaussian() * stddev;
  return insert(name, Tensor::from_data(std::move(shape), std::move(data)));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return items_[it->second].second;
}

int64_t ParamStore::count() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParamStore::quantize_f32() {
  for (auto& [name, t] : items_) geovit::quantize_f32(t.values());
}

}  // namespace geovit
