#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "geovit/rng.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// Named trainable parameters in deterministic insertion order. All creation
/// draws from one internal RNG, so a given seed and creation sequence always
/// produces bit-identical parameters. Values are rounded through f32 after
/// creation (and the optimizer re-rounds after every step), which keeps the
/// in-memory state exactly representable in checkpoints.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : rng_(seed) {}

  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);
  Tensor trunc_normal(const std::string& name, Shape shape, double stddev);
  Tensor he_normal(const std::string& name, Shape shape, int64_t fan_in);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  int64_t count() const;  // total scalar parameters
  void zero_grads();
  /// Rounds every value through f32.
  void quantize_f32();

 private:
  Tensor insert(const std::string& name, Tensor t);

  Rng rng_;
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// Rounds a buffer through f32 in place.
void quantize_f32(std::vector<double>& data);

}  // namespace geovit
