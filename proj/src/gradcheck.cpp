#include "geovit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geovit/ops.hpp"
#include "geovit/seg_head.hpp"

namespace geovit {

namespace {

std::vector<double> probe_weights(int64_t n) {
  Rng rng(0x9e3779b97f4a7c15ULL ^ static_cast<uint64_t>(n));
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

double weighted(const Tensor& y, const std::vector<double>& w) {
  double s = 0.0;
  for (size_t i = 0; i < w.size(); ++i) s += w[i] * y.data()[i];
  return s;
}

}  // namespace

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, const std::vector<Tensor>& inputs,
                  double eps) {
  std::vector<double> weights;
  std::vector<std::vector<double>> analytic(inputs.size());
  for (const Tensor& x : inputs) {
    if (x.requires_grad()) const_cast<Tensor&>(x).zero_grad();
  }
  {
    Tape tape;
    Tensor y = fn(inputs);
    weights = probe_weights(y.numel());
    Tensor w = Tensor::from_data({y.numel()}, weights);
    Tensor loss = sum_all(mul(reshape(y, {y.numel()}), w));
    tape.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) {
        if (!inputs[i].has_grad()) {
          throw std::runtime_error("grad_check: input " + std::to_string(i) + " received no gradient");
        }
        analytic[i] = inputs[i].grad();
      }
    }
  }

  double worst = 0.0;
  NoTape guard;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    Tensor& x = const_cast<Tensor&>(inputs[i]);
    for (int64_t j = 0; j < x.numel(); ++j) {
      const double saved = x.data()[j];
      x.data()[j] = saved + eps;
      const double up = weighted(fn(inputs), weights);
      x.data()[j] = saved - eps;
      const double dn = weighted(fn(inputs), weights);
      x.data()[j] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = analytic[i][static_cast<size_t>(j)];
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

std::vector<KernelGradReport> kernel_grad_suite(uint64_t seed) {
  Rng rng(seed);
  auto rnd = [&rng](Shape s) { return Tensor::randn(std::move(s), rng, 1.0, true); };
  std::vector<KernelGradReport> out;
  auto run = [&out](const char* name, const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                    std::vector<Tensor> inputs) { out.push_back({name, grad_check(fn, inputs)}); };

  run("matmul", [](const std::vector<Tensor>& in) { return gelu(add(matmul(in[0], in[1]), in[2])); },
      {rnd({3, 4}), rnd({4, 2}), rnd({2})});
  run("softmax", [](const std::vector<Tensor>& in) { return softmax(in[0], 1); }, {rnd({3, 5})});
  run("l2_normalize", [](const std::vector<Tensor>& in) { return l2_normalize(in[0], 0); }, {rnd({6})});
  run("conv2d", [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2]); },
      {rnd({2, 4, 4}), rnd({3, 2, 3, 3}), rnd({3})});
  run("deconv2d", [](const std::vector<Tensor>& in) { return deconv2d(in[0], in[1], in[2]); },
      {rnd({2, 3, 3}), rnd({2, 3, 2, 2}), rnd({3})});
  run("layernorm", [](const std::vector<Tensor>& in) { return layernorm(in[0], 1, in[1], in[2]); },
      {rnd({3, 4}), rnd({4}), rnd({4})});
  run("maxpool2d", [](const std::vector<Tensor>& in) { return maxpool2d(in[0]); }, {rnd({2, 4, 4})});
  run("bilinear_upsample2x", [](const std::vector<Tensor>& in) { return bilinear_upsample2x(in[0]); },
      {rnd({2, 3, 3})});
  run("concat_slice",
      [](const std::vector<Tensor>& in) { return slice(concat({in[0], in[1]}, 0), 0, 1, 3); },
      {rnd({2, 3}), rnd({2, 3})});
  run("gather_rows", [](const std::vector<Tensor>& in) { return gather_rows(in[0], {2, 0, 2}); }, {rnd({3, 4})});
  run("broadcast_add_mul", [](const std::vector<Tensor>& in) { return mul(add(in[0], in[1]), add(in[0], in[0])); },
      {rnd({2, 3}), rnd({3})});
  run("relu_sigmoid_transpose",
      [](const std::vector<Tensor>& in) { return add(sigmoid(transpose2d(in[0])), relu(transpose2d(in[0]))); },
      {rnd({3, 2})});

  ClassMap truth(4, 4);
  for (auto& label : truth.v) label = static_cast<uint8_t>(rng.uniform_int(0, 2));
  truth.at(0, 0) = kIgnoreIndex;
  run("cross_entropy", [truth](const std::vector<Tensor>& in) { return seg_loss(in[0], truth); },
      {rnd({3, 4, 4})});

  return out;
}

}  // namespace geovit
