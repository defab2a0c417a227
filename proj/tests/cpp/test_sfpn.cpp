#include <cstring>
#include <stdexcept>

#include "doctest.h"
#include "geovit/gradcheck.hpp"
#include "geovit/ops.hpp"
#include "geovit/sfpn.hpp"

using namespace geovit;

TEST_CASE("pyramid shape contract and pre-activation counts for a 64x64 input") {
  ParamStore store(31);
  Sfpn sfpn(store, "sf.", 64, 256);
  Rng rng(4);
  Tensor f = Tensor::randn({64, 4, 4}, rng);  // backbone map at scale 16
  std::vector<SfpnLevelTrace> traces;
  std::vector<Tensor> levels = sfpn.build(f, &traces);
  REQUIRE(levels.size() == 4);
  CHECK(levels[0].shape() == Shape{256, 4, 4});
  CHECK(levels[1].shape() == Shape{256, 8, 8});
  CHECK(levels[2].shape() == Shape{256, 16, 16});
  CHECK(levels[3].shape() == Shape{256, 32, 32});
  CHECK(traces[0].pre_activations == 0);
  CHECK(traces[1].pre_activations == 0);
  CHECK(traces[2].pre_activations == 1);
  CHECK(traces[3].pre_activations == 2);
  CHECK(traces[0].deconvs == 0);
  CHECK(traces[1].deconvs == 1);
  CHECK(traces[3].deconvs == 3);
  for (const auto& t : traces) CHECK(t.maxpools == 0);
}

TEST_CASE("downsample level executes one maxpool") {
  ParamStore store(32);
  SfpnLevel down(store, "d32.", 8, 16, 16, 32);
  CHECK(down.num_resizes() == -1);
  Rng rng(6);
  Tensor f = Tensor::randn({8, 4, 4}, rng);
  SfpnLevelTrace t;
  Tensor y = down.forward(f, &t);
  CHECK(y.shape() == Shape{16, 2, 2});
  CHECK(t.maxpools == 1);
  CHECK(t.deconvs == 0);
  CHECK(t.pre_activations == 0);
  CHECK_THROWS_AS(SfpnLevel(store, "bad.", 8, 16, 12, 2), std::invalid_argument);
}

TEST_CASE("zero input with freshly initialized biases yields an all-zero pyramid") {
  ParamStore store(33);
  Sfpn sfpn(store, "sf.", 8, 16);
  std::vector<Tensor> levels = sfpn.build(Tensor::zeros({8, 4, 4}));
  for (const Tensor& lvl : levels) {
    for (int64_t i = 0; i < lvl.numel(); ++i) REQUIRE(lvl.data()[i] == 0.0);
  }
}

TEST_CASE("level computations are order-independent") {
  ParamStore store(34);
  Sfpn sfpn(store, "sf.", 8, 16);
  Rng rng(8);
  Tensor f = Tensor::randn({8, 2, 2}, rng);
  Tensor fine_first = sfpn.level(2).forward(f);
  Tensor coarse = sfpn.level(16).forward(f);
  Tensor fine_again = sfpn.level(2).forward(f);
  CHECK(std::memcmp(fine_first.data(), fine_again.data(), sizeof(double) * fine_first.numel()) == 0);
  CHECK(coarse.shape() == Shape{16, 2, 2});
}

TEST_CASE("gradients flow from every level back to the input map") {
  ParamStore store(35);
  Sfpn sfpn(store, "sf.", 3, 4);
  Rng rng(10);
  Tensor f = Tensor::randn({3, 2, 2}, rng, 1.0, true);
  std::vector<Tensor> inputs{f};
  for (const auto& [name, p] : store.items()) inputs.push_back(p);
  auto fn = [&](const std::vector<Tensor>&) {
    std::vector<Tensor> levels = sfpn.build(f);
    std::vector<Tensor> flat;
    for (Tensor& lvl : levels) flat.push_back(reshape(lvl, {lvl.numel()}));
    return concat(flat, 0);
  };
  CHECK(grad_check(fn, inputs) < 1e-4);
}
