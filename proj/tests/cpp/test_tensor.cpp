#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "geovit/gradcheck.hpp"
#include "geovit/ops.hpp"
#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

using namespace geovit;

namespace {

// Reference convolution used as an independent oracle for the im2col path.
std::vector<double> naive_conv2d(const std::vector<double>& x, int64_t cin, int64_t h, int64_t w,
                                 const std::vector<double>& wt, int64_t cout, int64_t k,
                                 const std::vector<double>& b) {
  const int64_t pad = (k - 1) / 2;
  std::vector<double> y(static_cast<size_t>(cout * h * w));
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t yy = 0; yy < h; ++yy) {
      for (int64_t xx = 0; xx < w; ++xx) {
        double s = b[static_cast<size_t>(o)];
        for (int64_t ci = 0; ci < cin; ++ci) {
          for (int64_t dy = 0; dy < k; ++dy) {
            for (int64_t dx = 0; dx < k; ++dx) {
              const int64_t sy = yy + dy - pad, sx = xx + dx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              s += x[static_cast<size_t>((ci * h + sy) * w + sx)] *
                   wt[static_cast<size_t>(((o * cin + ci) * k + dy) * k + dx)];
            }
          }
        }
        y[static_cast<size_t>((o * h + yy) * w + xx)] = s;
      }
    }
  }
  return y;
}

// Reference 2x bilinear interpolation (half-pixel centers, clamped edges).
std::vector<double> naive_bilinear2x(const std::vector<double>& x, int64_t c, int64_t h, int64_t w) {
  const int64_t oh = 2 * h, ow = 2 * w;
  std::vector<double> y(static_cast<size_t>(c * oh * ow));
  auto clamp = [](int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t oy = 0; oy < oh; ++oy) {
      const double sy = (oy + 0.5) * 0.5 - 0.5;
      const int64_t y0 = static_cast<int64_t>(std::floor(sy));
      const double fy = sy - std::floor(sy);
      for (int64_t ox = 0; ox < ow; ++ox) {
        const double sx = (ox + 0.5) * 0.5 - 0.5;
        const int64_t x0 = static_cast<int64_t>(std::floor(sx));
        const double fx = sx - std::floor(sx);
        auto at = [&](int64_t yy, int64_t xx) {
          return x[static_cast<size_t>((ci * h + clamp(yy, h)) * w + clamp(xx, w))];
        };
        y[static_cast<size_t>((ci * oh + oy) * ow + ox)] =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
            fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      }
    }
  }
  return y;
}

Tensor rand_t(Shape s, Rng& rng, bool req = true) { return Tensor::randn(std::move(s), rng, 1.0, req); }

}  // namespace

TEST_CASE("tensor construction and validation") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({0, 2}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({2, -1}, {1, 2}), std::invalid_argument);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
}

TEST_CASE("pointwise kernels match frozen values") {
  Tensor x = Tensor::from_data({5}, {-2.0, -0.5, 0.0, 1.0, 3.0});
  Tensor r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[3] == 1.0);
  Tensor g = gelu(x);
  CHECK(g.data()[2] == 0.0);
  CHECK(g.data()[3] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  Tensor s = sigmoid(Tensor::from_data({3}, {0.0, -40.0, 40.0}));
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.data()[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax of [ln1, ln3] is [0.25, 0.75]") {
  Tensor x = Tensor::from_data({2}, {std::log(1.0), std::log(3.0)});
  Tensor y = softmax(x, 0);
  CHECK(y.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
  // max-subtraction keeps huge logits finite
  Tensor big = softmax(Tensor::from_data({2}, {1000.0, 1001.0}), 0);
  CHECK(big.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("l2_normalize of [3,4] is [0.6, 0.8] and zero stays zero") {
  Tensor y = l2_normalize(Tensor::from_data({2}, {3.0, 4.0}), 0);
  CHECK(y.data()[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(0.8).epsilon(1e-9));

  const uint64_t before = zero_norm_flag_count();
  Tensor z = l2_normalize(Tensor::zeros({3}), 0);
  CHECK(z.data()[0] == 0.0);
  CHECK(z.data()[2] == 0.0);
  CHECK(zero_norm_flag_count() == before + 1);
}

TEST_CASE("matmul [[1,2]]x[[3],[4]] = [[11]] and shape errors name both operands") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == 11.0);
  try {
    matmul(a, Tensor::from_data({3, 1}, {1, 2, 3}));
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,2]") != std::string::npos);
    CHECK(msg.find("[3,1]") != std::string::npos);
  }
}

TEST_CASE("broadcast add follows trailing-dimension rules") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_data({3}, {10, 20, 30});
  Tensor y = add(a, row);
  CHECK(y.data()[0] == 11.0);
  CHECK(y.data()[5] == 36.0);
  Tensor col = Tensor::from_data({2, 1}, {100, 200});
  Tensor z = add(a, col);
  CHECK(z.data()[2] == 103.0);
  CHECK(z.data()[3] == 204.0);
  CHECK_THROWS_AS(add(a, Tensor::from_data({2}, {1, 2})), std::invalid_argument);
}

TEST_CASE("conv2d matches a direct reference convolution") {
  // all-ones 3x3 kernel over an all-ones 5x5 image: interior pixels sum 9
  Tensor img = Tensor::full({1, 5, 5}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(img, w, b);
  CHECK(y.data()[2 * 5 + 2] == 9.0);
  CHECK(y.data()[0] == 4.0);   // corner sees a 2x2 window
  CHECK(y.data()[2] == 6.0);   // edge sees a 2x3 window

  Rng rng(7);
  Tensor x2 = rand_t({3, 6, 5}, rng, false);
  Tensor w2 = rand_t({4, 3, 3, 3}, rng, false);
  Tensor b2 = rand_t({4}, rng, false);
  Tensor y2 = conv2d(x2, w2, b2);
  auto ref = naive_conv2d(x2.values(), 3, 6, 5, w2.values(), 4, 3, b2.values());
  for (size_t i = 0; i < ref.size(); ++i) CHECK(y2.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  Tensor w1 = rand_t({2, 3, 1, 1}, rng, false);
  Tensor b1 = rand_t({2}, rng, false);
  Tensor y1 = conv2d(x2, w1, b1);
  auto ref1 = naive_conv2d(x2.values(), 3, 6, 5, w1.values(), 2, 1, b1.values());
  for (size_t i = 0; i < ref1.size(); ++i) CHECK(y1.data()[i] == doctest::Approx(ref1[i]).epsilon(1e-12));

  CHECK_THROWS_AS(conv2d(x2, Tensor::zeros({4, 2, 3, 3}), b2), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x2, Tensor::zeros({4, 3, 2, 2}), b2), std::invalid_argument);
}

TEST_CASE("deconv2d places the 2x2 stencil at stride 2") {
  Tensor x = Tensor::from_data({1, 1, 1}, {3.0});
  Tensor w = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 4.0, 8.0});
  Tensor b = Tensor::from_data({1}, {0.5});
  Tensor y = deconv2d(x, w, b);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  CHECK(y.data()[0] == 3.5);
  CHECK(y.data()[1] == 6.5);
  CHECK(y.data()[2] == 12.5);
  CHECK(y.data()[3] == 24.5);

  // two input pixels write disjoint 2x2 blocks
  Tensor x2 = Tensor::from_data({1, 1, 2}, {1.0, 10.0});
  Tensor y2 = deconv2d(x2, w, Tensor::zeros({1}));
  REQUIRE(y2.shape() == Shape{1, 2, 4});
  CHECK(y2.data()[1] == 2.0);
  CHECK(y2.data()[2] == 10.0);
  CHECK(y2.data()[7] == 80.0);
}

TEST_CASE("maxpool2d keeps the first maximal element on ties") {
  Tensor x = Tensor::from_data({1, 2, 2}, {5.0, 5.0, 5.0, 5.0});
  Tensor y;
  {
    Tape tape;
    Tensor xg = Tensor::from_data({1, 2, 2}, {5.0, 5.0, 5.0, 5.0}, true);
    y = maxpool2d(xg);
    CHECK(y.item() == 5.0);
    tape.backward(sum_all(y));
    CHECK(xg.grad()[0] == 1.0);  // row-major first element wins
    CHECK(xg.grad()[1] == 0.0);
    CHECK(xg.grad()[3] == 0.0);
  }
  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 3, 4})), std::invalid_argument);
}

TEST_CASE("layernorm of [1,3] is [-1,1]") {
  Tensor x = Tensor::from_data({2}, {1.0, 3.0});
  Tensor y = layernorm(x, 0, Tensor::full({2}, 1.0), Tensor::zeros({2}));
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-5));
  Tensor y2 = layernorm(x, 0, Tensor::from_data({2}, {2.0, 2.0}), Tensor::from_data({2}, {1.0, 1.0}));
  CHECK(y2.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y2.data()[1] == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("bilinear_upsample2x matches reference interpolation") {
  Tensor c = bilinear_upsample2x(Tensor::full({1, 1, 1}, 7.0));
  for (int i = 0; i < 4; ++i) CHECK(c.data()[i] == 7.0);

  Rng rng(11);
  Tensor x = rand_t({2, 3, 4}, rng, false);
  Tensor y = bilinear_upsample2x(x);
  auto ref = naive_bilinear2x(x.values(), 2, 3, 4);
  REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
  for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("concat, slice, reshape, gather_rows round values correctly") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 3}, {5, 6, 7, 8, 9, 10});
  Tensor y = concat({a, b}, 1);
  REQUIRE(y.shape() == Shape{2, 5});
  CHECK(y.data()[2] == 5.0);
  CHECK(y.data()[9] == 10.0);

  Tensor s = slice(y, 1, 2, 3);
  REQUIRE(s.shape() == Shape{2, 3});
  CHECK(s.data()[0] == 5.0);
  CHECK(s.data()[5] == 10.0);

  Tensor passthrough = concat({a, Tensor()}, 0);  // undefined operands are skipped
  REQUIRE(passthrough.shape() == a.shape());
  CHECK(passthrough.data()[3] == 4.0);

  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 3})}, 1), std::invalid_argument);
  CHECK_THROWS_AS(slice(y, 1, 4, 2), std::invalid_argument);

  Tensor r = reshape(a, {4});
  CHECK(r.data()[2] == 3.0);
  CHECK_THROWS_AS(reshape(a, {5}), std::invalid_argument);

  Tensor g = gather_rows(b, {1, 0, 1});
  REQUIRE(g.shape() == Shape{3, 3});
  CHECK(g.data()[0] == 8.0);
  CHECK(g.data()[3] == 5.0);
  CHECK_THROWS_AS(gather_rows(b, {2}), std::invalid_argument);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = Tensor::from_data({2}, {1.5, -2.0}, true);
  Tape tape;
  Tensor y = add(mul(x, x), x);  // x^2 + x, with x feeding three op inputs
  tape.backward(sum_all(y));
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 1).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(2 * -2.0 + 1).epsilon(1e-12));
}

TEST_CASE("tape rejects invalid losses and NoTape suspends recording") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  {
    Tape tape;
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // not scalar
  }
  {
    Tape tape;
    NoTape guard;
    Tensor y = sum_all(mul(x, x));
    CHECK(tape.steps() == 0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // not recorded here
  }
  {
    Tape outer;
    Tensor loss;
    {
      Tape inner;
      loss = sum_all(mul(x, x));
      CHECK_THROWS_AS(outer.backward(loss), std::invalid_argument);  // wrong tape
      inner.backward(loss);
    }
    CHECK(x.has_grad());
  }
}

TEST_CASE("non-finite kernel outputs raise unless checks are disabled") {
  Tensor huge = Tensor::full({2}, 1e308);
  CHECK_THROWS_AS(scale(huge, 10.0), std::runtime_error);
  set_finite_checks(false);
  Tensor y = scale(huge, 10.0);
  CHECK(std::isinf(y.data()[0]));
  set_finite_checks(true);
}

TEST_CASE("gradients agree with finite differences across kernels and seeds") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    Rng rng(seed);

    auto through_dense = [](const std::vector<Tensor>& in) {
      return gelu(add(matmul(in[0], in[1]), in[2]));
    };
    CHECK(grad_check(through_dense, {rand_t({3, 4}, rng), rand_t({4, 2}, rng), rand_t({2}, rng)}) < 1e-4);

    auto through_softmax = [](const std::vector<Tensor>& in) { return softmax(in[0], 1); };
    CHECK(grad_check(through_softmax, {rand_t({3, 5}, rng)}) < 1e-4);

    auto through_norm = [](const std::vector<Tensor>& in) { return l2_normalize(in[0], 0); };
    CHECK(grad_check(through_norm, {rand_t({6}, rng)}) < 1e-4);

    auto through_conv = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2]); };
    CHECK(grad_check(through_conv, {rand_t({2, 4, 4}, rng), rand_t({3, 2, 3, 3}, rng), rand_t({3}, rng)}) < 1e-4);

    auto through_deconv = [](const std::vector<Tensor>& in) { return deconv2d(in[0], in[1], in[2]); };
    CHECK(grad_check(through_deconv, {rand_t({2, 3, 3}, rng), rand_t({2, 3, 2, 2}, rng), rand_t({3}, rng)}) < 1e-4);

    auto through_ln = [](const std::vector<Tensor>& in) { return layernorm(in[0], 1, in[1], in[2]); };
    CHECK(grad_check(through_ln, {rand_t({3, 4}, rng), rand_t({4}, rng), rand_t({4}, rng)}) < 1e-4);

    auto through_pool = [](const std::vector<Tensor>& in) { return maxpool2d(in[0]); };
    CHECK(grad_check(through_pool, {rand_t({2, 4, 4}, rng)}) < 1e-4);

    auto through_upsample = [](const std::vector<Tensor>& in) { return bilinear_upsample2x(in[0]); };
    CHECK(grad_check(through_upsample, {rand_t({2, 3, 3}, rng)}) < 1e-4);

    auto through_cat = [](const std::vector<Tensor>& in) {
      return slice(concat({in[0], in[1]}, 0), 0, 1, 3);
    };
    CHECK(grad_check(through_cat, {rand_t({2, 3}, rng), rand_t({2, 3}, rng)}) < 1e-4);

    auto through_gather = [](const std::vector<Tensor>& in) { return gather_rows(in[0], {2, 0, 2}); };
    CHECK(grad_check(through_gather, {rand_t({3, 4}, rng)}) < 1e-4);

    auto through_broadcast = [](const std::vector<Tensor>& in) {
      return mul(add(in[0], in[1]), add(in[0], in[0]));
    };
    CHECK(grad_check(through_broadcast, {rand_t({2, 3}, rng), rand_t({3}, rng)}) < 1e-4);

    auto through_misc = [](const std::vector<Tensor>& in) {
      return add(sigmoid(transpose2d(in[0])), relu(transpose2d(in[0])));
    };
    CHECK(grad_check(through_misc, {rand_t({3, 2}, rng)}) < 1e-4);
  }
}

TEST_CASE("the packaged kernel gradient suite stays under tolerance") {
  std::vector<KernelGradReport> report = kernel_grad_suite(3);
  REQUIRE(report.size() == 13);
  std::set<std::string> names;
  for (const KernelGradReport& r : report) {
    CAPTURE(r.kernel);
    CHECK(r.max_rel_err < 1e-4);
    names.insert(r.kernel);
  }
  CHECK(names.size() == report.size());
  CHECK(names.count("conv2d") == 1);
  CHECK(names.count("cross_entropy") == 1);
}

TEST_CASE("param store reproduces bit-identical values per seed and stays f32-exact") {
  ParamStore a(42), b(42), c(43);
  Tensor wa = a.trunc_normal("w", {8, 8}, 0.02);
  Tensor wb = b.trunc_normal("w", {8, 8}, 0.02);
  Tensor wc = c.trunc_normal("w", {8, 8}, 0.02);
  bool same = true, diff = false;
  for (int64_t i = 0; i < wa.numel(); ++i) {
    same = same && wa.data()[i] == wb.data()[i];
    diff = diff || wa.data()[i] != wc.data()[i];
  }
  CHECK(same);
  CHECK(diff);
  for (int64_t i = 0; i < wa.numel(); ++i) {
    CHECK(wa.data()[i] == static_cast<double>(static_cast<float>(wa.data()[i])));
    CHECK(std::fabs(wa.data()[i]) <= 0.04 + 1e-9);  // clipped at two sigma
  }
  CHECK(wa.requires_grad());
  CHECK_THROWS_AS(a.trunc_normal("w", {2}, 0.02), std::invalid_argument);
  CHECK(a.at("w").numel() == 64);
  CHECK_THROWS_AS(a.at("nope"), std::invalid_argument);
  Tensor h = a.he_normal("h", {4, 4}, 16);
  CHECK(a.count() == 80);
}
