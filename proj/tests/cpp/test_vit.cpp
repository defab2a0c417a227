#include <cstring>
#include <stdexcept>

#include "doctest.h"
#include "geovit/gradcheck.hpp"
#include "geovit/ops.hpp"
#include "geovit/vit.hpp"

using namespace geovit;

TEST_CASE("backbone config validation") {
  ViTConfig c = ViTConfig::tiny(64);
  CHECK(c.grid() == 4);
  CHECK(c.tokens() == 16);
  c.window_size = 3;  // 4 % 3 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ViTConfig::tiny(64);
  c.depth = 5;  // 5 % 2 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ViTConfig::tiny(64);
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ViTConfig::tiny(60), std::invalid_argument);  // not a multiple of 16
}

TEST_CASE("global blocks sit at subset boundaries and token count is invariant") {
  ViTConfig cfg = ViTConfig::tiny(64);
  ParamStore store(5);
  Backbone bb(store, "bb.", cfg);
  Rng rng(3);
  Tensor img = Tensor::randn({3, 64, 64}, rng);
  std::vector<AttnMode> trace;
  Tensor f = bb.forward(img, &trace);
  REQUIRE(trace.size() == 4);
  CHECK(trace[0] == AttnMode::window);
  CHECK(trace[1] == AttnMode::global);
  CHECK(trace[2] == AttnMode::window);
  CHECK(trace[3] == AttnMode::global);
  int globals = 0;
  for (AttnMode m : trace) globals += (m == AttnMode::global);
  CHECK(globals == cfg.depth / cfg.subset_size);
  REQUIRE(f.shape() == Shape{64, 4, 4});

  Tensor tokens = bb.embed_patches(img);
  REQUIRE(tokens.shape() == Shape{16, 64});
  for (int64_t i = 0; i < cfg.depth; ++i) {
    tokens = bb.attention_block(tokens, i, AttnMode::window);
    REQUIRE(tokens.shape() == Shape{16, 64});
  }
}

TEST_CASE("window covering the whole grid equals global attention bit-for-bit") {
  ViTConfig cfg = ViTConfig::tiny(64);
  cfg.window_size = 4;  // 4x4 patch grid, window spans it entirely
  cfg.validate();
  ParamStore store(11);
  Backbone bb(store, "bb.", cfg);
  Rng rng(21);
  Tensor tokens = Tensor::randn({16, 64}, rng);
  Tensor via_window = bb.attention_block(tokens, 0, AttnMode::window);
  Tensor via_global = bb.attention_block(tokens, 0, AttnMode::global);
  CHECK(std::memcmp(via_window.data(), via_global.data(), sizeof(double) * 16 * 64) == 0);
}

TEST_CASE("all-equal tokens behave like the single-token path") {
  ViTConfig one;  // 1x1 grid: a single token
  one.img_size = 16;
  one.window_size = 1;
  one.subset_size = 1;
  one.validate();
  ViTConfig four = ViTConfig::tiny(32);  // 2x2 grid
  ParamStore s1(77), s4(77);
  Backbone b1(s1, "bb.", one), b4(s4, "bb.", four);

  Rng rng(5);
  std::vector<double> row(64);
  for (auto& v : row) v = rng.gaussian();
  Tensor t1 = Tensor::from_data({1, 64}, row);
  std::vector<double> rep;
  for (int i = 0; i < 4; ++i) rep.insert(rep.end(), row.begin(), row.end());
  Tensor t4 = Tensor::from_data({4, 64}, rep);

  Tensor o1 = b1.attention_block(t1, 0, AttnMode::global);
  Tensor o4 = b4.attention_block(t4, 0, AttnMode::global);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 64; ++c) CHECK(o4.data()[r * 64 + c] == doctest::Approx(o1.data()[c]).epsilon(1e-12));
}

TEST_CASE("backbone end-to-end gradients pass finite differences") {
  ViTConfig cfg;
  cfg.img_size = 32;
  cfg.in_chans = 2;
  cfg.embed_dim = 16;
  cfg.depth = 2;
  cfg.n_heads = 4;
  cfg.window_size = 2;
  cfg.subset_size = 2;
  cfg.mlp_ratio = 2.0;
  cfg.validate();
  ParamStore store(123);
  Backbone bb(store, "bb.", cfg);
  Rng rng(9);
  Tensor img = Tensor::randn({2, 32, 32}, rng);
  std::vector<Tensor> params;
  for (const auto& [name, p] : store.items()) params.push_back(p);
  auto fn = [&](const std::vector<Tensor>&) { return bb.forward(img); };
  CHECK(grad_check(fn, params) < 1e-4);
}
