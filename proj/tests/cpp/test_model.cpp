#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "geovit/model.hpp"
#include "geovit/rng.hpp"
#include "geovit/seg_head.hpp"

using namespace geovit;

namespace {

ModelConfig small_config() {
  ModelConfig mc;
  mc.vit = ViTConfig::tiny(32);
  mc.pyramid_channels = 8;
  mc.n_classes = 3;
  mc.loc_hidden = 16;
  mc.head_widths = {4, 4, 4, 4};
  return mc;
}

Tensor random_image(Rng& rng, int64_t img) {
  Tensor x = Tensor::zeros({3, img, img});
  for (auto& v : x.impl()->data) v = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("baseline model maps an image to class logits deterministically") {
  const ModelConfig mc = small_config();
  Rng rng(3);
  const Tensor img = random_image(rng, 32);
  const GeoCoord at{12.0, 47.0};

  ParamStore a(11);
  GeoVitModel model_a(a, mc);
  const Tensor ya = model_a.logits(img, at);
  REQUIRE(ya.shape() == Shape{3, 32, 32});
  for (double v : ya.impl()->data) CHECK(std::isfinite(v));

  ParamStore b(11);
  GeoVitModel model_b(b, mc);
  const Tensor yb = model_b.logits(img, at);
  CHECK(std::memcmp(ya.data(), yb.data(), sizeof(double) * ya.numel()) == 0);

  ParamStore c(12);
  GeoVitModel model_c(c, mc);
  const Tensor yc = model_c.logits(img, at);
  CHECK(std::memcmp(ya.data(), yc.data(), sizeof(double) * ya.numel()) != 0);

  // no fusion -> the coordinate must not influence the output
  const Tensor yd = model_a.logits(img, GeoCoord{-120.0, -33.0});
  CHECK(std::memcmp(ya.data(), yd.data(), sizeof(double) * ya.numel()) == 0);
}

TEST_CASE("head input widths follow the fusion placement and strategy") {
  auto widths = [](FusionStrategy s, Placement p) {
    ModelConfig mc = small_config();
    mc.fusion_enabled = true;
    mc.fusion.strategy = s;
    mc.fusion.placement = p;
    mc.fusion.n_tokens = 2;
    mc.fusion.d_attn = 4;
    ParamStore store(1);
    GeoVitModel model(store, mc);
    return model.head_in_channels();
  };

  // post fusion widens every level for the concat family, d_loc = pyramid channels = 8
  CHECK(widths(FusionStrategy::concat, Placement::post) == std::array<int64_t, 4>{16, 16, 16, 16});
  CHECK(widths(FusionStrategy::norm_concat, Placement::post) == std::array<int64_t, 4>{16, 16, 16, 16});
  CHECK(widths(FusionStrategy::proj_concat, Placement::post) == std::array<int64_t, 4>{9, 9, 9, 9});
  CHECK(widths(FusionStrategy::add, Placement::post) == std::array<int64_t, 4>{8, 8, 8, 8});
  CHECK(widths(FusionStrategy::cross_attention, Placement::post) == std::array<int64_t, 4>{8, 8, 8, 8});

  // pre fusion happens before the pyramid, which re-projects to pyramid channels
  CHECK(widths(FusionStrategy::concat, Placement::pre) == std::array<int64_t, 4>{8, 8, 8, 8});
  CHECK(widths(FusionStrategy::proj_concat, Placement::pre) == std::array<int64_t, 4>{8, 8, 8, 8});
  CHECK(widths(FusionStrategy::cross_attention, Placement::pre) == std::array<int64_t, 4>{8, 8, 8, 8});
}

TEST_CASE("pre placement owns one fusion site, post placement owns one per level") {
  ModelConfig mc = small_config();
  mc.fusion_enabled = true;
  mc.fusion.strategy = FusionStrategy::proj_add;

  mc.fusion.placement = Placement::pre;
  {
    ParamStore store(1);
    GeoVitModel model(store, mc);
    CHECK(store.has("fuse.pre.wl"));
    CHECK_FALSE(store.has("fuse.s16.wl"));
    // projection maps the location vector onto the 2x2 backbone grid
    CHECK(store.at("fuse.pre.wl").shape() == Shape{8, 4});
  }

  mc.fusion.placement = Placement::post;
  {
    ParamStore store(1);
    GeoVitModel model(store, mc);
    CHECK_FALSE(store.has("fuse.pre.wl"));
    CHECK(store.at("fuse.s16.wl").shape() == Shape{8, 2 * 2});
    CHECK(store.at("fuse.s8.wl").shape() == Shape{8, 4 * 4});
    CHECK(store.at("fuse.s4.wl").shape() == Shape{8, 8 * 8});
    CHECK(store.at("fuse.s2.wl").shape() == Shape{8, 16 * 16});
  }
}

TEST_CASE("every valid fusion configuration composes end to end") {
  const FusionStrategy strategies[] = {FusionStrategy::add,         FusionStrategy::norm_add,
                                       FusionStrategy::concat,      FusionStrategy::norm_concat,
                                       FusionStrategy::concat_norm, FusionStrategy::proj_add,
                                       FusionStrategy::proj_concat, FusionStrategy::cross_attention};
  Rng rng(5);
  const Tensor img = random_image(rng, 32);
  const GeoCoord at{-63.5, 71.25};

  int built = 0;
  for (FusionStrategy s : strategies) {
    for (Placement p : {Placement::pre, Placement::post}) {
      if (p == Placement::pre && (s == FusionStrategy::add || s == FusionStrategy::norm_add)) continue;
      for (Granularity g : {Granularity::L10, Granularity::L40}) {
        ModelConfig mc = small_config();
        mc.fusion_enabled = true;
        mc.fusion.strategy = s;
        mc.fusion.placement = p;
        mc.fusion.granularity = g;
        mc.fusion.n_tokens = 2;
        mc.fusion.d_attn = 4;
        ParamStore store(7);
        GeoVitModel model(store, mc);
        const Tensor y = model.logits(img, at);
        REQUIRE(y.shape() == Shape{3, 32, 32});
        for (double v : y.impl()->data) REQUIRE(std::isfinite(v));
        ++built;
      }
    }
  }
  CHECK(built == 28);
}

TEST_CASE("fused models actually condition on the coordinate") {
  ModelConfig mc = small_config();
  mc.fusion_enabled = true;
  mc.fusion.strategy = FusionStrategy::concat;
  mc.fusion.placement = Placement::post;
  mc.fusion.granularity = Granularity::L40;
  ParamStore store(9);
  GeoVitModel model(store, mc);

  Rng rng(6);
  const Tensor img = random_image(rng, 32);
  const Tensor here = model.logits(img, GeoCoord{10.0, 60.0});
  const Tensor there = model.logits(img, GeoCoord{-140.0, -20.0});
  CHECK(std::memcmp(here.data(), there.data(), sizeof(double) * here.numel()) != 0);

  // longitude aliases 360 degrees apart are the same place
  const Tensor alias = model.logits(img, GeoCoord{370.0, 60.0});
  CHECK(std::memcmp(here.data(), alias.data(), sizeof(double) * here.numel()) == 0);
}

TEST_CASE("invalid configurations are rejected at construction") {
  ModelConfig mc = small_config();
  mc.fusion_enabled = true;
  mc.fusion.placement = Placement::pre;
  mc.fusion.strategy = FusionStrategy::add;
  {
    ParamStore store(1);
    CHECK_THROWS_AS(GeoVitModel(store, mc), std::invalid_argument);
  }
  mc.fusion.strategy = FusionStrategy::norm_add;
  {
    ParamStore store(1);
    CHECK_THROWS_AS(GeoVitModel(store, mc), std::invalid_argument);
  }

  ModelConfig bad = small_config();
  bad.n_classes = 1;
  {
    ParamStore store(1);
    CHECK_THROWS_AS(GeoVitModel(store, bad), std::invalid_argument);
  }
  bad = small_config();
  bad.head_widths[2] = 0;
  {
    ParamStore store(1);
    CHECK_THROWS_AS(GeoVitModel(store, bad), std::invalid_argument);
  }
}

// Per-op and per-module gradients are finite-difference-verified elsewhere;
// here the target is the composed wiring: every family receives gradient,
// smooth-path scalars agree with finite differences, and the whole gradient
// is a descent direction. Elements feeding wide ReLU layers are deliberately
// not FD-probed: kink density along those directions ruins the comparison.
TEST_CASE("training gradients reach every parameter family") {
  ModelConfig mc = small_config();
  mc.pyramid_channels = 4;
  mc.n_classes = 2;
  mc.fusion_enabled = true;
  mc.fusion.strategy = FusionStrategy::cross_attention;
  mc.fusion.placement = Placement::post;
  mc.fusion.n_tokens = 2;
  mc.fusion.d_attn = 4;
  ParamStore store(21);
  GeoVitModel model(store, mc);

  Rng rng(22);
  const Tensor img = random_image(rng, 32);
  const GeoCoord at{30.0, -5.0};
  ClassMap truth(32, 32);
  for (auto& v : truth.v) v = static_cast<uint8_t>(rng.uniform_int(0, 1));

  auto loss_at = [&] { return seg_loss(model.logits(img, at), truth); };
  Tensor loss;
  {
    Tape tape;
    loss = loss_at();
    tape.backward(loss);
  }
  const double base = loss.data()[0];
  REQUIRE(std::isfinite(base));

  auto family_grad = [&](const std::string& prefix) {
    double m = 0.0;
    for (const auto& [name, t] : store.items()) {
      if (name.rfind(prefix, 0) != 0 || !t.has_grad()) continue;
      for (double g : t.grad()) m = std::max(m, std::abs(g));
    }
    return m;
  };
  CHECK(family_grad("backbone.") > 0.0);
  CHECK(family_grad("loc.") > 0.0);
  CHECK(family_grad("fuse.") > 0.0);
  CHECK(family_grad("sfpn.") > 0.0);
  CHECK(family_grad("head.") > 0.0);

  // numeric probe at the strongest scalar of families whose path stays smooth
  auto probe = [&](const std::string& prefix) {
    const Tensor* best = nullptr;
    size_t best_i = 0;
    double best_g = -1.0;
    for (const auto& [name, t] : store.items()) {
      if (name.rfind(prefix, 0) != 0 || !t.has_grad()) continue;
      for (size_t i = 0; i < t.grad().size(); ++i) {
        if (std::abs(t.grad()[i]) > best_g) {
          best_g = std::abs(t.grad()[i]);
          best = &t;
          best_i = i;
        }
      }
    }
    REQUIRE(best != nullptr);
    double* slot = const_cast<double*>(best->data()) + best_i;
    const double keep = *slot;
    const double analytic = best->grad()[best_i];
    const double eps = 1e-5;
    double up, down;
    {
      NoTape guard;
      *slot = keep + eps;
      model.loc_encoder()->bump_version();
      up = loss_at().data()[0];
      *slot = keep - eps;
      model.loc_encoder()->bump_version();
      down = loss_at().data()[0];
      *slot = keep;
      model.loc_encoder()->bump_version();
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    CAPTURE(prefix);
    CHECK(err < 1e-4);
  };
  probe("head.cls.");  // past the last ReLU: pure conv -> softmax cross-entropy
  probe("loc.");

  // the full gradient must point downhill and its negation uphill
  auto nudge = [&](double step) {
    for (const auto& [name, t] : store.items()) {
      if (!t.has_grad()) continue;
      double* d = const_cast<double*>(t.data());
      for (size_t i = 0; i < t.grad().size(); ++i) d[i] += step * t.grad()[i];
    }
    model.loc_encoder()->bump_version();
  };
  const double eta = 1e-3;  // small enough that curvature cannot mask the slope
  double downhill, uphill;
  {
    NoTape guard;
    nudge(-eta);
    downhill = loss_at().data()[0];
    nudge(2.0 * eta);
    uphill = loss_at().data()[0];
    nudge(-eta);
  }
  CHECK(downhill < base);
  CHECK(uphill > base);
}

TEST_CASE("image features keep full influence under elementwise fusion") {
  // cross attention reduces image influence to the query path by design;
  // concat must not. A strong backbone gradient shows the image route is live.
  ModelConfig mc = small_config();
  mc.pyramid_channels = 4;
  mc.n_classes = 2;
  mc.fusion_enabled = true;
  mc.fusion.strategy = FusionStrategy::concat;
  mc.fusion.placement = Placement::post;
  mc.fusion.granularity = Granularity::L40;
  ParamStore store(31);
  GeoVitModel model(store, mc);

  Rng rng(32);
  const Tensor img = random_image(rng, 32);
  ClassMap truth(32, 32);
  for (auto& v : truth.v) v = static_cast<uint8_t>(rng.uniform_int(0, 1));

  Tensor loss;
  {
    Tape tape;
    loss = seg_loss(model.logits(img, GeoCoord{30.0, -5.0}), truth);
    tape.backward(loss);
  }
  double backbone_g = 0.0, loc_g = 0.0;
  for (const auto& [name, t] : store.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (name.rfind("backbone.", 0) == 0) backbone_g = std::max(backbone_g, std::abs(g));
      if (name.rfind("loc.", 0) == 0) loc_g = std::max(loc_g, std::abs(g));
    }
  }
  CHECK(backbone_g > 1e-8);
  CHECK(loc_g > 1e-8);
}
