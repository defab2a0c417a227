#include "geovit/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "geovit/ops.hpp"

namespace geovit {

FusionStrategy parse_strategy(const std::string& s) {
  if (s == "add") return FusionStrategy::add;
  if (s == "norm_add") return FusionStrategy::norm_add;
  if (s == "concat") return FusionStrategy::concat;
  if (s == "norm_concat") return FusionStrategy::norm_concat;
  if (s == "concat_norm") return FusionStrategy::concat_norm;
  if (s == "proj_add") return FusionStrategy::proj_add;
  if (s == "proj_concat") return FusionStrategy::proj_concat;
  if (s == "cross_attention") return FusionStrategy::cross_attention;
  throw std::invalid_argument(
      "fusion: unknown strategy '" + s +
      "' (expected add, norm_add, concat, norm_concat, concat_norm, proj_add, proj_concat, cross_attention)");
}

Placement parse_placement(const std::string& s) {
  if (s == "pre") return Placement::pre;
  if (s == "post") return Placement::post;
  throw std::invalid_argument("fusion: unknown placement '" + s + "' (expected pre or post)");
}

Granularity parse_granularity(const std::string& s) {
  if (s == "L10") return Granularity::L10;
  if (s == "L40") return Granularity::L40;
  throw std::invalid_argument("fusion: unknown granularity '" + s + "' (expected L10 or L40)");
}

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::add: return "add";
    case FusionStrategy::norm_add: return "norm_add";
    case FusionStrategy::concat: return "concat";
    case FusionStrategy::norm_concat: return "norm_concat";
    case FusionStrategy::concat_norm: return "concat_norm";
    case FusionStrategy::proj_add: return "proj_add";
    case FusionStrategy::proj_concat: return "proj_concat";
    case FusionStrategy::cross_attention: return "cross_attention";
  }
  return "?";
}

std::string to_string(Placement p) { return p == Placement::pre ? "pre" : "post"; }
std::string to_string(Granularity g) { return g == Granularity::L10 ? "L10" : "L40"; }
int granularity_degree(Granularity g) { return g == Granularity::L10 ? 10 : 40; }

void FusionConfig::validate() const {
  if (placement == Placement::pre &&
      (strategy == FusionStrategy::add || strategy == FusionStrategy::norm_add)) {
    throw std::invalid_argument("fusion: strategy '" + to_string(strategy) +
                                "' is valid post-pyramid only; (pre, " + to_string(strategy) + ") is rejected");
  }
  if (strategy == FusionStrategy::cross_attention && (n_tokens < 1 || d_attn < 1)) {
    throw std::invalid_argument("fusion: cross_attention needs n_tokens >= 1 and d_attn >= 1");
  }
}

Tensor tile_location(const Tensor& loc, int64_t h, int64_t w) {
  if (loc.ndim() != 1) throw std::invalid_argument("tile_location: expected a vector, got " + shape_str(loc.shape()));
  if (h < 1 || w < 1) throw std::invalid_argument("tile_location: target grid must be at least 1x1");
  // broadcast-add against a zero map: every position receives an identical copy
  return add(reshape(loc, {loc.dim(0), 1, 1}), Tensor::zeros({1, h, w}));
}

Tensor fuse_elementwise(const Tensor& f, const Tensor& loc, FusionStrategy strategy) {
  if (f.ndim() != 3) throw std::invalid_argument("fuse_elementwise: features must be CxHxW");
  const bool add_like = strategy == FusionStrategy::add || strategy == FusionStrategy::norm_add;
  if (add_like && loc.dim(0) != f.dim(0)) {
    throw std::invalid_argument("fuse_elementwise: '" + to_string(strategy) + "' needs location dimension " +
                                std::to_string(loc.dim(0)) + " to equal feature channels " +
                                std::to_string(f.dim(0)));
  }
  Tensor tiled = tile_location(loc, f.dim(1), f.dim(2));
  switch (strategy) {
    case FusionStrategy::add:
      return add(f, tiled);
    case FusionStrategy::concat:
      return concat({f, tiled}, 0);
    case FusionStrategy::norm_add:
      return add(l2_normalize(f, 0), l2_normalize(tiled, 0));
    case FusionStrategy::norm_concat:
      return concat({l2_normalize(f, 0), l2_normalize(tiled, 0)}, 0);
    case FusionStrategy::concat_norm:
      return l2_normalize(concat({f, tiled}, 0), 0);
    default:
      throw std::invalid_argument("fuse_elementwise: '" + to_string(strategy) + "' is not an elementwise strategy");
  }
}

int64_t FusionSite::out_channels_for(const FusionConfig& cfg, int64_t feat_channels, int64_t d_loc) {
  switch (cfg.strategy) {
    case FusionStrategy::add:
    case FusionStrategy::norm_add:
    case FusionStrategy::proj_add:
    case FusionStrategy::cross_attention:
      return feat_channels;
    case FusionStrategy::concat:
    case FusionStrategy::norm_concat:
    case FusionStrategy::concat_norm:
      return feat_channels + d_loc;
    case FusionStrategy::proj_concat:
      return feat_channels + 1;
  }
  return feat_channels;
}

FusionSite::FusionSite(ParamStore& params, const std::string& prefix, const FusionConfig& cfg,
                       int64_t feat_channels, int64_t d_loc, int64_t h, int64_t w)
    : cfg_(cfg), feat_channels_(feat_channels), d_loc_(d_loc), h_(h), w_(w) {
  cfg_.validate();
  if (feat_channels < 1 || d_loc < 1 || h < 1 || w < 1) {
    throw std::invalid_argument("FusionSite: dimensions must be positive");
  }
  switch (cfg_.strategy) {
    case FusionStrategy::proj_add:
    case FusionStrategy::proj_concat:
      wl_ = params.trunc_normal(prefix + "wl", {d_loc, h * w}, 0.02);
      break;
    case FusionStrategy::cross_attention:
      wq_ = params.trunc_normal(prefix + "wq", {feat_channels, cfg_.d_attn}, 0.02);
      wtok_ = params.trunc_normal(prefix + "wtok", {d_loc, cfg_.n_tokens * cfg_.d_attn}, 0.02);
      wk_ = params.trunc_normal(prefix + "wk", {cfg_.d_attn, cfg_.d_attn}, 0.02);
      wv_ = params.trunc_normal(prefix + "wv", {cfg_.d_attn, feat_channels}, 0.02);
      break;
    default:
      break;  // elementwise strategies are parameter-free
  }
}

int64_t FusionSite::out_channels() const { return out_channels_for(cfg_, feat_channels_, d_loc_); }

Tensor FusionSite::fuse(const Tensor& f, const Tensor& loc, Tensor* attn_out) const {
  if (f.ndim() != 3 || f.dim(0) != feat_channels_ || f.dim(1) != h_ || f.dim(2) != w_) {
    throw std::invalid_argument("FusionSite: feature shape " + shape_str(f.shape()) + " does not match site [" +
                                std::to_string(feat_channels_) + "," + std::to_string(h_) + "," +
                                std::to_string(w_) + "]");
  }
  if (loc.ndim() != 1 || loc.dim(0) != d_loc_) {
    throw std::invalid_argument("FusionSite: location shape " + shape_str(loc.shape()) + " does not match d_loc " +
                                std::to_string(d_loc_));
  }
  switch (cfg_.strategy) {
    case FusionStrategy::proj_add:
    case FusionStrategy::proj_concat: {
      Tensor lp = reshape(matmul(reshape(loc, {1, d_loc_}), wl_), {1, h_, w_});
      if (cfg_.strategy == FusionStrategy::proj_add) return add(f, lp);  // broadcast across channels
      return concat({f, lp}, 0);
    }
    case FusionStrategy::cross_attention: {
      Tensor tokens = reshape(matmul(reshape(loc, {1, d_loc_}), wtok_), {cfg_.n_tokens, cfg_.d_attn});
      Tensor k = matmul(tokens, wk_);
      Tensor v = matmul(tokens, wv_);
      Tensor fq = transpose2d(reshape(f, {feat_channels_, h_ * w_}));  // (h*w) x C queries
      Tensor q = matmul(fq, wq_);
      Tensor a = softmax(scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.d_attn))), 1);
      if (attn_out) *attn_out = a;
      Tensor c = reshape(transpose2d(matmul(a, v)), {feat_channels_, h_, w_});
      return cfg_.residual ? add(f, c) : c;
    }
    default:
      return fuse_elementwise(f, loc, cfg_.strategy);
  }
}

}  // namespace geovit
