#pragma once

#include <string>

#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

enum class FusionStrategy { add, norm_add, concat, norm_concat, concat_norm, proj_add, proj_concat, cross_attention };
enum class Placement { pre, post };
enum class Granularity { L10, L40 };

FusionStrategy parse_strategy(const std::string& s);
Placement parse_placement(const std::string& s);
Granularity parse_granularity(const std::string& s);
std::string to_string(FusionStrategy s);
std::string to_string(Placement p);
std::string to_string(Granularity g);
int granularity_degree(Granularity g);  // L10 -> 10, L40 -> 40

/// How and where the location embedding merges with image features.
/// add and norm_add are valid post-pyramid only (pre-pyramid channel widths
/// do not match the location embedding there).
struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::add;
  Placement placement = Placement::post;
  Granularity granularity = Granularity::L10;
  int64_t n_tokens = 8;  // cross_attention: location tokens (1 = literal single-key form)
  int64_t d_attn = 16;   // cross_attention: query/key dimension
  bool residual = false; // cross_attention: add F back to the attention output

  void validate() const;
};

/// Repeats a location vector [d] at every position of an h x w grid -> d x h x w.
Tensor tile_location(const Tensor& loc, int64_t h, int64_t w);

/// Parameter-free merge strategies. Normalization is per spatial position
/// across channels. add/norm_add require loc dimension == feature channels.
Tensor fuse_elementwise(const Tensor& f, const Tensor& loc, FusionStrategy strategy);

/// One fusion point bound to a fixed feature shape: owns the learned
/// projections for proj_add / proj_concat (W_l) and cross_attention
/// (W_q, W_k, W_v, W_tok). Elementwise strategies hold no parameters.
class FusionSite {
 public:
  FusionSite(ParamStore& params, const std::string& prefix, const FusionConfig& cfg, int64_t feat_channels,
             int64_t d_loc, int64_t h, int64_t w);

  /// Merges f (feat_channels x h x w) with loc [d_loc]. For cross_attention,
  /// `attn_out` (when non-null) receives the (h*w) x n_tokens attention map.
  Tensor fuse(const Tensor& f, const Tensor& loc, Tensor* attn_out = nullptr) const;

  int64_t out_channels() const;
  static int64_t out_channels_for(const FusionConfig& cfg, int64_t feat_channels, int64_t d_loc);

 private:
  FusionConfig cfg_;
  int64_t feat_channels_, d_loc_, h_, w_;
  Tensor wl_;                     // proj_*: d_loc -> h*w
  Tensor wq_, wk_, wv_, wtok_;    // cross_attention
};

}  // namespace geovit
