#pragma once

#include <array>
#include <memory>
#include <vector>

#include "geovit/fusion.hpp"
#include "geovit/loc_encoder.hpp"
#include "geovit/params.hpp"
#include "geovit/seg_head.hpp"
#include "geovit/sfpn.hpp"
#include "geovit/vit.hpp"

namespace geovit {

struct ModelConfig {
  ViTConfig vit;
  int64_t pyramid_channels = 256;  // C_d; also the location embedding width
  int64_t n_classes = 2;
  int64_t loc_hidden = 256;
  std::array<int64_t, 4> head_widths{128, 64, 32, 16};
  bool fusion_enabled = false;
  FusionConfig fusion;

  void validate() const;
};

/// Backbone -> (pre fusion) -> pyramid -> (post fusion per level) -> head.
/// Pre placement fuses the backbone map once before the pyramid (which then
/// re-projects to pyramid_channels); post placement fuses each pyramid level
/// independently, widening the head's skip channels for concat variants.
class GeoVitModel {
 public:
  GeoVitModel(ParamStore& params, const ModelConfig& cfg);

  /// Pyramid levels in scale order {16, 8, 4, 2}, after any fusion.
  std::vector<Tensor> pyramid(const Tensor& image, const GeoCoord& coord) const;
  /// Full forward pass to n_classes x img x img logits.
  Tensor logits(const Tensor& image, const GeoCoord& coord) const;

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return *backbone_; }
  /// Null when fusion is disabled. The training loop must bump the cache
  /// version after every parameter update.
  LocEncoder* loc_encoder() const { return loc_.get(); }
  /// Channel widths the head consumes at scales {16, 8, 4, 2}.
  const std::array<int64_t, 4>& head_in_channels() const { return head_in_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<LocEncoder> loc_;
  std::unique_ptr<FusionSite> pre_site_;
  std::vector<std::unique_ptr<FusionSite>> post_sites_;  // scale order, empty unless post placement
  std::unique_ptr<Sfpn> sfpn_;
  std::array<int64_t, 4> head_in_{};
  std::unique_ptr<UnetHead> head_;
};

}  // namespace geovit
