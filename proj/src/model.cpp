#include "geovit/model.hpp"

#include <stdexcept>
#include <string>

namespace geovit {

void ModelConfig::validate() const {
  vit.validate();
  if (pyramid_channels < 1) throw std::invalid_argument("ModelConfig: pyramid_channels must be positive");
  if (n_classes < 2 || n_classes >= kIgnoreIndex) {
    throw std::invalid_argument("ModelConfig: n_classes must be in [2, 255)");
  }
  if (loc_hidden < 1) throw std::invalid_argument("ModelConfig: loc_hidden must be positive");
  for (int64_t w : head_widths) {
    if (w < 1) throw std::invalid_argument("ModelConfig: head widths must be positive");
  }
  if (fusion_enabled) fusion.validate();
}

GeoVitModel::GeoVitModel(ParamStore& params, const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  backbone_ = std::make_unique<Backbone>(params, "backbone.", cfg_.vit);
  const int64_t d_loc = cfg_.pyramid_channels;
  const int64_t grid = cfg_.vit.grid();

  int64_t sfpn_in = cfg_.vit.embed_dim;
  if (cfg_.fusion_enabled) {
    loc_ = std::make_unique<LocEncoder>(params, "loc.", granularity_degree(cfg_.fusion.granularity), d_loc,
                                        cfg_.loc_hidden);
    if (cfg_.fusion.placement == Placement::pre) {
      pre_site_ = std::make_unique<FusionSite>(params, "fuse.pre.", cfg_.fusion, cfg_.vit.embed_dim, d_loc, grid,
                                               grid);
      sfpn_in = pre_site_->out_channels();
    }
  }

  sfpn_ = std::make_unique<Sfpn>(params, "sfpn.", sfpn_in, cfg_.pyramid_channels);

  const auto& scales = Sfpn::scales();
  for (size_t i = 0; i < scales.size(); ++i) {
    head_in_[i] = cfg_.pyramid_channels;
    if (cfg_.fusion_enabled && cfg_.fusion.placement == Placement::post) {
      const int64_t extent = cfg_.vit.img_size / scales[i];
      post_sites_.push_back(std::make_unique<FusionSite>(params, "fuse.s" + std::to_string(scales[i]) + ".",
                                                         cfg_.fusion, cfg_.pyramid_channels, d_loc, extent, extent));
      head_in_[i] = post_sites_.back()->out_channels();
    }
  }

  head_ = std::make_unique<UnetHead>(params, "head.", head_in_, cfg_.n_classes, cfg_.head_widths);
}

std::vector<Tensor> GeoVitModel::pyramid(const Tensor& image, const GeoCoord& coord) const {
  Tensor f = backbone_->forward(image);
  Tensor lvec;
  if (loc_) lvec = loc_->encode(coord);
  if (pre_site_) f = pre_site_->fuse(f, lvec);
  std::vector<Tensor> levels = sfpn_->build(f);
  if (!post_sites_.empty()) {
    for (size_t i = 0; i < levels.size(); ++i) levels[i] = post_sites_[i]->fuse(levels[i], lvec);
  }
  return levels;
}

Tensor GeoVitModel::logits(const Tensor& image, const GeoCoord& coord) const {
  std::vector<Tensor> p = pyramid(image, coord);
  return head_->forward(p[0], p[1], p[2], p[3]);
}

}  // namespace geovit
