#pragma once

#include <array>
#include <string>
#include <utility>

#include "geovit/class_map.hpp"
#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// 2x bilinear upsample of x, channel-concat with skip, 3x3 conv, ReLU.
/// skip's spatial extents must be exactly twice x's.
Tensor upsample_block(const Tensor& x, const Tensor& skip, const Tensor& w, const Tensor& b);

/// Cascaded upsampler over a four-level pyramid (strides 16/8/4/2, possibly
/// fused, so each level declares its own channel width). Starts at the
/// coarsest level, consumes the finer three as skip connections, and one
/// extra upsampling stage reaches full resolution before the 1x1 classifier.
class UnetHead {
 public:
  /// in_channels and widths are ordered coarse->fine; widths[3] is the width
  /// of the final full-resolution stage.
  UnetHead(ParamStore& params, const std::string& prefix, const std::array<int64_t, 4>& in_channels,
           int64_t n_classes, const std::array<int64_t, 4>& widths = {128, 64, 32, 16});

  /// p16..p2: pyramid levels coarse->fine. Returns n_classes x H x W logits
  /// where H, W are 16x the spatial extents of p16.
  Tensor forward(const Tensor& p16, const Tensor& p8, const Tensor& p4, const Tensor& p2) const;

  int64_t n_classes() const { return n_classes_; }

 private:
  int64_t n_classes_;
  std::array<int64_t, 4> in_channels_, widths_;
  std::array<Tensor, 3> up_w_, up_b_;
  Tensor final_w_, final_b_, cls_w_, cls_b_;
};

/// Softmax over the class axis, then argmax; ties resolve to the lowest
/// class index. Returns the label map and the per-pixel probability tensor.
std::pair<ClassMap, Tensor> predict(const Tensor& logits);

/// Mean pixelwise cross-entropy over pixels whose truth label is not
/// ignore_index. Throws if no pixel is valid.
Tensor seg_loss(const Tensor& logits, const ClassMap& truth, int ignore_index = kIgnoreIndex);

}  // namespace geovit
