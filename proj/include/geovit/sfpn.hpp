#pragma once

#include <string>
#include <vector>

#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// What a pyramid level actually executed; used by contract tests.
struct SfpnLevelTrace {
  int pre_activations = 0;  // GeLU(LayerNorm) steps before a resize
  int deconvs = 0;
  int maxpools = 0;
};

/// One pyramid level: |log2(from_scale) - log2(to_scale)| resize steps
/// (transposed conv when upsampling, maxpool when downsampling, with a
/// GeLU(LayerNorm) pre-activation before every deconv except the first),
/// then LayerNorm(Conv1x1(C_d)) and LayerNorm(Conv3x3(C_d)). Channel widths
/// halve per deconv, floored at C_d.
class SfpnLevel {
 public:
  SfpnLevel(ParamStore& params, const std::string& prefix, int64_t in_channels, int64_t out_channels,
            int64_t from_scale, int64_t to_scale);

  Tensor forward(const Tensor& f, SfpnLevelTrace* trace = nullptr) const;

  int64_t to_scale() const { return to_scale_; }
  int num_resizes() const { return num_resizes_; }

 private:
  struct Resize {
    Tensor ln_g, ln_b;  // defined only when a pre-activation precedes this step
    Tensor w, b;        // defined only for deconv steps
  };

  int64_t in_channels_, out_channels_, from_scale_, to_scale_;
  int num_resizes_;  // signed: positive = upsample
  std::vector<Resize> resizes_;
  Tensor conv1_w_, conv1_b_, ln1_g_, ln1_b_;
  Tensor conv3_w_, conv3_b_, ln3_g_, ln3_b_;
};

/// The standard four-level pyramid at scales {16, 8, 4, 2}, each level with
/// independent parameters, consuming one backbone map produced at scale 16.
class Sfpn {
 public:
  Sfpn(ParamStore& params, const std::string& prefix, int64_t in_channels, int64_t out_channels);

  static const std::vector<int64_t>& scales();

  /// Levels in scale order {16, 8, 4, 2}. Traces, when requested, align.
  std::vector<Tensor> build(const Tensor& f, std::vector<SfpnLevelTrace>* traces = nullptr) const;
  const SfpnLevel& level(int64_t scale) const;

  int64_t out_channels() const { return out_channels_; }

 private:
  int64_t out_channels_;
  std::vector<SfpnLevel> levels_;
};

}  // namespace geovit
