#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "geovit/model.hpp"

namespace geovit {

/// One training/evaluation run, as read from a flat key=value config file
/// (UTF-8, '#' comments, unknown or repeated keys rejected). Every field has
/// a canonical key; canonical_text() echoes the resolved config in a stable
/// order so checkpoints can embed it and reproduce the run.
struct RunConfig {
  std::string backbone = "tiny";  // tiny | small
  int64_t img_size = 64;
  int64_t n_classes = 3;
  int64_t pyramid_channels = 256;
  int64_t loc_hidden = 256;
  std::array<int64_t, 4> head_widths{128, 64, 32, 16};
  std::string fusion = "none";  // none | strategy name
  std::string placement = "post";
  std::string granularity = "L10";
  int64_t n_tokens = 8;
  int64_t d_attn = 16;
  int64_t epochs = 75;
  int64_t per_device_batch = 1;
  int64_t devices = 1;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  std::string manifest;
  std::string out_dir;
  bool scale_jitter = false;
  double jitter_min = 0.1;
  double jitter_max = 2.0;
  std::string feature = "synthetic";  // tag for the ablation CSV's feature column

  void validate() const;
  ModelConfig model_config() const;
  std::string canonical_text() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config_file(const std::string& path);

}  // namespace geovit
