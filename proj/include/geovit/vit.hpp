#pragma once

#include <string>
#include <vector>

#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// Plain ViT geometry and attention schedule. The token grid is carved into
/// window_size x window_size attention groups; the last block of every
/// subset_size blocks attends globally instead.
struct ViTConfig {
  int64_t img_size = 64;
  int64_t patch_size = 16;
  int64_t in_chans = 3;
  int64_t embed_dim = 64;
  int64_t depth = 4;
  int64_t n_heads = 4;
  int64_t window_size = 2;  // in patches
  int64_t subset_size = 2;  // blocks per subset
  double mlp_ratio = 4.0;

  void validate() const;
  int64_t grid() const { return img_size / patch_size; }
  int64_t tokens() const { return grid() * grid(); }
  bool block_is_global(int64_t i) const { return (i + 1) % subset_size == 0; }

  static ViTConfig tiny(int64_t img_size, int64_t in_chans = 3);
  static ViTConfig small(int64_t img_size, int64_t in_chans = 3);
};

enum class AttnMode { window, global };

/// Patchify -> linear embed + learned positional encoding -> pre-norm
/// transformer blocks -> final LayerNorm -> spatial feature map.
class Backbone {
 public:
  Backbone(ParamStore& params, const std::string& prefix, const ViTConfig& cfg);

  /// Image (in_chans x img x img) to token matrix (n x d).
  Tensor embed_patches(const Tensor& image) const;
  /// Runs all blocks plus the final norm; returns d x grid x grid.
  /// When `trace` is given, the attention mode of each block is appended.
  Tensor encode_tokens(Tensor tokens, std::vector<AttnMode>* trace = nullptr) const;
  Tensor forward(const Tensor& image, std::vector<AttnMode>* trace = nullptr) const;

  /// One pre-norm block. Global mode is literally the window path with a
  /// single window spanning the whole grid.
  Tensor attention_block(const Tensor& tokens, int64_t block, AttnMode mode) const;

  const ViTConfig& config() const { return cfg_; }

 private:
  struct Block {
    Tensor ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  Tensor mhsa(const Tensor& tokens, const Block& blk, int64_t window) const;

  ViTConfig cfg_;
  Tensor patch_w_, patch_b_, pos_;
  std::vector<Block> blocks_;
  Tensor ln_g_, ln_b_;
};

}  // namespace geovit
