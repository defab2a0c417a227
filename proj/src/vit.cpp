#include "geovit/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "geovit/ops.hpp"

namespace geovit {

void ViTConfig::validate() const {
  if (img_size <= 0 || patch_size <= 0 || in_chans <= 0 || embed_dim <= 0 || depth <= 0 || n_heads <= 0 ||
      window_size <= 0 || subset_size <= 0 || mlp_ratio <= 0.0) {
    throw std::invalid_argument("ViTConfig: all fields must be positive");
  }
  if (img_size % patch_size != 0) {
    throw std::invalid_argument("ViTConfig: img_size " + std::to_string(img_size) +
                                " not a multiple of patch_size " + std::to_string(patch_size));
  }
  if (grid() % window_size != 0) {
    throw std::invalid_argument("ViTConfig: token grid " + std::to_string(grid()) +
                                " not divisible by window_size " + std::to_string(window_size));
  }
  if (depth % subset_size != 0) {
    throw std::invalid_argument("ViTConfig: depth " + std::to_string(depth) + " not divisible by subset_size " +
                                std::to_string(subset_size));
  }
  if (embed_dim % n_heads != 0) {
    throw std::invalid_argument("ViTConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
}

ViTConfig ViTConfig::tiny(int64_t img_size, int64_t in_chans) {
  ViTConfig c;
  c.img_size = img_size;
  c.in_chans = in_chans;
  c.embed_dim = 64;
  c.depth = 4;
  c.n_heads = 4;
  c.window_size = 2;
  c.subset_size = 2;
  c.validate();
  return c;
}

ViTConfig ViTConfig::small(int64_t img_size, int64_t in_chans) {
  ViTConfig c;
  c.img_size = img_size;
  c.in_chans = in_chans;
  c.embed_dim = 128;
  c.depth = 8;
  c.n_heads = 8;
  c.window_size = 2;
  c.subset_size = 2;
  c.validate();
  return c;
}

Backbone::Backbone(ParamStore& params, const std::string& prefix, const ViTConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.embed_dim;
  const int64_t patch_in = cfg_.in_chans * cfg_.patch_size * cfg_.patch_size;
  const int64_t hidden = static_cast<int64_t>(cfg_.mlp_ratio * static_cast<double>(d));
  patch_w_ = params.trunc_normal(prefix + "patch.w", {patch_in, d}, 0.02);
  patch_b_ = params.zeros(prefix + "patch.b", {d});
  pos_ = params.zeros(prefix + "pos", {cfg_.tokens(), d});
  for (int64_t i = 0; i < cfg_.depth; ++i) {
    const std::string p = prefix + "blk" + std::to_string(i) + ".";
    Block b;
    b.ln1_g = params.ones(p + "ln1.g", {d});
    b.ln1_b = params.zeros(p + "ln1.b", {d});
    b.wqkv = params.trunc_normal(p + "attn.wqkv", {d, 3 * d}, 0.02);
    b.bqkv = params.zeros(p + "attn.bqkv", {3 * d});
    b.wo = params.trunc_normal(p + "attn.wo", {d, d}, 0.02);
    b.bo = params.zeros(p + "attn.bo", {d});
    b.ln2_g = params.ones(p + "ln2.g", {d});
    b.ln2_b = params.zeros(p + "ln2.b", {d});
    b.mlp_w1 = params.trunc_normal(p + "mlp.w1", {d, hidden}, 0.02);
    b.mlp_b1 = params.zeros(p + "mlp.b1", {hidden});
    b.mlp_w2 = params.trunc_normal(p + "mlp.w2", {hidden, d}, 0.02);
    b.mlp_b2 = params.zeros(p + "mlp.b2", {d});
    blocks_.push_back(std::move(b));
  }
  ln_g_ = params.ones(prefix + "ln.g", {d});
  ln_b_ = params.zeros(prefix + "ln.b", {d});
}

Tensor Backbone::embed_patches(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(0) != cfg_.in_chans || image.dim(1) != cfg_.img_size ||
      image.dim(2) != cfg_.img_size) {
    throw std::invalid_argument("Backbone: image shape " + shape_str(image.shape()) + " does not match config [" +
                                std::to_string(cfg_.in_chans) + "," + std::to_string(cfg_.img_size) + "," +
                                std::to_string(cfg_.img_size) + "]");
  }
  const int64_t g = cfg_.grid(), ps = cfg_.patch_size, c = cfg_.in_chans, hw = cfg_.img_size;
  // patch rows ordered row-major over the grid; within a patch, channel-major
  std::vector<double> flat(static_cast<size_t>(g * g * c * ps * ps));
  size_t k = 0;
  for (int64_t py = 0; py < g; ++py) {
    for (int64_t px = 0; px < g; ++px) {
      for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t dy = 0; dy < ps; ++dy) {
          const double* src = image.data() + (ci * hw + py * ps + dy) * hw + px * ps;
          for (int64_t dx = 0; dx < ps; ++dx) flat[k++] = src[dx];
        }
      }
    }
  }
  Tensor patches = Tensor::from_data({g * g, c * ps * ps}, std::move(flat));
  return add(add(matmul(patches, patch_w_), patch_b_), pos_);
}

Tensor Backbone::mhsa(const Tensor& x, const Block& blk, int64_t window) const {
  const int64_t g = cfg_.grid(), d = cfg_.embed_dim, nh = cfg_.n_heads, dh = d / nh;
  const int64_t nwin = g / window;
  std::vector<int64_t> perm;
  perm.reserve(static_cast<size_t>(g * g));
  for (int64_t wy = 0; wy < nwin; ++wy)
    for (int64_t wx = 0; wx < nwin; ++wx)
      for (int64_t iy = 0; iy < window; ++iy)
        for (int64_t ix = 0; ix < window; ++ix) perm.push_back((wy * window + iy) * g + wx * window + ix);
  Tensor xw = gather_rows(x, perm);
  const int64_t wtok = window * window;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (int64_t w = 0; w < nwin * nwin; ++w) {
    Tensor t = slice(xw, 0, w * wtok, wtok);
    Tensor qkv = add(matmul(t, blk.wqkv), blk.bqkv);
    std::vector<Tensor> heads;
    for (int64_t h = 0; h < nh; ++h) {
      Tensor q = slice(qkv, 1, h * dh, dh);
      Tensor kk = slice(qkv, 1, d + h * dh, dh);
      Tensor v = slice(qkv, 1, 2 * d + h * dh, dh);
      Tensor a = softmax(scale(matmul(q, transpose2d(kk)), inv_sqrt_dh), 1);
      heads.push_back(matmul(a, v));
    }
    outs.push_back(add(matmul(concat(heads, 1), blk.wo), blk.bo));
  }
  Tensor yw = (outs.size() == 1) ? outs[0] : concat(outs, 0);
  std::vector<int64_t> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
  return gather_rows(yw, inv);
}

Tensor Backbone::attention_block(const Tensor& tokens, int64_t block, AttnMode mode) const {
  if (block < 0 || block >= cfg_.depth) throw std::invalid_argument("Backbone: block index out of range");
  if (tokens.ndim() != 2 || tokens.dim(0) != cfg_.tokens() || tokens.dim(1) != cfg_.embed_dim) {
    throw std::invalid_argument("Backbone: token shape " + shape_str(tokens.shape()) + " does not match config");
  }
  const Block& blk = blocks_[static_cast<size_t>(block)];
  const int64_t window = (mode == AttnMode::global) ? cfg_.grid() : cfg_.window_size;
  Tensor x = add(tokens, mhsa(layernorm(tokens, 1, blk.ln1_g, blk.ln1_b), blk, window));
  Tensor h = gelu(add(matmul(layernorm(x, 1, blk.ln2_g, blk.ln2_b), blk.mlp_w1), blk.mlp_b1));
  return add(x, add(matmul(h, blk.mlp_w2), blk.mlp_b2));
}

Tensor Backbone::encode_tokens(Tensor tokens, std::vector<AttnMode>* trace) const {
  for (int64_t i = 0; i < cfg_.depth; ++i) {
    const AttnMode mode = cfg_.block_is_global(i) ? AttnMode::global : AttnMode::window;
    if (trace) trace->push_back(mode);
    tokens = attention_block(tokens, i, mode);
  }
  tokens = layernorm(tokens, 1, ln_g_, ln_b_);
  const int64_t g = cfg_.grid();
  return reshape(transpose2d(tokens), {cfg_.embed_dim, g, g});
}

Tensor Backbone::forward(const Tensor& image, std::vector<AttnMode>* trace) const {
  return encode_tokens(embed_patches(image), trace);
}

}  // namespace geovit
