#include "geovit/sfpn.hpp"

#include <algorithm>
#include <stdexcept>

#include "geovit/ops.hpp"

namespace geovit {

namespace {

bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int ilog2(int64_t v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

}  // namespace

SfpnLevel::SfpnLevel(ParamStore& params, const std::string& prefix, int64_t in_channels, int64_t out_channels,
                     int64_t from_scale, int64_t to_scale)
    : in_channels_(in_channels), out_channels_(out_channels), from_scale_(from_scale), to_scale_(to_scale) {
  if (!is_pow2(from_scale) || !is_pow2(to_scale)) {
    throw std::invalid_argument("SfpnLevel: scales must be powers of two, got " + std::to_string(from_scale) +
                                " -> " + std::to_string(to_scale));
  }
  if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument("SfpnLevel: channel counts must be positive");
  num_resizes_ = ilog2(from_scale) - ilog2(to_scale);

  int64_t c = in_channels;
  const int steps = num_resizes_ < 0 ? -num_resizes_ : num_resizes_;
  for (int i = 0; i < steps; ++i) {
    Resize r;
    if (num_resizes_ > 0) {
      if (i > 0) {
        r.ln_g = params.ones(prefix + "up" + std::to_string(i) + ".ln.g", {c});
        r.ln_b = params.zeros(prefix + "up" + std::to_string(i) + ".ln.b", {c});
      }
      const int64_t next = std::max(c / 2, out_channels);
      r.w = params.he_normal(prefix + "up" + std::to_string(i) + ".w", {c, next, 2, 2}, c * 4);
      r.b = params.zeros(prefix + "up" + std::to_string(i) + ".b", {next});
      c = next;
    }
    resizes_.push_back(std::move(r));
  }
  conv1_w_ = params.he_normal(prefix + "conv1.w", {out_channels, c, 1, 1}, c);
  conv1_b_ = params.zeros(prefix + "conv1.b", {out_channels});
  ln1_g_ = params.ones(prefix + "ln1.g", {out_channels});
  ln1_b_ = params.zeros(prefix + "ln1.b", {out_channels});
  conv3_w_ = params.he_normal(prefix + "conv3.w", {out_channels, out_channels, 3, 3}, out_channels * 9);
  conv3_b_ = params.zeros(prefix + "conv3.b", {out_channels});
  ln3_g_ = params.ones(prefix + "ln3.g", {out_channels});
  ln3_b_ = params.zeros(prefix + "ln3.b", {out_channels});
}

Tensor SfpnLevel::forward(const Tensor& f, SfpnLevelTrace* trace) const {
  if (f.ndim() != 3 || f.dim(0) != in_channels_) {
    throw std::invalid_argument("SfpnLevel: expected " + std::to_string(in_channels_) + " input channels, got " +
                                shape_str(f.shape()));
  }
  Tensor x = f;
  for (size_t i = 0; i < resizes_.size(); ++i) {
    const Resize& r = resizes_[i];
    if (num_resizes_ > 0) {
      if (r.ln_g.defined()) {
        x = gelu(layernorm(x, 0, r.ln_g, r.ln_b));
        if (trace) ++trace->pre_activations;
      }
      x = deconv2d(x, r.w, r.b);
      if (trace) ++trace->deconvs;
    } else {
      x = maxpool2d(x);
      if (trace) ++trace->maxpools;
    }
  }
  x = layernorm(conv2d(x, conv1_w_, conv1_b_), 0, ln1_g_, ln1_b_);
  x = layernorm(conv2d(x, conv3_w_, conv3_b_), 0, ln3_g_, ln3_b_);
  return x;
}

const std::vector<int64_t>& Sfpn::scales() {
  static const std::vector<int64_t> kScales{16, 8, 4, 2};
  return kScales;
}

Sfpn::Sfpn(ParamStore& params, const std::string& prefix, int64_t in_channels, int64_t out_channels)
    : out_channels_(out_channels) {
  for (int64_t s : scales()) {
    levels_.emplace_back(params, prefix + "s" + std::to_string(s) + ".", in_channels, out_channels, 16, s);
  }
}

std::vector<Tensor> Sfpn::build(const Tensor& f, std::vector<SfpnLevelTrace>* traces) const {
  std::vector<Tensor> out;
  for (const SfpnLevel& lvl : levels_) {
    SfpnLevelTrace t;
    out.push_back(lvl.forward(f, traces ? &t : nullptr));
    if (traces) traces->push_back(t);
  }
  return out;
}

const SfpnLevel& Sfpn::level(int64_t scale) const {
  for (const SfpnLevel& lvl : levels_) {
    if (lvl.to_scale() == scale) return lvl;
  }
  throw std::invalid_argument("Sfpn: no level at scale " + std::to_string(scale));
}

}  // namespace geovit
