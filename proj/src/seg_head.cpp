#include "geovit/seg_head.hpp"

#include <cmath>
#include <stdexcept>

#include "geovit/ops.hpp"

namespace geovit {

namespace {
using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;
}  // namespace

Tensor upsample_block(const Tensor& x, const Tensor& skip, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3 || skip.ndim() != 3) {
    throw std::invalid_argument("upsample_block: feature maps must be CxHxW");
  }
  if (skip.dim(1) != 2 * x.dim(1) || skip.dim(2) != 2 * x.dim(2)) {
    throw std::invalid_argument("upsample_block: skip " + shape_str(skip.shape()) +
                                " must have twice the spatial extents of input " + shape_str(x.shape()));
  }
  Tensor merged = concat({bilinear_upsample2x(x), skip}, 0);
  return relu(conv2d(merged, w, b));
}

UnetHead::UnetHead(ParamStore& params, const std::string& prefix, const std::array<int64_t, 4>& in_channels,
                   int64_t n_classes, const std::array<int64_t, 4>& widths)
    : n_classes_(n_classes), in_channels_(in_channels), widths_(widths) {
  if (n_classes < 2 || n_classes >= kIgnoreIndex) {
    throw std::invalid_argument("UnetHead: n_classes must be in [2, 255)");
  }
  for (int64_t c : in_channels_) {
    if (c < 1) throw std::invalid_argument("UnetHead: pyramid channel widths must be positive");
  }
  for (int64_t c : widths_) {
    if (c < 1) throw std::invalid_argument("UnetHead: block widths must be positive");
  }
  int64_t carried = in_channels_[0];
  for (int i = 0; i < 3; ++i) {
    const int64_t in_c = carried + in_channels_[static_cast<size_t>(i) + 1];
    const std::string tag = prefix + "up" + std::to_string(i) + ".";
    up_w_[static_cast<size_t>(i)] = params.he_normal(tag + "w", {widths_[static_cast<size_t>(i)], in_c, 3, 3}, in_c * 9);
    up_b_[static_cast<size_t>(i)] = params.zeros(tag + "b", {widths_[static_cast<size_t>(i)]});
    carried = widths_[static_cast<size_t>(i)];
  }
  final_w_ = params.he_normal(prefix + "final.w", {widths_[3], carried, 3, 3}, carried * 9);
  final_b_ = params.zeros(prefix + "final.b", {widths_[3]});
  cls_w_ = params.he_normal(prefix + "cls.w", {n_classes_, widths_[3], 1, 1}, widths_[3]);
  cls_b_ = params.zeros(prefix + "cls.b", {n_classes_});
}

Tensor UnetHead::forward(const Tensor& p16, const Tensor& p8, const Tensor& p4, const Tensor& p2) const {
  Tensor x = upsample_block(p16, p8, up_w_[0], up_b_[0]);
  x = upsample_block(x, p4, up_w_[1], up_b_[1]);
  x = upsample_block(x, p2, up_w_[2], up_b_[2]);
  x = relu(conv2d(bilinear_upsample2x(x), final_w_, final_b_));
  return conv2d(x, cls_w_, cls_b_);
}

std::pair<ClassMap, Tensor> predict(const Tensor& logits) {
  if (logits.ndim() != 3 || logits.dim(0) < 2) {
    throw std::invalid_argument("predict: logits must be NxHxW with N >= 2, got " + shape_str(logits.shape()));
  }
  if (logits.dim(0) >= kIgnoreIndex) {
    throw std::invalid_argument("predict: class count must stay below the ignore label 255");
  }
  NoTape guard;
  Tensor probs = softmax(logits, 0);
  const int64_t n = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  ClassMap labels(logits.dim(1), logits.dim(2));
  for (int64_t p = 0; p < hw; ++p) {
    int best = 0;
    double best_p = probs.data()[p];
    for (int64_t c = 1; c < n; ++c) {
      const double v = probs.data()[c * hw + p];
      if (v > best_p) {
        best_p = v;
        best = static_cast<int>(c);
      }
    }
    labels.v[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
  }
  return {std::move(labels), std::move(probs)};
}

Tensor seg_loss(const Tensor& logits, const ClassMap& truth, int ignore_index) {
  if (logits.ndim() != 3 || logits.dim(0) < 2) {
    throw std::invalid_argument("seg_loss: logits must be NxHxW with N >= 2, got " + shape_str(logits.shape()));
  }
  const int64_t n = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
  if (truth.h != h || truth.w != w) {
    throw std::invalid_argument("seg_loss: truth " + std::to_string(truth.h) + "x" + std::to_string(truth.w) +
                                " does not match logits " + shape_str(logits.shape()));
  }
  std::vector<std::pair<int64_t, int64_t>> valid;  // (pixel, target)
  valid.reserve(static_cast<size_t>(hw));
  for (int64_t p = 0; p < hw; ++p) {
    const int label = truth.v[static_cast<size_t>(p)];
    if (label == ignore_index) continue;
    if (label >= n) {
      throw std::invalid_argument("seg_loss: label " + std::to_string(label) + " outside [0, " + std::to_string(n) +
                                  ") at pixel " + std::to_string(p));
    }
    valid.emplace_back(p, label);
  }
  if (valid.empty()) throw std::invalid_argument("seg_loss: every pixel carries the ignore label");

  const double inv_count = 1.0 / static_cast<double>(valid.size());
  const double* l = logits.data();
  double total = 0.0;
  for (const auto& [p, t] : valid) {
    double m = l[p];
    for (int64_t c = 1; c < n; ++c) m = std::max(m, l[c * hw + p]);
    double s = 0.0;
    for (int64_t c = 0; c < n; ++c) s += std::exp(l[c * hw + p] - m);
    total += m + std::log(s) - l[t * hw + p];
  }
  Tensor y = make_tensor(Shape{}, {total * inv_count}, logits.requires_grad());
  detail::check_finite(y, "seg_loss");
  if (Tape* tp = Tape::active(); tp && logits.requires_grad()) {
    Impl xi = logits.impl(), yi = y.impl();
    tp->record(
        [xi, yi, valid, n, hw, inv_count]() {
          if (yi->grad.empty()) return;
          const double gy = yi->grad[0] * inv_count;
          detail::ensure_grad(*xi);
          const double* l = xi->data.data();
          for (const auto& [p, t] : valid) {
            double m = l[p];
            for (int64_t c = 1; c < n; ++c) m = std::max(m, l[c * hw + p]);
            double s = 0.0;
            for (int64_t c = 0; c < n; ++c) s += std::exp(l[c * hw + p] - m);
            for (int64_t c = 0; c < n; ++c) {
              const double soft = std::exp(l[c * hw + p] - m) / s;
              xi->grad[static_cast<size_t>(c * hw + p)] += gy * (soft - (c == t ? 1.0 : 0.0));
            }
          }
        },
        y);
  }
  return y;
}

}  // namespace geovit
