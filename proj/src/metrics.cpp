#include "geovit/metrics.hpp"

#include <stdexcept>
#include <string>

namespace geovit {

ConfusionMatrix::ConfusionMatrix(int64_t n_classes) : n(n_classes) {
  if (n_classes < 2) throw std::invalid_argument("ConfusionMatrix: need at least 2 classes");
  counts.assign(static_cast<size_t>(n_classes * n_classes), 0);
}

uint64_t ConfusionMatrix::total() const {
  uint64_t s = 0;
  for (uint64_t c : counts) s += c;
  return s;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.n != n) {
    throw std::invalid_argument("ConfusionMatrix: cannot merge " + std::to_string(other.n) + "-class counts into " +
                                std::to_string(n) + "-class matrix");
  }
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate_confusion(ConfusionMatrix& cm, const ClassMap& pred, const ClassMap& truth, int ignore_index) {
  if (pred.h != truth.h || pred.w != truth.w) {
    throw std::invalid_argument("accumulate_confusion: prediction " + std::to_string(pred.h) + "x" +
                                std::to_string(pred.w) + " does not match truth " + std::to_string(truth.h) + "x" +
                                std::to_string(truth.w));
  }
  for (size_t i = 0; i < truth.v.size(); ++i) {
    const int t = truth.v[i];
    if (t == ignore_index) continue;
    const int p = pred.v[i];
    if (t >= cm.n || p >= cm.n) {
      throw std::invalid_argument("accumulate_confusion: label " + std::to_string(t >= cm.n ? t : p) +
                                  " outside [0, " + std::to_string(cm.n) + ")");
    }
    ++cm.at(t, p);
  }
}

SemanticMetrics semantic_metrics(const ConfusionMatrix& cm) {
  const uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("semantic_metrics: empty confusion matrix");

  uint64_t trace = 0;
  for (int64_t c = 0; c < cm.n; ++c) trace += cm.at(c, c);

  double sum_p = 0.0, sum_r = 0.0, sum_iou = 0.0;
  int64_t scored = 0;
  for (int64_t c = 1; c < cm.n; ++c) {
    uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int64_t o = 0; o < cm.n; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    if (tp + fp + fn == 0) continue;  // class never appeared on either side
    ++scored;
    sum_p += tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    sum_r += tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    sum_iou += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }

  SemanticMetrics m;
  m.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  if (scored > 0) {
    m.precision = sum_p / static_cast<double>(scored);
    m.recall = sum_r / static_cast<double>(scored);
    m.miou = sum_iou / static_cast<double>(scored);
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  return m;
}

}  // namespace geovit
