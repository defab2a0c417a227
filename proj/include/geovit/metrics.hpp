#pragma once

#include <cstdint>
#include <vector>

#include "geovit/class_map.hpp"

namespace geovit {

/// Pixel counts with rows indexed by truth and columns by prediction.
/// Accumulation is additive, so tiles may be counted in any order or merged
/// across workers.
struct ConfusionMatrix {
  int64_t n = 0;
  std::vector<uint64_t> counts;

  explicit ConfusionMatrix(int64_t n_classes);

  uint64_t& at(int64_t truth, int64_t pred) { return counts[static_cast<size_t>(truth * n + pred)]; }
  uint64_t at(int64_t truth, int64_t pred) const { return counts[static_cast<size_t>(truth * n + pred)]; }
  uint64_t total() const;
  void add(const ConfusionMatrix& other);
};

/// Counts every non-ignored pixel of one tile into cm. Throws when a
/// non-ignored label (on either side) falls outside [0, cm.n).
void accumulate_confusion(ConfusionMatrix& cm, const ClassMap& pred, const ClassMap& truth,
                          int ignore_index = kIgnoreIndex);

struct SemanticMetrics {
  double pixel_accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double miou = 0.0;
};

/// pixel_accuracy = trace/sum. Precision, recall, and IoU are macro averages
/// over foreground classes (class 0 is background and never averaged); a
/// foreground class absent from both truth and prediction is skipped rather
/// than scored. Per-class ratios with a zero denominator score 0. f1 is the
/// harmonic mean of the macro precision and recall. Throws on an all-zero
/// matrix.
SemanticMetrics semantic_metrics(const ConfusionMatrix& cm);

}  // namespace geovit
