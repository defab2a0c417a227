#pragma once

#include <string>
#include <vector>

#include "geovit/checkpoint.hpp"
#include "geovit/config.hpp"
#include "geovit/dataset.hpp"
#include "geovit/metrics.hpp"
#include "geovit/params.hpp"

namespace geovit {

/// Total optimizer steps for a run: epochs times ceil(n_train / batch),
/// where batch = per_device_batch * devices. Throws when any count is < 1.
int64_t iterations_for(int64_t n_train, int64_t epochs, int64_t per_device_batch, int64_t devices);

/// Per-parameter adaptive steps with decoupled weight decay on a cosine
/// schedule: v tracks the squared-gradient average (beta 0.999, bias
/// corrected), theta -= lr_t * (g / (sqrt(v_hat) + 1e-8) + wd * theta), and
/// lr_t = lr * 0.5 * (1 + cos(pi * t / total)). Every step re-rounds the
/// store through f32 so checkpoints capture the exact live state. Stepping
/// more than total times is an error.
class Optimizer {
 public:
  Optimizer(double lr, double weight_decay, int64_t total_steps);

  /// One update from the gradients currently in the store; returns the
  /// learning rate used. Parameters without gradients only decay.
  double step(ParamStore& params);

  int64_t steps_done() const { return t_; }

 private:
  double lr_, wd_;
  int64_t total_, t_ = 0;
  std::vector<std::vector<double>> v_;  // squared-gradient state, store order
};

struct TrainResult {
  RunConfig config;
  std::vector<double> epoch_train_loss;  // mean per-tile loss, one per epoch
  SemanticMetrics best_val;
  double best_val_loss = 0.0;
  int64_t best_epoch = -1;
  std::string metrics_csv;       // epoch,split,pixel_accuracy,precision,recall,f1,miou,loss
  std::string checkpoint_path;   // out_dir/best.gvck, empty when out_dir is
};

/// Trains on the manifest's train split, validating every epoch and keeping
/// the checkpoint with the best validation f1. Bit-identical for a given
/// config: shuffles draw from (seed, epoch) and jitter from (seed, epoch,
/// tile) sub-streams.
TrainResult train(const RunConfig& cfg);
/// Same, on tiles already in memory (cfg.manifest is ignored).
TrainResult train(const RunConfig& cfg, const std::vector<TileRecord>& tiles);

struct EvalResult {
  SemanticMetrics metrics;
  double mean_loss = 0.0;
  int64_t n_tiles = 0;
};

/// Restores a checkpoint and scores one split without updating anything.
/// manifest_path may be empty to use the one recorded in the checkpoint.
EvalResult evaluate(const std::string& checkpoint_path, const std::string& manifest_path, const std::string& split);
EvalResult evaluate(const Checkpoint& ck, const std::vector<TileRecord>& tiles, uint8_t split);

struct AblateRow {
  int index = 0;  // enumeration order: baseline, then strategy-major sweep
  std::string feature, placement, granularity, strategy;
  SemanticMetrics mean;
  double f1_stderr = 0.0;
  bool failed = false;
  std::string error;  // first trial failure, empty otherwise
};

struct AblateResult {
  std::vector<AblateRow> rows;  // sorted by f1 descending, failures last
  std::string csv;
};

/// Trains and validates the no-fusion baseline plus all 28 valid fusion
/// configurations, trials times each (trial seeds derive from (config, trial)
/// so workers and serial runs agree byte for byte). A failing configuration
/// becomes a nan row instead of aborting the sweep. jobs > 1 distributes
/// configurations across threads.
AblateResult ablate(const RunConfig& base, int trials, int jobs);
AblateResult ablate(const RunConfig& base, int trials, int jobs, const std::vector<TileRecord>& tiles);

}  // namespace geovit
