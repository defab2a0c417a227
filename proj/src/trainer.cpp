#include "geovit/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "geovit/model.hpp"
#include "geovit/ops.hpp"
#include "geovit/rng.hpp"
#include "geovit/seg_head.hpp"

namespace geovit {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

void check_tile_fits(const TileRecord& t, const RunConfig& cfg, const char* who) {
  if (t.c != 3) {
    throw std::invalid_argument(std::string(who) + ": tile has " + std::to_string(t.c) + " channels, expected 3");
  }
  if (t.h != cfg.img_size || t.w != cfg.img_size) {
    throw std::invalid_argument(std::string(who) + ": tile is " + std::to_string(t.h) + "x" + std::to_string(t.w) +
                                " but the model expects " + std::to_string(cfg.img_size));
  }
}

std::string metrics_row(const SemanticMetrics& m) {
  return fmt(m.pixel_accuracy) + ',' + fmt(m.precision) + ',' + fmt(m.recall) + ',' + fmt(m.f1) + ',' + fmt(m.miou);
}

}  // namespace

int64_t iterations_for(int64_t n_train, int64_t epochs, int64_t per_device_batch, int64_t devices) {
  if (n_train < 1) throw std::invalid_argument("iterations_for: n_train must be >= 1");
  if (epochs < 1) throw std::invalid_argument("iterations_for: epochs must be >= 1");
  if (per_device_batch < 1) throw std::invalid_argument("iterations_for: per_device_batch must be >= 1");
  if (devices < 1) throw std::invalid_argument("iterations_for: devices must be >= 1");
  const int64_t batch = per_device_batch * devices;
  return epochs * ((n_train + batch - 1) / batch);
}

Optimizer::Optimizer(double lr, double weight_decay, int64_t total_steps) : lr_(lr), wd_(weight_decay), total_(total_steps) {
  if (!(lr > 0.0)) throw std::invalid_argument("Optimizer: lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("Optimizer: weight_decay must be non-negative");
  if (total_steps < 1) throw std::invalid_argument("Optimizer: total_steps must be >= 1");
}

double Optimizer::step(ParamStore& params) {
  if (t_ >= total_) throw std::invalid_argument("Optimizer: stepped past its declared schedule");
  const auto& items = params.items();
  if (v_.empty()) {
    v_.reserve(items.size());
    for (const auto& [name, t] : items) v_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  }
  if (v_.size() != items.size()) throw std::invalid_argument("Optimizer: parameter census changed between steps");

  const double lr_t = lr_ * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(t_) / static_cast<double>(total_)));
  ++t_;
  const double bias = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor t = items[i].second;
    if (static_cast<int64_t>(v_[i].size()) != t.numel()) {
      throw std::invalid_argument("Optimizer: parameter '" + items[i].first + "' changed size between steps");
    }
    const std::vector<double>* grad = t.has_grad() ? &t.grad() : nullptr;
    double* x = t.data();
    for (size_t j = 0; j < v_[i].size(); ++j) {
      const double g = grad ? (*grad)[j] : 0.0;
      v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * g * g;
      const double vhat = v_[i][j] / bias;
      x[j] -= lr_t * (g / (std::sqrt(vhat) + kEps) + wd_ * x[j]);
    }
  }
  params.quantize_f32();
  return lr_t;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.manifest.empty()) throw std::invalid_argument("train: config names no manifest");
  return train(cfg, load_manifest_tiles(cfg.manifest));
}

TrainResult train(const RunConfig& cfg, const std::vector<TileRecord>& tiles) {
  cfg.validate();
  std::vector<const TileRecord*> tr, va;
  for (const TileRecord& t : tiles) {
    check_tile_fits(t, cfg, "train");
    if (t.split == 0) tr.push_back(&t);
    if (t.split == 1) va.push_back(&t);
  }
  if (tr.empty()) throw std::invalid_argument("train: the train split is empty");
  if (va.empty()) throw std::invalid_argument("train: the val split is empty");

  ParamStore store(cfg.seed);
  GeoVitModel model(store, cfg.model_config());

  const int64_t n = static_cast<int64_t>(tr.size());
  const int64_t batch = cfg.per_device_batch * cfg.devices;
  const int64_t total_steps = iterations_for(n, cfg.epochs, cfg.per_device_batch, cfg.devices);
  Optimizer opt(cfg.lr, cfg.weight_decay, total_steps);

  TrainResult res;
  res.config = cfg;
  std::ostringstream csv;
  csv << "epoch,split,pixel_accuracy,precision,recall,f1,miou,loss\n";
  double best_f1 = -1.0;

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  std::vector<size_t> order(static_cast<size_t>(n));
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    double last_lr = 0.0;
    int64_t step_in_epoch = 0;
    for (int64_t start = 0; start < n; start += batch, ++step_in_epoch) {
      const int64_t count = std::min(batch, n - start);
      try {
        Tape tape;
        Tensor acc;
        for (int64_t k = 0; k < count; ++k) {
          const size_t idx = order[static_cast<size_t>(start + k)];
          const TileRecord* tile = tr[idx];
          TileRecord jittered;
          if (cfg.scale_jitter) {
            jittered = scale_jitter(*tile, cfg.jitter_min, cfg.jitter_max,
                                    mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)), idx));
            tile = &jittered;
          }
          const Tensor li = seg_loss(model.logits(raster_tensor(*tile), tile->coord), tile->mask);
          acc = k == 0 ? li : add(acc, li);
        }
        const Tensor loss = scale(acc, 1.0 / static_cast<double>(count));
        tape.backward(loss);
        const double lv = loss.data()[0];
        if (!std::isfinite(lv)) throw std::runtime_error("loss is not finite");
        epoch_loss += lv * static_cast<double>(count);
        last_lr = opt.step(store);
        if (model.loc_encoder()) model.loc_encoder()->bump_version();
        store.zero_grads();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step_in_epoch) + " (last lr " + fmt(last_lr) + "): " + e.what());
      }
    }
    res.epoch_train_loss.push_back(epoch_loss / static_cast<double>(n));

    // validation pass
    ConfusionMatrix cm(cfg.n_classes);
    double vloss = 0.0;
    {
      NoTape guard;
      for (const TileRecord* tile : va) {
        const Tensor logits = model.logits(raster_tensor(*tile), tile->coord);
        vloss += seg_loss(logits, tile->mask).data()[0];
        accumulate_confusion(cm, predict(logits).first, tile->mask);
      }
    }
    vloss /= static_cast<double>(va.size());
    const SemanticMetrics m = semantic_metrics(cm);
    csv << epoch << ",val," << metrics_row(m) << ',' << fmt(vloss) << '\n';

    if (m.f1 > best_f1) {
      best_f1 = m.f1;
      res.best_val = m;
      res.best_val_loss = vloss;
      res.best_epoch = epoch;
      if (!cfg.out_dir.empty()) {
        res.checkpoint_path = (std::filesystem::path(cfg.out_dir) / "best.gvck").string();
        // the embedded config omits out_dir: where a run wrote its artifacts
        // is not part of the recipe, and twin runs should agree byte for byte
        RunConfig embedded = cfg;
        embedded.out_dir.clear();
        save_checkpoint(res.checkpoint_path, embedded, store);
      }
    }
  }

  res.metrics_csv = csv.str();
  if (!cfg.out_dir.empty()) {
    const std::string mpath = (std::filesystem::path(cfg.out_dir) / "metrics.csv").string();
    std::ofstream out(mpath, std::ios::trunc);
    if (!out) throw std::runtime_error("train: cannot write " + mpath);
    out << res.metrics_csv;
  }
  return res;
}

EvalResult evaluate(const Checkpoint& ck, const std::vector<TileRecord>& tiles, uint8_t split) {
  std::vector<const TileRecord*> subset;
  for (const TileRecord& t : tiles) {
    if (t.split == split) {
      check_tile_fits(t, ck.config, "evaluate");
      subset.push_back(&t);
    }
  }
  if (subset.empty()) {
    throw std::invalid_argument(std::string("evaluate: the ") + split_name(split) + " split is empty");
  }

  ParamStore store(ck.config.seed);
  GeoVitModel model(store, ck.config.model_config());
  apply_checkpoint(ck, store);

  EvalResult res;
  res.n_tiles = static_cast<int64_t>(subset.size());
  ConfusionMatrix cm(ck.config.n_classes);
  {
    NoTape guard;
    for (const TileRecord* tile : subset) {
      const Tensor logits = model.logits(raster_tensor(*tile), tile->coord);
      res.mean_loss += seg_loss(logits, tile->mask).data()[0];
      accumulate_confusion(cm, predict(logits).first, tile->mask);
    }
  }
  res.mean_loss /= static_cast<double>(subset.size());
  res.metrics = semantic_metrics(cm);
  return res;
}

EvalResult evaluate(const std::string& checkpoint_path, const std::string& manifest_path, const std::string& split) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const std::string mpath = manifest_path.empty() ? ck.config.manifest : manifest_path;
  if (mpath.empty()) {
    throw std::invalid_argument("evaluate: no manifest given and the checkpoint records none");
  }
  return evaluate(ck, load_manifest_tiles(mpath), parse_split(split));
}

namespace {

std::vector<RunConfig> ablation_grid(const RunConfig& base) {
  std::vector<RunConfig> runs;
  RunConfig b = base;
  b.out_dir.clear();
  b.manifest.clear();
  b.fusion = "none";
  runs.push_back(b);
  for (FusionStrategy s : {FusionStrategy::add, FusionStrategy::norm_add, FusionStrategy::concat,
                           FusionStrategy::norm_concat, FusionStrategy::concat_norm, FusionStrategy::proj_add,
                           FusionStrategy::proj_concat, FusionStrategy::cross_attention}) {
    for (Placement p : {Placement::pre, Placement::post}) {
      if (p == Placement::pre && (s == FusionStrategy::add || s == FusionStrategy::norm_add)) continue;
      for (Granularity g : {Granularity::L10, Granularity::L40}) {
        RunConfig c = b;
        c.fusion = to_string(s);
        c.placement = to_string(p);
        c.granularity = to_string(g);
        runs.push_back(c);
      }
    }
  }
  return runs;
}

}  // namespace

AblateResult ablate(const RunConfig& base, int trials, int jobs) {
  base.validate();
  if (base.manifest.empty()) throw std::invalid_argument("ablate: config names no manifest");
  return ablate(base, trials, jobs, load_manifest_tiles(base.manifest));
}

AblateResult ablate(const RunConfig& base, int trials, int jobs, const std::vector<TileRecord>& tiles) {
  base.validate();
  if (trials < 1) throw std::invalid_argument("ablate: trials must be >= 1");
  if (jobs < 1) throw std::invalid_argument("ablate: jobs must be >= 1");

  const std::vector<RunConfig> runs = ablation_grid(base);
  std::vector<AblateRow> rows(runs.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= runs.size()) return;
      AblateRow& row = rows[k];
      row.index = static_cast<int>(k);
      row.feature = base.feature;
      if (runs[k].fusion == "none") {
        row.placement = row.granularity = row.strategy = "none";
      } else {
        row.placement = runs[k].placement;
        row.granularity = runs[k].granularity;
        row.strategy = runs[k].fusion;
      }
      std::vector<SemanticMetrics> per_trial;
      for (int t = 0; t < trials; ++t) {
        RunConfig c = runs[k];
        c.seed = base.seed ^ mix_seed(static_cast<uint64_t>(k), static_cast<uint64_t>(t));
        try {
          per_trial.push_back(train(c, tiles).best_val);
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
          break;
        }
      }
      if (row.failed) {
        const double nan = std::nan("");
        row.mean = {nan, nan, nan, nan, nan};
        row.f1_stderr = nan;
        continue;
      }
      for (const SemanticMetrics& m : per_trial) {
        row.mean.pixel_accuracy += m.pixel_accuracy / trials;
        row.mean.precision += m.precision / trials;
        row.mean.recall += m.recall / trials;
        row.mean.f1 += m.f1 / trials;
        row.mean.miou += m.miou / trials;
      }
      if (trials > 1) {
        double ss = 0.0;
        for (const SemanticMetrics& m : per_trial) ss += (m.f1 - row.mean.f1) * (m.f1 - row.mean.f1);
        row.f1_stderr = std::sqrt(ss / (trials - 1)) / std::sqrt(static_cast<double>(trials));
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(jobs, static_cast<int>(runs.size()));
    pool.reserve(static_cast<size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  std::sort(rows.begin(), rows.end(), [](const AblateRow& a, const AblateRow& b) {
    if (a.failed != b.failed) return b.failed;
    if (!a.failed && a.mean.f1 != b.mean.f1) return a.mean.f1 > b.mean.f1;
    return a.index < b.index;
  });

  AblateResult res;
  std::ostringstream csv;
  csv << "feature,placement,granularity,strategy,pixel_accuracy,precision,recall,f1,miou,f1_stderr\n";
  for (const AblateRow& r : rows) {
    csv << r.feature << ',' << r.placement << ',' << r.granularity << ',' << r.strategy << ',' << metrics_row(r.mean)
        << ',' << fmt(r.f1_stderr) << '\n';
  }
  res.rows = std::move(rows);
  res.csv = csv.str();
  return res;
}

}  // namespace geovit
