// Command-line front end: synthetic geolocated tile generation, training,
// evaluation, the fusion ablation sweep, gradient spot checks, and polygon
// shape statistics. Exit codes: 0 success, 1 bad input (including unknown
// flags), 2 runtime failure (missing files, corrupt data, divergence).
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geovit/config.hpp"
#include "geovit/dataset.hpp"
#include "geovit/geometry.hpp"
#include "geovit/gradcheck.hpp"
#include "geovit/trainer.hpp"

namespace {

using namespace geovit;
namespace fs = std::filesystem;

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

std::string metrics_line(const SemanticMetrics& m) {
  std::ostringstream out;
  out << "pixel_accuracy=" << fmt(m.pixel_accuracy) << " precision=" << fmt(m.precision)
      << " recall=" << fmt(m.recall) << " f1=" << fmt(m.f1) << " miou=" << fmt(m.miou);
  return out.str();
}

int run_gen_data(uint64_t seed, const std::string& out_dir, int tile_size, int per_split, int n_sites,
                 bool ambiguity, const std::string& shapes_name) {
  ShapeFamily fam = shapes_name == "polygons" ? ShapeFamily::polygons : ShapeFamily::blobs;
  std::vector<TileRecord> tiles =
      generate_dataset(polar_ring_sites(n_sites, per_split, fam), seed, ambiguity, tile_size);

  const std::string manifest = write_corpus(tiles, out_dir);
  std::array<int64_t, 3> counts{0, 0, 0};
  for (const TileRecord& t : tiles) ++counts[t.split];

  std::cout << "wrote " << tiles.size() << " tiles (" << counts[0] << " train, " << counts[1] << " val, "
            << counts[2] << " test) under " << out_dir << "\n"
            << "manifest: " << manifest << "\n";
  return 0;
}

int run_train(const std::string& config_path, bool seed_set, uint64_t seed, const std::string& out_override) {
  RunConfig cfg = parse_run_config_file(config_path);
  if (seed_set) cfg.seed = seed;
  if (!out_override.empty()) cfg.out_dir = out_override;
  cfg.validate();

  TrainResult r = train(cfg);
  std::cout << "trained " << r.epoch_train_loss.size() << " epochs; final train loss "
            << fmt(r.epoch_train_loss.back()) << "\n"
            << "best epoch " << r.best_epoch << " (val): " << metrics_line(r.best_val)
            << " loss=" << fmt(r.best_val_loss) << "\n";
  if (!r.checkpoint_path.empty()) std::cout << "checkpoint: " << r.checkpoint_path << "\n";
  if (!cfg.out_dir.empty()) std::cout << "metrics: " << (fs::path(cfg.out_dir) / "metrics.csv").string() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split) {
  EvalResult r = evaluate(checkpoint, manifest, split);
  std::cout << "split " << split << ", " << r.n_tiles << " tiles\n"
            << metrics_line(r.metrics) << " loss=" << fmt(r.mean_loss) << "\n";
  return 0;
}

int run_ablate(const std::string& config_path, int trials, int jobs, const std::string& out_csv) {
  RunConfig base = parse_run_config_file(config_path);
  AblateResult r = ablate(base, trials, jobs);

  if (out_csv.empty()) {
    std::cout << r.csv;
    return 0;
  }
  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw std::runtime_error("ablate: cannot write '" + out_csv + "'");
  out << r.csv;

  int64_t failed = 0;
  for (const AblateRow& row : r.rows) failed += row.failed ? 1 : 0;
  const AblateRow& top = r.rows.front();
  std::cout << "wrote " << r.rows.size() << " rows to " << out_csv << "\n";
  if (!top.failed) {
    std::cout << "best: strategy=" << top.strategy << " placement=" << top.placement
              << " granularity=" << top.granularity << " f1=" << fmt(top.mean.f1) << " +/- "
              << fmt(top.f1_stderr) << "\n";
  }
  if (failed > 0) std::cout << failed << " configuration(s) failed; see the error column\n";
  return 0;
}

int run_grad_check(int n_seeds, double tol) {
  std::vector<KernelGradReport> worst = kernel_grad_suite(1);
  for (int seed = 2; seed <= n_seeds; ++seed) {
    std::vector<KernelGradReport> next = kernel_grad_suite(static_cast<uint64_t>(seed));
    for (size_t i = 0; i < worst.size(); ++i) worst[i].max_rel_err = std::max(worst[i].max_rel_err, next[i].max_rel_err);
  }

  bool ok = true;
  for (const KernelGradReport& r : worst) {
    const bool pass = r.max_rel_err < tol;
    ok = ok && pass;
    std::cout << std::left << std::setw(24) << r.kernel << std::scientific << std::setprecision(3)
              << r.max_rel_err << (pass ? "  pass" : "  FAIL") << std::defaultfloat << "\n";
  }
  if (!ok) {
    std::cout << "grad-check: FAILED (tolerance " << tol << ", " << n_seeds << " seed(s))\n";
    return 2;
  }
  std::cout << "grad-check: all kernels within " << tol << " over " << n_seeds << " seed(s)\n";
  return 0;
}

int run_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("stats: cannot open '" + path + "'");

  std::string line;
  int line_no = 0, index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<double> nums;
    double v;
    while (ss >> v) nums.push_back(v);
    if (!ss.eof()) {
      throw std::invalid_argument("stats: line " + std::to_string(line_no) + " is not a list of numbers");
    }
    if (nums.empty()) continue;
    if (nums.size() % 2 != 0) {
      throw std::invalid_argument("stats: line " + std::to_string(line_no) + " has an odd coordinate count");
    }

    Polygon poly;
    for (size_t i = 0; i < nums.size(); i += 2) poly.push_back({nums[i], nums[i + 1]});
    GeometryStats g;
    double comp = 0.0;
    try {
      g = geometry_stats(poly);
      comp = compactness(poly);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("stats: line " + std::to_string(line_no) + ": " + e.what());
    }
    std::cout << "polygon " << index++ << ": area=" << fmt(g.area) << " compactness=" << fmt(comp)
              << " major=" << fmt(g.length_major_axis) << " minor=" << fmt(g.width_minor_axis)
              << " ratio=" << fmt(g.length_width_ratio) << "\n";
  }
  if (index == 0) throw std::invalid_argument("stats: '" + path + "' holds no polygons");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geolocated segmentation: synthetic data, training, evaluation, and analysis"};
  app.require_subcommand(1);

  uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_tile_size = 64, gen_per_split = 8, gen_sites = 4;
  bool gen_ambiguity = false;
  std::string gen_shapes = "blobs";
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic geolocated tile corpus");
  gen->add_option("--seed", gen_seed, "corpus seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--tile-size", gen_tile_size, "tile edge in pixels")->check(CLI::Range(8, 4096))
      ->capture_default_str();
  gen->add_option("--tiles-per-split", gen_per_split, "tiles per site in each of train/val/test")
      ->check(CLI::Range(1, 1000000))->capture_default_str();
  gen->add_option("--sites", gen_sites, "number of collection sites")->check(CLI::Range(1, 360))
      ->capture_default_str();
  gen->add_flag("--ambiguity", gen_ambiguity, "classes 1 and 2 look identical; only location separates them");
  gen->add_option("--shapes", gen_shapes, "foreground shape family")
      ->check(CLI::IsMember({"blobs", "polygons"}))->capture_default_str();

  std::string train_config, train_out;
  uint64_t train_seed = 0;
  CLI::App* tr = app.add_subcommand("train", "train from a run configuration file");
  tr->add_option("--config", train_config, "run configuration file")->required();
  CLI::Option* train_seed_opt = tr->add_option("--seed", train_seed, "override the configured seed");
  tr->add_option("--out", train_out, "override the configured output directory");

  std::string eval_ckpt, eval_manifest, eval_split = "val";
  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on one split");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", eval_manifest, "tile manifest (defaults to the one recorded in the checkpoint)");
  ev->add_option("--split", eval_split, "train, val, or test")->capture_default_str();

  std::string abl_config, abl_out;
  int abl_trials = 1, abl_jobs = 1;
  CLI::App* ab = app.add_subcommand("ablate", "sweep the baseline plus every fusion configuration");
  ab->add_option("--config", abl_config, "base run configuration file")->required();
  ab->add_option("--trials", abl_trials, "seeds per configuration")->check(CLI::Range(1, 1000))
      ->capture_default_str();
  ab->add_option("--jobs", abl_jobs, "worker threads")->check(CLI::Range(1, 256))->capture_default_str();
  ab->add_option("--out", abl_out, "CSV output path (stdout when omitted)");

  int gc_seeds = 5;
  double gc_tol = 1e-4;
  CLI::App* gc = app.add_subcommand("grad-check", "compare every kernel's gradients against finite differences");
  gc->add_option("--seeds", gc_seeds, "number of random draws per kernel")->check(CLI::Range(1, 64))
      ->capture_default_str();
  gc->add_option("--tol", gc_tol, "worst allowed relative error")->capture_default_str();

  std::string stats_file;
  CLI::App* st = app.add_subcommand("stats", "area, compactness, and axis statistics for polygons");
  st->add_option("file", stats_file, "one polygon per line: x1 y1 x2 y2 ...")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (gen->parsed())
      return run_gen_data(gen_seed, gen_out, gen_tile_size, gen_per_split, gen_sites, gen_ambiguity, gen_shapes);
    if (tr->parsed()) return run_train(train_config, train_seed_opt->count() > 0, train_seed, train_out);
    if (ev->parsed()) return run_eval(eval_ckpt, eval_manifest, eval_split);
    if (ab->parsed()) return run_ablate(abl_config, abl_trials, abl_jobs, abl_out);
    if (gc->parsed()) return run_grad_check(gc_seeds, gc_tol);
    if (st->parsed()) return run_stats(stats_file);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
