// Python module exposing the core operations: shape descriptors, the
// spherical-harmonic basis, segmentation metrics, corpus generation, and the
// train / evaluate / ablate / predict loop. Long-running calls release the
// GIL; std::invalid_argument surfaces as ValueError and std::runtime_error
// (including the file-format corruption classes) as RuntimeError.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geovit/checkpoint.hpp"
#include "geovit/dataset.hpp"
#include "geovit/geometry.hpp"
#include "geovit/gradcheck.hpp"
#include "geovit/loc_encoder.hpp"
#include "geovit/metrics.hpp"
#include "geovit/model.hpp"
#include "geovit/seg_head.hpp"
#include "geovit/tensor.hpp"
#include "geovit/trainer.hpp"

namespace py = pybind11;

namespace {

using namespace geovit;

Polygon to_polygon(const std::vector<std::pair<double, double>>& pts) {
  Polygon poly;
  poly.reserve(pts.size());
  for (const auto& [x, y] : pts) poly.push_back({x, y});
  return poly;
}

ClassMap to_class_map(const std::vector<std::vector<int>>& rows, const char* what) {
  if (rows.empty() || rows[0].empty()) throw std::invalid_argument(std::string(what) + " must be non-empty");
  ClassMap m(static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size()));
  for (size_t y = 0; y < rows.size(); ++y) {
    if (rows[y].size() != rows[0].size()) throw std::invalid_argument(std::string(what) + " rows differ in length");
    for (size_t x = 0; x < rows[y].size(); ++x) {
      const int v = rows[y][x];
      if (v < 0 || v > 255) throw std::invalid_argument(std::string(what) + " labels must lie in [0, 255]");
      m.at(static_cast<int64_t>(y), static_cast<int64_t>(x)) = static_cast<uint8_t>(v);
    }
  }
  return m;
}

py::dict metrics_dict(const SemanticMetrics& m) {
  py::dict d;
  d["pixel_accuracy"] = m.pixel_accuracy;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  d["miou"] = m.miou;
  return d;
}

}  // namespace

PYBIND11_MODULE(_geovit, m) {
  m.doc() = "Geolocated tile segmentation: C++ core operations";

  m.def("normalize_lon", &normalize_lon, py::arg("lon_deg"),
        "Wrap a longitude into [-180, 180) so aliased coordinates agree bit for bit.");

  m.def("sh_basis", &sh_basis, py::arg("lon_deg"), py::arg("lat_deg"), py::arg("lmax"),
        py::call_guard<py::gil_scoped_release>(),
        "Real orthonormal spherical harmonics through degree lmax: (lmax+1)^2 values, "
        "degree-major, order -l..l within each degree.");

  m.def(
      "compactness", [](const std::vector<std::pair<double, double>>& pts) { return compactness(to_polygon(pts)); },
      py::arg("points"),
      "perimeter^2 / (4 pi area) for a closed ring of (x, y) vertices: 1 for a circle, "
      "larger for anything less compact.");

  m.def(
      "shape_stats",
      [](const std::vector<std::pair<double, double>>& pts) {
        const Polygon poly = to_polygon(pts);
        const GeometryStats s = geometry_stats(poly);
        py::dict d;
        d["area"] = s.area;
        d["compactness"] = compactness(poly);
        d["length_major_axis"] = s.length_major_axis;
        d["width_minor_axis"] = s.width_minor_axis;
        d["length_width_ratio"] = s.length_width_ratio;
        return d;
      },
      py::arg("points"),
      "Area, compactness, and minimum-area bounding-rectangle axes for a closed ring "
      "of (x, y) vertices.");

  m.def("iterations_for", &iterations_for, py::arg("n_train"), py::arg("epochs"), py::arg("per_device_batch"),
        py::arg("devices") = 1,
        "Total optimizer steps: epochs * ceil(n_train / (per_device_batch * devices)).");

  m.def(
      "kernel_grad_suite",
      [](uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const KernelGradReport& r : kernel_grad_suite(seed)) out.emplace_back(r.kernel, r.max_rel_err);
        return out;
      },
      py::arg("seed") = 1, py::call_guard<py::gil_scoped_release>(),
      "Finite-difference check of every differentiable kernel; returns (kernel, max "
      "relative error) pairs. Deterministic per seed.");

  m.def(
      "semantic_metrics",
      [](const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& truth, int64_t n_classes,
         int ignore) {
        const ClassMap p = to_class_map(pred, "pred");
        const ClassMap t = to_class_map(truth, "truth");
        if (p.h != t.h || p.w != t.w) throw std::invalid_argument("pred and truth differ in shape");
        ConfusionMatrix cm(n_classes);
        accumulate_confusion(cm, p, t, ignore);
        return metrics_dict(semantic_metrics(cm));
      },
      py::arg("pred"), py::arg("truth"), py::arg("n_classes"), py::arg("ignore") = kIgnoreIndex,
      "Pixel accuracy plus macro precision / recall / f1 / mIoU over foreground classes "
      "for one pair of label grids (lists of rows).");

  m.def(
      "generate_corpus",
      [](const std::string& out_dir, uint64_t seed, int tile_size, int tiles_per_split, int sites, bool ambiguity,
         const std::string& shapes) {
        std::string manifest;
        std::array<int64_t, 3> counts{0, 0, 0};
        {
          py::gil_scoped_release release;
          ShapeFamily fam;
          if (shapes == "blobs") {
            fam = ShapeFamily::blobs;
          } else if (shapes == "polygons") {
            fam = ShapeFamily::polygons;
          } else {
            throw std::invalid_argument("shapes must be 'blobs' or 'polygons', got '" + shapes + "'");
          }
          const std::vector<TileRecord> tiles =
              generate_dataset(polar_ring_sites(sites, tiles_per_split, fam), seed, ambiguity, tile_size);
          manifest = write_corpus(tiles, out_dir);
          for (const TileRecord& t : tiles) ++counts[t.split];
        }
        py::dict d;
        d["manifest"] = manifest;
        d["train"] = counts[0];
        d["val"] = counts[1];
        d["test"] = counts[2];
        return d;
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("tile_size") = 64, py::arg("tiles_per_split") = 4,
      py::arg("sites") = 2, py::arg("ambiguity") = false, py::arg("shapes") = "blobs",
      "Generate a deterministic geolocated corpus under out_dir (tiles/ plus "
      "manifest.txt) and return the manifest path with per-split tile counts.");

  m.def(
      "train",
      [](const std::string& config_path, std::optional<uint64_t> seed, const std::string& out_dir) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          RunConfig cfg = parse_run_config_file(config_path);
          if (seed) cfg.seed = *seed;
          if (!out_dir.empty()) cfg.out_dir = out_dir;
          cfg.validate();
          r = train(cfg);
        }
        py::dict d;
        d["epoch_train_loss"] = r.epoch_train_loss;
        d["best_epoch"] = r.best_epoch;
        d["best_val"] = metrics_dict(r.best_val);
        d["best_val_loss"] = r.best_val_loss;
        d["checkpoint"] = r.checkpoint_path;
        d["metrics_csv"] = r.metrics_csv;
        return d;
      },
      py::arg("config_path"), py::arg("seed") = py::none(), py::arg("out_dir") = "",
      "Train from a key=value config file, optionally overriding its seed and output "
      "directory; returns the loss history, best-epoch validation metrics, and the "
      "best-checkpoint path (empty without an output directory).");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& split, const std::string& manifest) {
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(checkpoint, manifest, split);
        }
        py::dict d = metrics_dict(r.metrics);
        d["loss"] = r.mean_loss;
        d["n_tiles"] = r.n_tiles;
        return d;
      },
      py::arg("checkpoint"), py::arg("split") = "val", py::arg("manifest") = "",
      "Score one split with a saved checkpoint; an empty manifest falls back to the "
      "one recorded inside the checkpoint.");

  m.def(
      "ablate",
      [](const std::string& config_path, int trials, int jobs) {
        RunConfig base = parse_run_config_file(config_path);
        base.validate();
        return ablate(base, trials, jobs).csv;
      },
      py::arg("config_path"), py::arg("trials") = 1, py::arg("jobs") = 1,
      py::call_guard<py::gil_scoped_release>(),
      "Sweep the no-fusion baseline plus every valid fusion configuration and return "
      "the result table as CSV text (rows sorted by f1, failures last).");

  m.def(
      "predict_tile",
      [](const std::string& checkpoint, const std::string& tile_path) {
        ClassMap labels;
        {
          py::gil_scoped_release release;
          const Checkpoint ck = read_checkpoint(checkpoint);
          const TileRecord tile = read_tile(tile_path);
          if (tile.c != 3 || tile.h != ck.config.img_size || tile.w != ck.config.img_size) {
            throw std::invalid_argument("tile is " + std::to_string(tile.c) + "x" + std::to_string(tile.h) + "x" +
                                        std::to_string(tile.w) + " but the model expects 3x" +
                                        std::to_string(ck.config.img_size) + "x" + std::to_string(ck.config.img_size));
          }
          ParamStore store(ck.config.seed);
          GeoVitModel model(store, ck.config.model_config());
          apply_checkpoint(ck, store);
          NoTape guard;
          labels = predict(model.logits(raster_tensor(tile), tile.coord)).first;
        }
        std::vector<std::vector<int>> out(static_cast<size_t>(labels.h), std::vector<int>(static_cast<size_t>(labels.w)));
        for (int64_t y = 0; y < labels.h; ++y)
          for (int64_t x = 0; x < labels.w; ++x) out[static_cast<size_t>(y)][static_cast<size_t>(x)] = labels.at(y, x);
        return out;
      },
      py::arg("checkpoint"), py::arg("tile_path"),
      "Restore a checkpoint, run one stored tile through the model, and return the "
      "predicted label grid as a list of rows.");
}
