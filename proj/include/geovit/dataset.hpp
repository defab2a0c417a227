#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geovit/class_map.hpp"
#include "geovit/errors.hpp"
#include "geovit/loc_encoder.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// Per-class appearance: mean color per channel (in [0,1]) plus the standard
/// deviation of the per-pixel gaussian noise around it.
struct ClassSpectrum {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  double sigma = 0.05;
};

enum class ShapeFamily { blobs, polygons };

/// One geographic collection site: where its tiles sit, how many land in each
/// split, what its classes look like, and which foreground classes occur there.
struct SiteSpec {
  uint32_t site_id = 0;
  GeoCoord center;
  std::array<int, 3> n_tiles{1, 0, 0};    // train, val, test
  std::vector<ClassSpectrum> spectra;     // index = class id; [0] is background
  std::vector<int> site_classes;          // foreground classes drawn here; empty = all
  ShapeFamily shapes = ShapeFamily::blobs;
  double min_size_frac = 0.10;            // shape extent as a fraction of tile size
  double max_size_frac = 0.30;
  double tile_spread_deg = 1.0;           // tiles scatter this far around the center
};

/// One geolocated training tile. Raster values are stored as f32 (the
/// on-disk precision), so write/read round trips are bit-exact.
struct TileRecord {
  uint32_t h = 0, w = 0, c = 0;
  std::vector<float> raster;  // c*h*w row-major
  ClassMap mask;
  GeoCoord coord;
  uint8_t split = 0;  // 0 train, 1 val, 2 test
  uint32_t site_id = 0;
};

/// Raster as a CxHxW tensor of doubles.
Tensor raster_tensor(const TileRecord& tile);

/// A ready-made corpus layout: n_sites collection sites evenly spaced in
/// longitude, cycling through three polar latitude bands, all sharing one
/// three-class palette so that only geography separates sites. Every site
/// contributes per_split tiles to each of train/val/test.
std::vector<SiteSpec> polar_ring_sites(int n_sites, int per_split, ShapeFamily shapes = ShapeFamily::blobs);

/// Deterministically generates every site's tiles. Tile i draws from a
/// sub-generator seeded by (seed, i), so serial and parallel generation agree
/// bit-for-bit. With ambiguity_mode, classes 1 and 2 share one global
/// appearance (copied from the first site's class-1 spectrum) while each site
/// paints only one of them, alternating by site order — pixels alone cannot
/// tell the two classes apart, only location can.
std::vector<TileRecord> generate_dataset(const std::vector<SiteSpec>& specs, uint64_t seed, bool ambiguity_mode,
                                         int tile_size = 64);

/// Resizes by one uniform factor from [lo, hi] (bilinear raster, nearest
/// mask), then random-crops or zero-pads back to the original extent; padded
/// mask pixels carry the ignore label. Geographic coordinates are unchanged.
TileRecord scale_jitter(const TileRecord& tile, double lo, double hi, uint64_t seed);

/// Tile files fail with the shared corruption classes from errors.hpp.
using TileFormatError = FormatError;

void write_tile(const TileRecord& tile, const std::string& path);
TileRecord read_tile(const std::string& path);

/// Writes every tile as out_dir/tiles/tile_NNNNN.gvt plus a manifest with
/// relative entries (so the corpus can move as a unit); returns the manifest
/// path.
std::string write_corpus(const std::vector<TileRecord>& tiles, const std::string& out_dir);

/// Manifest: one "path split-name" record per line.
void write_manifest(const std::string& path, const std::vector<std::pair<std::string, uint8_t>>& entries);
std::vector<std::pair<std::string, uint8_t>> read_manifest(const std::string& path);

/// Reads every tile a manifest names. Relative tile paths resolve against the
/// manifest's directory, and the manifest's split column overrides the one
/// stored inside each tile.
std::vector<TileRecord> load_manifest_tiles(const std::string& manifest_path);

const char* split_name(uint8_t split);
uint8_t parse_split(const std::string& name);

}  // namespace geovit
