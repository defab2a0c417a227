#include "geovit/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geovit/detail/bytes.hpp"
#include "geovit/rng.hpp"

namespace geovit {

using detail::ByteReader;
using detail::put_f32;
using detail::put_f64;
using detail::put_u16;
using detail::put_u32;
using detail::put_u64;

namespace {

uint32_t crc_of(const std::string& bytes, size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len)));
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

bool point_in_polygon(const std::vector<double>& xs, const std::vector<double>& ys, double px, double py) {
  bool inside = false;
  const size_t n = xs.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((ys[i] > py) != (ys[j] > py) && px < (xs[j] - xs[i]) * (py - ys[i]) / (ys[j] - ys[i]) + xs[i]) {
      inside = !inside;
    }
  }
  return inside;
}

void paint_class(TileRecord& tile, const ClassSpectrum& spec, int class_id, Rng& rng,
                 const std::vector<uint8_t>& hit) {
  const int64_t hw = static_cast<int64_t>(tile.h) * tile.w;
  for (int64_t p = 0; p < hw; ++p) {
    if (!hit[static_cast<size_t>(p)]) continue;
    tile.mask.v[static_cast<size_t>(p)] = static_cast<uint8_t>(class_id);
    for (uint32_t c = 0; c < tile.c; ++c) {
      const double v = spec.mean[c % 3] + spec.sigma * rng.gaussian();
      tile.raster[c * hw + p] = static_cast<float>(clamp01(v));
    }
  }
}

void validate_spec(const SiteSpec& spec, bool ambiguity) {
  const std::string tag = "generate_dataset: site " + std::to_string(spec.site_id);
  if (spec.spectra.size() < 2) throw std::invalid_argument(tag + " needs background plus at least one class");
  if (ambiguity && spec.spectra.size() < 3) {
    throw std::invalid_argument(tag + " needs at least 3 classes for ambiguity mode");
  }
  for (const ClassSpectrum& s : spec.spectra) {
    for (double m : s.mean) {
      if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument(tag + " has a spectral mean outside [0,1]");
    }
    if (!(s.sigma >= 0.0)) throw std::invalid_argument(tag + " has a negative spectral sigma");
  }
  int total = 0;
  for (int n : spec.n_tiles) {
    if (n < 0) throw std::invalid_argument(tag + " has a negative tile count");
    total += n;
  }
  if (total < 1) throw std::invalid_argument(tag + " declares no tiles");
  if (!(spec.min_size_frac > 0.0 && spec.min_size_frac <= spec.max_size_frac && spec.max_size_frac <= 0.5)) {
    throw std::invalid_argument(tag + " shape size range must satisfy 0 < min <= max <= 0.5");
  }
  if (!(spec.center.lat >= -90.0 && spec.center.lat <= 90.0)) {
    throw std::invalid_argument(tag + " latitude outside [-90, 90]");
  }
  for (int c : spec.site_classes) {
    if (c < 1 || static_cast<size_t>(c) >= spec.spectra.size()) {
      throw std::invalid_argument(tag + " lists foreground class " + std::to_string(c) + " with no spectrum");
    }
  }
  if (!(spec.tile_spread_deg >= 0.0)) throw std::invalid_argument(tag + " has a negative tile spread");
}

TileRecord make_tile(const SiteSpec& spec, const std::vector<ClassSpectrum>& spectra,
                     const std::vector<int>& classes, uint8_t split, int tile_size, uint64_t sub_seed) {
  Rng rng(sub_seed);
  TileRecord tile;
  tile.h = tile.w = static_cast<uint32_t>(tile_size);
  tile.c = 3;
  tile.split = split;
  tile.site_id = spec.site_id;
  tile.coord.lon = normalize_lon(spec.center.lon + spec.tile_spread_deg * (rng.uniform() - 0.5));
  tile.coord.lat = std::clamp(spec.center.lat + spec.tile_spread_deg * (rng.uniform() - 0.5), -90.0, 90.0);

  const int64_t hw = static_cast<int64_t>(tile_size) * tile_size;
  tile.raster.resize(static_cast<size_t>(3 * hw));
  tile.mask = ClassMap(tile_size, tile_size);
  const ClassSpectrum& bg = spectra[0];
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t p = 0; p < hw; ++p) {
      tile.raster[static_cast<size_t>(c * hw + p)] =
          static_cast<float>(clamp01(bg.mean[static_cast<size_t>(c)] + bg.sigma * rng.gaussian()));
    }
  }

  const int n_shapes = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<uint8_t> hit(static_cast<size_t>(hw));
  for (int s = 0; s < n_shapes; ++s) {
    const int cls = classes[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(classes.size()) - 1))];
    const double cx = rng.uniform(0.15, 0.85) * tile_size;
    const double cy = rng.uniform(0.15, 0.85) * tile_size;
    std::fill(hit.begin(), hit.end(), 0);
    if (spec.shapes == ShapeFamily::blobs) {
      const double a = rng.uniform(spec.min_size_frac, spec.max_size_frac) * tile_size;
      const double b = rng.uniform(spec.min_size_frac, spec.max_size_frac) * tile_size;
      const double theta = rng.uniform(0.0, 3.14159265358979323846);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int64_t y = 0; y < tile_size; ++y) {
        for (int64_t x = 0; x < tile_size; ++x) {
          const double dx = (static_cast<double>(x) + 0.5) - cx, dy = (static_cast<double>(y) + 0.5) - cy;
          const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
          if ((u / a) * (u / a) + (v / b) * (v / b) <= 1.0) hit[static_cast<size_t>(y * tile_size + x)] = 1;
        }
      }
    } else {
      const int n_v = static_cast<int>(rng.uniform_int(5, 9));
      std::vector<double> xs(static_cast<size_t>(n_v)), ys(static_cast<size_t>(n_v));
      for (int k = 0; k < n_v; ++k) {
        const double gap = 2.0 * 3.14159265358979323846 / n_v;
        const double angle = gap * (static_cast<double>(k) + 0.5 * rng.uniform());
        const double radius = rng.uniform(spec.min_size_frac, spec.max_size_frac) * tile_size;
        xs[static_cast<size_t>(k)] = cx + radius * std::cos(angle);
        ys[static_cast<size_t>(k)] = cy + radius * std::sin(angle);
      }
      for (int64_t y = 0; y < tile_size; ++y) {
        for (int64_t x = 0; x < tile_size; ++x) {
          if (point_in_polygon(xs, ys, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
            hit[static_cast<size_t>(y * tile_size + x)] = 1;
          }
        }
      }
    }
    paint_class(tile, spectra[static_cast<size_t>(cls)], cls, rng, hit);
  }
  return tile;
}

}  // namespace

Tensor raster_tensor(const TileRecord& tile) {
  std::vector<double> vals(tile.raster.begin(), tile.raster.end());
  return Tensor::from_data({static_cast<int64_t>(tile.c), static_cast<int64_t>(tile.h), static_cast<int64_t>(tile.w)},
                           std::move(vals));
}

std::vector<SiteSpec> polar_ring_sites(int n_sites, int per_split, ShapeFamily shapes) {
  if (n_sites < 1) throw std::invalid_argument("polar_ring_sites: need at least one site");
  if (per_split < 1) throw std::invalid_argument("polar_ring_sites: need at least one tile per split");
  const std::vector<ClassSpectrum> palette = {
      {{0.20, 0.22, 0.26}, 0.04},
      {{0.70, 0.55, 0.40}, 0.05},
      {{0.35, 0.60, 0.45}, 0.05},
  };
  std::vector<SiteSpec> sites;
  for (int i = 0; i < n_sites; ++i) {
    SiteSpec s;
    s.site_id = static_cast<uint32_t>(i + 1);
    s.center.lon = -180.0 + 360.0 * (i + 0.5) / n_sites;
    s.center.lat = 66.0 + 7.0 * (i % 3);
    s.n_tiles = {per_split, per_split, per_split};
    s.spectra = palette;
    s.shapes = shapes;
    sites.push_back(std::move(s));
  }
  return sites;
}

std::vector<TileRecord> generate_dataset(const std::vector<SiteSpec>& specs, uint64_t seed, bool ambiguity_mode,
                                         int tile_size) {
  if (specs.empty()) throw std::invalid_argument("generate_dataset: no sites");
  if (tile_size < 16 || tile_size % 16 != 0) {
    throw std::invalid_argument("generate_dataset: tile size must be a positive multiple of 16");
  }
  if (ambiguity_mode && specs.size() < 2) {
    throw std::invalid_argument("generate_dataset: ambiguity mode needs at least 2 sites");
  }
  for (const SiteSpec& spec : specs) validate_spec(spec, ambiguity_mode);

  std::vector<TileRecord> out;
  uint64_t index = 0;
  for (size_t si = 0; si < specs.size(); ++si) {
    const SiteSpec& spec = specs[si];
    std::vector<ClassSpectrum> spectra = spec.spectra;
    std::vector<int> classes = spec.site_classes;
    if (classes.empty()) {
      for (size_t c = 1; c < spectra.size(); ++c) classes.push_back(static_cast<int>(c));
    }
    if (ambiguity_mode) {
      // classes 1 and 2 look identical everywhere; this site draws only one
      spectra[1] = specs[0].spectra[1];
      spectra[2] = specs[0].spectra[1];
      classes = {1 + static_cast<int>(si % 2)};
    }
    for (uint8_t split = 0; split < 3; ++split) {
      for (int t = 0; t < spec.n_tiles[split]; ++t, ++index) {
        out.push_back(make_tile(spec, spectra, classes, split, tile_size, mix_seed(seed, index)));
      }
    }
  }
  return out;
}

TileRecord scale_jitter(const TileRecord& tile, double lo, double hi, uint64_t seed) {
  if (!(lo > 0.0) || !(hi >= lo)) {
    throw std::invalid_argument("scale_jitter: range must be positive with lo <= hi");
  }
  if (tile.h == 0 || tile.w == 0 || tile.c == 0) throw std::invalid_argument("scale_jitter: empty tile");
  Rng rng(seed);
  const double f = rng.uniform(lo, hi);
  const int64_t h = tile.h, w = tile.w, c = tile.c;
  const int64_t nh = std::max<int64_t>(1, std::llround(static_cast<double>(h) * f));
  const int64_t nw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * f));
  const double sy = static_cast<double>(nh) / static_cast<double>(h);
  const double sx = static_cast<double>(nw) / static_cast<double>(w);

  std::vector<float> resized(static_cast<size_t>(c * nh * nw));
  ClassMap rmask(nh, nw);
  for (int64_t y = 0; y < nh; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) / sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int64_t y0 = static_cast<int64_t>(src_y);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double ty = src_y - static_cast<double>(y0);
    const int64_t ny = std::min(h - 1, static_cast<int64_t>((static_cast<double>(y) + 0.5) / sy));
    for (int64_t x = 0; x < nw; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) / sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int64_t x0 = static_cast<int64_t>(src_x);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double tx = src_x - static_cast<double>(x0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = tile.raster.data() + ch * h * w;
        const double top = (1.0 - tx) * src[y0 * w + x0] + tx * src[y0 * w + x1];
        const double bot = (1.0 - tx) * src[y1 * w + x0] + tx * src[y1 * w + x1];
        resized[static_cast<size_t>(ch * nh * nw + y * nw + x)] = static_cast<float>((1.0 - ty) * top + ty * bot);
      }
      const int64_t nx = std::min(w - 1, static_cast<int64_t>((static_cast<double>(x) + 0.5) / sx));
      rmask.v[static_cast<size_t>(y * nw + x)] = tile.mask.v[static_cast<size_t>(ny * w + nx)];
    }
  }

  const int64_t crop_y = nh >= h ? rng.uniform_int(0, nh - h) : -rng.uniform_int(0, h - nh);
  const int64_t crop_x = nw >= w ? rng.uniform_int(0, nw - w) : -rng.uniform_int(0, w - nw);

  TileRecord out;
  out.h = tile.h;
  out.w = tile.w;
  out.c = tile.c;
  out.coord = tile.coord;
  out.split = tile.split;
  out.site_id = tile.site_id;
  out.raster.assign(static_cast<size_t>(c * h * w), 0.0f);
  out.mask = ClassMap(h, w, static_cast<uint8_t>(kIgnoreIndex));
  for (int64_t y = 0; y < h; ++y) {
    const int64_t src_y = y + crop_y;  // negative crop offset = padding
    if (src_y < 0 || src_y >= nh) continue;
    for (int64_t x = 0; x < w; ++x) {
      const int64_t src_x = x + crop_x;
      if (src_x < 0 || src_x >= nw) continue;
      for (int64_t ch = 0; ch < c; ++ch) {
        out.raster[static_cast<size_t>(ch * h * w + y * w + x)] =
            resized[static_cast<size_t>(ch * nh * nw + src_y * nw + src_x)];
      }
      out.mask.v[static_cast<size_t>(y * w + x)] = rmask.v[static_cast<size_t>(src_y * nw + src_x)];
    }
  }
  return out;
}

void write_tile(const TileRecord& tile, const std::string& path) {
  const size_t hw = static_cast<size_t>(tile.h) * tile.w;
  if (tile.raster.size() != static_cast<size_t>(tile.c) * hw || tile.mask.v.size() != hw ||
      tile.mask.h != tile.h || tile.mask.w != tile.w) {
    throw std::invalid_argument("write_tile: raster/mask sizes disagree with declared dimensions");
  }
  if (tile.split > 2) throw std::invalid_argument("write_tile: split must be 0, 1, or 2");

  std::string buf;
  buf.reserve(40 + 4 * tile.raster.size() + hw);
  buf.append("GVT1");
  put_u32(buf, 1);
  put_u32(buf, tile.h);
  put_u32(buf, tile.w);
  put_u32(buf, tile.c);
  for (float v : tile.raster) put_f32(buf, v);
  buf.append(reinterpret_cast<const char*>(tile.mask.v.data()), hw);
  put_u16(buf, static_cast<uint16_t>(kIgnoreIndex));
  put_f64(buf, tile.coord.lon);
  put_f64(buf, tile.coord.lat);
  buf.push_back(static_cast<char>(tile.split));
  put_u32(buf, tile.site_id);
  put_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_tile: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_tile: short write to " + path);
}

TileRecord read_tile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_tile: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw TruncatedError("read_tile: " + path + " is shorter than the magic");
  if (bytes.compare(0, 4, "GVT1") != 0) throw BadMagicError("read_tile: " + path + " does not start with GVT1");

  ByteReader r(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), "tile file");
  r.off = 4;  // past the magic
  const uint32_t version = r.u32();
  const uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  const uint64_t hw = static_cast<uint64_t>(h) * w;
  const uint64_t expected = 20 + 4 * (static_cast<uint64_t>(c) * hw) + hw + 2 + 16 + 1 + 4 + 4;
  if (bytes.size() < expected) throw TruncatedError("read_tile: " + path + " ends before its payload");
  if (bytes.size() > expected) throw TileFormatError("read_tile: " + path + " carries trailing bytes");
  if (crc_of(bytes, bytes.size() - 4) !=
      static_cast<uint32_t>(static_cast<unsigned char>(bytes[bytes.size() - 4]) |
                            (static_cast<unsigned char>(bytes[bytes.size() - 3]) << 8) |
                            (static_cast<unsigned char>(bytes[bytes.size() - 2]) << 16) |
                            (static_cast<unsigned char>(bytes[bytes.size() - 1]) << 24))) {
    throw ChecksumError("read_tile: " + path + " fails its checksum");
  }
  if (version != 1) throw TileFormatError("read_tile: " + path + " has unsupported version " + std::to_string(version));

  TileRecord tile;
  tile.h = h;
  tile.w = w;
  tile.c = c;
  tile.raster.resize(static_cast<size_t>(c) * hw);
  for (float& v : tile.raster) v = r.f32();
  tile.mask = ClassMap(h, w);
  r.need(hw);
  std::memcpy(tile.mask.v.data(), bytes.data() + r.off, hw);
  r.off += hw;
  const uint16_t ignore = r.u16();
  if (ignore != kIgnoreIndex) {
    throw TileFormatError("read_tile: " + path + " declares ignore label " + std::to_string(ignore));
  }
  tile.coord.lon = r.f64();
  tile.coord.lat = r.f64();
  r.need(1);
  tile.split = static_cast<uint8_t>(bytes[r.off++]);
  if (tile.split > 2) throw TileFormatError("read_tile: " + path + " has split " + std::to_string(tile.split));
  tile.site_id = r.u32();
  return tile;
}

const char* split_name(uint8_t split) {
  switch (split) {
    case 0: return "train";
    case 1: return "val";
    case 2: return "test";
    default: throw std::invalid_argument("split_name: split must be 0, 1, or 2");
  }
}

uint8_t parse_split(const std::string& name) {
  if (name == "train") return 0;
  if (name == "val") return 1;
  if (name == "test") return 2;
  throw std::invalid_argument("parse_split: unknown split '" + name + "'");
}

void write_manifest(const std::string& path, const std::vector<std::pair<std::string, uint8_t>>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& [tile_path, split] : entries) out << tile_path << ' ' << split_name(split) << '\n';
  if (!out) throw std::runtime_error("write_manifest: short write to " + path);
}

std::string write_corpus(const std::vector<TileRecord>& tiles, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "tiles");
  std::vector<std::pair<std::string, uint8_t>> entries;
  entries.reserve(tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof name, "tiles/tile_%05zu.gvt", i);
    write_tile(tiles[i], (fs::path(out_dir) / name).string());
    entries.emplace_back(name, tiles[i].split);  // relative, so the corpus can move as a unit
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<std::pair<std::string, uint8_t>> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::vector<std::pair<std::string, uint8_t>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t sep = line.rfind(' ');
    if (sep == std::string::npos || sep == 0 || sep + 1 == line.size()) {
      throw std::runtime_error("read_manifest: " + path + " line " + std::to_string(line_no) +
                               " is not 'path split'");
    }
    try {
      out.emplace_back(line.substr(0, sep), parse_split(line.substr(sep + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("read_manifest: " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TileRecord> load_manifest_tiles(const std::string& manifest_path) {
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<TileRecord> tiles;
  for (const auto& [tile_path, split] : read_manifest(manifest_path)) {
    std::filesystem::path p(tile_path);
    if (p.is_relative()) p = base / p;
    TileRecord rec = read_tile(p.string());
    rec.split = split;
    tiles.push_back(std::move(rec));
  }
  return tiles;
}

}  // namespace geovit
