#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "geovit/dataset.hpp"

using namespace geovit;

namespace {

std::vector<SiteSpec> two_sites(bool distinct_fg = true) {
  ClassSpectrum bg{{0.2, 0.25, 0.3}, 0.04};
  ClassSpectrum fg1{{0.7, 0.55, 0.4}, 0.05};
  ClassSpectrum fg2 = distinct_fg ? ClassSpectrum{{0.35, 0.8, 0.6}, 0.05} : fg1;
  SiteSpec a;
  a.site_id = 1;
  a.center = {-150.0, 70.0};
  a.n_tiles = {10, 10, 10};
  a.spectra = {bg, fg1, fg2};
  SiteSpec b = a;
  b.site_id = 2;
  b.center = {62.0, 68.0};
  b.shapes = ShapeFamily::polygons;
  return {a, b};
}

double ks_statistic(std::vector<float> a, std::vector<float> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double best = 0.0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    best = std::max(best, std::abs(static_cast<double>(i) / static_cast<double>(a.size()) -
                                   static_cast<double>(j) / static_cast<double>(b.size())));
  }
  return best;
}

std::vector<float> class_pixels(const std::vector<TileRecord>& tiles, uint8_t cls, size_t cap,
                                int only_channel = -1) {
  std::vector<float> out;
  for (const TileRecord& t : tiles) {
    const size_t hw = static_cast<size_t>(t.h) * t.w;
    for (size_t p = 0; p < hw && out.size() < cap; ++p) {
      if (t.mask.v[p] != cls) continue;
      for (uint32_t c = 0; c < t.c; ++c) {
        if (only_channel >= 0 && c != static_cast<uint32_t>(only_channel)) continue;
        out.push_back(t.raster[c * hw + p]);
      }
    }
  }
  return out;
}

bool records_equal(const TileRecord& a, const TileRecord& b) {
  return a.h == b.h && a.w == b.w && a.c == b.c && a.split == b.split && a.site_id == b.site_id &&
         a.coord.lon == b.coord.lon && a.coord.lat == b.coord.lat && a.mask.v == b.mask.v &&
         a.raster.size() == b.raster.size() &&
         std::memcmp(a.raster.data(), b.raster.data(), a.raster.size() * sizeof(float)) == 0;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void refresh_crc(std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4));
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + static_cast<size_t>(i)] = static_cast<char>((crc >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("generation produces the declared tile counts, deterministically") {
  auto specs = two_sites();
  auto tiles = generate_dataset(specs, 99, false);
  REQUIRE(tiles.size() == 60);
  int split_counts[3] = {0, 0, 0};
  for (const TileRecord& t : tiles) {
    ++split_counts[t.split];
    CHECK(t.h == 64);
    CHECK(t.w == 64);
    CHECK(t.c == 3);
    CHECK((t.site_id == 1 || t.site_id == 2));
    for (float v : t.raster) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    for (uint8_t m : t.mask.v) CHECK(m <= 2);  // never paints the ignore label
  }
  CHECK(split_counts[0] == 20);
  CHECK(split_counts[1] == 20);
  CHECK(split_counts[2] == 20);

  auto again = generate_dataset(specs, 99, false);
  REQUIRE(again.size() == tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) CHECK(records_equal(tiles[i], again[i]));

  auto other_seed = generate_dataset(specs, 100, false);
  CHECK_FALSE(records_equal(tiles[0], other_seed[0]));
}

TEST_CASE("each tile depends only on its own sub-seed") {
  auto specs = two_sites();
  auto base = generate_dataset(specs, 7, false);
  auto tweaked_specs = specs;
  tweaked_specs[0].spectra[0].sigma = 0.09;  // perturb site 1 only
  auto tweaked = generate_dataset(tweaked_specs, 7, false);
  // site 2 occupies the same indices, so its tiles must be untouched
  for (size_t i = 0; i < base.size(); ++i) {
    if (base[i].site_id == 2) CHECK(records_equal(base[i], tweaked[i]));
  }
  CHECK_FALSE(records_equal(base[0], tweaked[0]));
}

TEST_CASE("ambiguity mode makes the two classes spectrally indistinguishable") {
  auto specs = two_sites(true);  // deliberately distinct specs get overridden
  auto tiles = generate_dataset(specs, 5, true);
  std::set<uint8_t> site1_classes, site2_classes;
  for (const TileRecord& t : tiles) {
    for (uint8_t m : t.mask.v) {
      if (m == 0) continue;
      (t.site_id == 1 ? site1_classes : site2_classes).insert(m);
    }
  }
  CHECK(site1_classes == std::set<uint8_t>{1});
  CHECK(site2_classes == std::set<uint8_t>{2});

  auto a = class_pixels(tiles, 1, 30000);
  auto b = class_pixels(tiles, 2, 30000);
  REQUIRE(a.size() >= 10000);
  REQUIRE(b.size() >= 10000);
  a.resize(10000);
  b.resize(10000);
  CHECK(ks_statistic(a, b) < 0.05);

  // without ambiguity the same sites are trivially separable on channel 0
  // (mean 0.7 vs 0.35 at sigma 0.05)
  auto plain = generate_dataset(specs, 5, false);
  auto pa = class_pixels(plain, 1, 10000, 0);
  auto pb = class_pixels(plain, 2, 10000, 0);
  CHECK(ks_statistic(pa, pb) > 0.5);
}

TEST_CASE("invalid site specs are rejected") {
  auto specs = two_sites();
  CHECK_THROWS_AS(generate_dataset({}, 1, false), std::invalid_argument);
  CHECK_THROWS_AS(generate_dataset({specs[0]}, 1, true), std::invalid_argument);
  CHECK_THROWS_AS(generate_dataset(specs, 1, false, 60), std::invalid_argument);

  auto bad = specs;
  bad[0].spectra[1].mean[0] = 1.5;
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
  bad = specs;
  bad[1].spectra[0].sigma = -0.1;
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
  bad = specs;
  bad[0].n_tiles = {0, 0, 0};
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
  bad = specs;
  bad[0].max_size_frac = 0.7;
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
  bad = specs;
  bad[0].site_classes = {3};
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
  bad = specs;
  bad[0].center.lat = 95.0;
  CHECK_THROWS_AS(generate_dataset(bad, 1, false), std::invalid_argument);
}

TEST_CASE("the ready-made site ring spans polar longitudes and feeds the generator") {
  auto sites = polar_ring_sites(5, 2);
  REQUIRE(sites.size() == 5);
  for (size_t i = 0; i < sites.size(); ++i) {
    CHECK(sites[i].site_id == i + 1);
    CHECK(sites[i].center.lat >= 66.0);
    CHECK(sites[i].center.lat <= 80.0);
    CHECK(sites[i].n_tiles == std::array<int, 3>{2, 2, 2});
    CHECK(sites[i].spectra.size() == 3);  // enough classes for ambiguity mode
    if (i > 0) CHECK(sites[i].center.lon > sites[i - 1].center.lon);
  }
  CHECK(sites.front().center.lon >= -180.0);
  CHECK(sites.back().center.lon < 180.0);
  CHECK(generate_dataset(polar_ring_sites(2, 1), 4, true, 32).size() == 6);

  CHECK_THROWS_AS(polar_ring_sites(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(polar_ring_sites(1, 0), std::invalid_argument);
}

TEST_CASE("unit scale factor is a bit-exact identity") {
  auto tiles = generate_dataset(two_sites(), 3, false);
  const TileRecord& t = tiles[0];
  TileRecord j = scale_jitter(t, 1.0, 1.0, 42);
  CHECK(records_equal(t, j));
}

TEST_CASE("jitter keeps dimensions and never invents labels") {
  auto tiles = generate_dataset(two_sites(), 3, false);
  const TileRecord& t = tiles[1];
  std::set<uint8_t> before(t.mask.v.begin(), t.mask.v.end());
  for (uint64_t seed = 0; seed < 20; ++seed) {
    TileRecord j = scale_jitter(t, 0.1, 2.0, seed);
    CHECK(j.h == t.h);
    CHECK(j.w == t.w);
    CHECK(j.coord.lon == t.coord.lon);
    CHECK(j.coord.lat == t.coord.lat);
    for (uint8_t m : j.mask.v) {
      const bool known = before.count(m) > 0 || m == kIgnoreIndex;
      CHECK(known);
    }
    TileRecord k = scale_jitter(t, 0.1, 2.0, seed);
    CHECK(records_equal(j, k));
  }
}

TEST_CASE("shrinking pads with the ignore label and zero raster") {
  auto tiles = generate_dataset(two_sites(), 3, false);
  const TileRecord& t = tiles[2];
  TileRecord j = scale_jitter(t, 0.25, 0.25, 9);
  const int64_t small = 16;  // 64 * 0.25
  int64_t ignored = 0, content = 0;
  for (uint8_t m : j.mask.v) (m == kIgnoreIndex ? ignored : content)++;
  CHECK(content == small * small);
  CHECK(ignored == 64 * 64 - small * small);
  // padded raster pixels are exactly zero in every channel
  const size_t hw = 64 * 64;
  for (size_t p = 0; p < hw; ++p) {
    if (j.mask.v[p] != kIgnoreIndex) continue;
    for (uint32_t c = 0; c < j.c; ++c) CHECK(j.raster[c * hw + p] == 0.0f);
  }
  CHECK_THROWS_AS(scale_jitter(t, 0.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(scale_jitter(t, 2.0, 1.0, 1), std::invalid_argument);
}

TEST_CASE("tile files survive a write-read round trip bit-exactly") {
  auto tiles = generate_dataset(two_sites(), 13, false);
  const std::string path = temp_path("geovit_roundtrip.gvt");
  write_tile(tiles[5], path);
  TileRecord back = read_tile(path);
  CHECK(records_equal(tiles[5], back));
  std::remove(path.c_str());
}

TEST_CASE("each corruption mode raises its own error") {
  auto tiles = generate_dataset(two_sites(), 13, false);
  const std::string path = temp_path("geovit_corrupt.gvt");
  write_tile(tiles[0], path);
  const std::string good = slurp(path);

  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  CHECK_THROWS_AS(read_tile(path), BadMagicError);

  spit(path, good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(read_tile(path), TruncatedError);
  spit(path, good.substr(0, 3));
  CHECK_THROWS_AS(read_tile(path), TruncatedError);

  bad = good;
  bad[100] = static_cast<char>(bad[100] ^ 0x40);  // flip a raster bit
  spit(path, bad);
  CHECK_THROWS_AS(read_tile(path), ChecksumError);

  spit(path, good + "zz");
  CHECK_THROWS_AS(read_tile(path), TileFormatError);

  bad = good;
  bad[4] = 2;  // version field, checksum repaired
  refresh_crc(bad);
  spit(path, bad);
  CHECK_THROWS_AS(read_tile(path), TileFormatError);

  spit(path, good);
  CHECK_NOTHROW(read_tile(path));
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_tile(path), std::runtime_error);
}

TEST_CASE("manifests round-trip and reject junk") {
  const std::string path = temp_path("geovit_manifest.txt");
  std::vector<std::pair<std::string, uint8_t>> entries{
      {"tiles/a.gvt", 0}, {"tiles/b.gvt", 1}, {"tiles/c.gvt", 2}};
  write_manifest(path, entries);
  CHECK(read_manifest(path) == entries);

  std::ofstream(path, std::ios::trunc) << "tiles/a.gvt nowhere\n";
  CHECK_THROWS_AS(read_manifest(path), std::runtime_error);
  std::ofstream(path, std::ios::trunc) << "justonetoken\n";
  CHECK_THROWS_AS(read_manifest(path), std::runtime_error);
  std::remove(path.c_str());

  CHECK(parse_split("val") == 1);
  CHECK(split_name(2) == std::string("test"));
  CHECK_THROWS_AS(parse_split("training"), std::invalid_argument);
}

TEST_CASE("raster tensors mirror the stored floats") {
  auto tiles = generate_dataset(two_sites(), 21, false);
  Tensor r = raster_tensor(tiles[0]);
  REQUIRE(r.shape() == Shape{3, 64, 64});
  for (int64_t i = 0; i < r.numel(); ++i) {
    CHECK(r.data()[i] == static_cast<double>(tiles[0].raster[static_cast<size_t>(i)]));
  }
}
