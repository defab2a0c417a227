#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "geovit/params.hpp"
#include "geovit/tensor.hpp"

namespace geovit {

/// Geographic coordinate in degrees. Longitude may be any finite value and is
/// normalized to [-180, 180); latitude must lie in [-90, 90].
struct GeoCoord {
  double lon = 0.0;
  double lat = 0.0;
};

/// Wraps a longitude into [-180, 180) using exact fmod arithmetic, so a
/// coordinate and its +360 alias produce bit-identical results downstream.
double normalize_lon(double lon_deg);

/// Number of real spherical-harmonic basis functions through degree lmax.
constexpr int sh_dim(int lmax) { return (lmax + 1) * (lmax + 1); }

/// Real orthonormal spherical harmonics through degree lmax, evaluated at the
/// given coordinate. Geodesy sign convention (no Condon-Shortley phase),
/// ordered by degree l ascending, then order m from -l to l. Uses the
/// fully normalized column recurrence, which is stable through degree 40
/// and beyond.
std::vector<double> sh_basis(double lon_deg, double lat_deg, int lmax);

/// Maps a coordinate to a learned embedding: spherical-harmonic basis of
/// degree L (harmonics l = 0..L-1, i.e. L^2 basis values) followed by a
/// two-hidden-layer GeLU MLP. Holds an evaluation-time memo keyed by the
/// exact coordinate bits; the memo is consulted only when no tape is active
/// and must be invalidated (bump_version) whenever the MLP parameters change.
class LocEncoder {
 public:
  LocEncoder(ParamStore& params, const std::string& prefix, int degree, int64_t embed_dim, int64_t hidden = 256);

  Tensor encode(const GeoCoord& c) const;  // [embed_dim]

  int degree() const { return degree_; }
  int64_t basis_dim() const { return static_cast<int64_t>(degree_) * degree_; }
  int64_t embed_dim() const { return embed_dim_; }

  void set_cache_enabled(bool enabled);
  void bump_version();  // drops all memoized embeddings
  size_t cache_size() const { return cache_.size(); }

 private:
  struct Key {
    uint64_t lon_bits, lat_bits;
    bool operator==(const Key& o) const { return lon_bits == o.lon_bits && lat_bits == o.lat_bits; }
  };
  struct KeyHash {
    size_t operator()(const Key& k) const { return static_cast<size_t>(mix_seed(k.lon_bits, k.lat_bits)); }
  };

  Tensor forward(const std::vector<double>& basis) const;

  int degree_;
  int64_t embed_dim_, hidden_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  bool cache_enabled_ = true;
  mutable std::unordered_map<Key, std::vector<double>, KeyHash> cache_;
};

}  // namespace geovit
