#include "geovit/loc_encoder.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "geovit/ops.hpp"

namespace geovit {

namespace {
constexpr double kDegToRad = 0.017453292519943295769237;

uint64_t double_bits(double v) {
  uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}
}  // namespace

double normalize_lon(double lon_deg) {
  double r = std::fmod(lon_deg + 180.0, 360.0);
  if (r < 0.0) r += 360.0;
  return r - 180.0;
}

std::vector<double> sh_basis(double lon_deg, double lat_deg, int lmax) {
  if (lmax < 0) throw std::invalid_argument("sh_basis: lmax must be non-negative");
  if (!(lat_deg >= -90.0 && lat_deg <= 90.0)) {
    throw std::invalid_argument("sh_basis: latitude " + std::to_string(lat_deg) + " outside [-90, 90]");
  }
  if (!std::isfinite(lon_deg)) throw std::invalid_argument("sh_basis: longitude must be finite");

  const double phi = normalize_lon(lon_deg) * kDegToRad;
  const double theta = (90.0 - lat_deg) * kDegToRad;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);

  std::vector<double> out(static_cast<size_t>(sh_dim(lmax)));
  auto idx = [](int l, int m) { return static_cast<size_t>(l * l + l + m); };

  // K[l][m] is the orthonormal Legendre part: sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!) * P_l^m(ct).
  // Column recurrence: walk the diagonal in m, then up in l for each column.
  const double sqrt2 = std::sqrt(2.0);
  double kmm = 0.28209479177387814347403972578;  // K_0^0 = 1 / (2 sqrt(pi))
  for (int m = 0; m <= lmax; ++m) {
    if (m > 0) kmm *= st * std::sqrt((2.0 * m + 1.0) / (2.0 * m));
    const double cm = (m == 0) ? 1.0 : sqrt2 * std::cos(m * phi);
    const double sm = (m == 0) ? 0.0 : sqrt2 * std::sin(m * phi);
    double prev2 = 0.0, prev1 = kmm;
    out[idx(m, m)] = kmm * cm;
    if (m > 0) out[idx(m, -m)] = kmm * sm;
    for (int l = m + 1; l <= lmax; ++l) {
      double k;
      if (l == m + 1) {
        k = std::sqrt(2.0 * m + 3.0) * ct * prev1;
      } else {
        const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - static_cast<double>(m) * m));
        const double b = std::sqrt(((2.0 * l + 1.0) * (l - 1.0 - m) * (l - 1.0 + m)) /
                                   ((2.0 * l - 3.0) * (static_cast<double>(l) * l - static_cast<double>(m) * m)));
        k = a * ct * prev1 - b * prev2;
      }
      out[idx(l, m)] = k * cm;
      if (m > 0) out[idx(l, -m)] = k * sm;
      prev2 = prev1;
      prev1 = k;
    }
  }
  return out;
}

LocEncoder::LocEncoder(ParamStore& params, const std::string& prefix, int degree, int64_t embed_dim, int64_t hidden)
    : degree_(degree), embed_dim_(embed_dim), hidden_(hidden) {
  if (degree < 1 || embed_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("LocEncoder: degree, embed_dim and hidden must be positive");
  }
  const int64_t in = basis_dim();
  w1_ = params.he_normal(prefix + "mlp1.w", {in, hidden}, in);
  b1_ = params.zeros(prefix + "mlp1.b", {hidden});
  w2_ = params.he_normal(prefix + "mlp2.w", {hidden, hidden}, hidden);
  b2_ = params.zeros(prefix + "mlp2.b", {hidden});
  w3_ = params.he_normal(prefix + "mlp3.w", {hidden, embed_dim}, hidden);
  b3_ = params.zeros(prefix + "mlp3.b", {embed_dim});
}

Tensor LocEncoder::forward(const std::vector<double>& basis) const {
  Tensor x = Tensor::from_data({1, static_cast<int64_t>(basis.size())}, basis);
  Tensor h1 = gelu(add(matmul(x, w1_), b1_));
  Tensor h2 = gelu(add(matmul(h1, w2_), b2_));
  Tensor y = add(matmul(h2, w3_), b3_);
  return reshape(y, {embed_dim_});
}

Tensor LocEncoder::encode(const GeoCoord& c) const {
  const double lon = normalize_lon(c.lon);
  if (Tape::active() == nullptr && cache_enabled_) {
    const Key key{double_bits(lon), double_bits(c.lat)};
    auto it = cache_.find(key);
    if (it != cache_.end()) return Tensor::from_data({embed_dim_}, it->second);
    Tensor y = forward(sh_basis(lon, c.lat, degree_ - 1));
    cache_.emplace(key, y.values());
    return y;
  }
  return forward(sh_basis(lon, c.lat, degree_ - 1));
}

void LocEncoder::set_cache_enabled(bool enabled) {
  cache_enabled_ = enabled;
  if (!enabled) cache_.clear();
}

void LocEncoder::bump_version() { cache_.clear(); }

}  // namespace geovit
