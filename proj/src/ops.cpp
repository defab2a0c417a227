#include "geovit/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace geovit {

namespace {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

constexpr double kInvSqrt2 = 0.7071067811865475244008444;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;

std::atomic<uint64_t> g_zero_norm_flags{0};
void (*g_log_handler)(const char*) = nullptr;

void log_note(const char* msg) {
  if (g_log_handler) {
    g_log_handler(msg);
  } else {
    std::fprintf(stderr, "geovit: %s\n", msg);
  }
}

bool grad_wanted(std::initializer_list<const Tensor*> xs) {
  for (const Tensor* x : xs) {
    if (x->requires_grad()) return true;
  }
  return false;
}

const std::vector<double>* out_grad(const TensorImpl& o) { return o.grad.empty() ? nullptr : &o.grad; }

void check_axis(const Tensor& x, int axis, const char* op) {
  if (axis < 0 || axis >= x.ndim()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(x.shape()));
  }
}

/// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  int64_t outer, n, inner;
};
AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

Tensor unary_pointwise(const Tensor& x, const char* name, double (*fwd)(double), double (*dcalc)(double, double)) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  Tensor y = make_tensor(x.shape(), std::move(out), x.requires_grad());
  detail::check_finite(y, name);
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, dcalc]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (size_t i = 0; i < gy->size(); ++i) xi->grad[i] += (*gy)[i] * dcalc(xi->data[i], yi->data[i]);
        },
        y);
  }
  return y;
}

}  // namespace

uint64_t zero_norm_flag_count() { return g_zero_norm_flags.load(); }
void set_log_handler(void (*handler)(const char*)) { g_log_handler = handler; }

Tensor relu(const Tensor& x) {
  return unary_pointwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_pointwise(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double xv, double) {
        return 0.5 * (1.0 + std::erf(xv * kInvSqrt2)) + xv * kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_pointwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double yv) { return yv * (1.0 - yv); });
}

namespace {

/// Broadcast plan: padded shapes plus per-operand strides (0 on broadcast dims).
struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> sa, sb;
  bool same_shape;
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {a.shape(), {}, {}, true};
  const int nd = std::max(a.ndim(), b.ndim());
  Shape sa(static_cast<size_t>(nd), 1), sb(static_cast<size_t>(nd), 1), out(static_cast<size_t>(nd), 1);
  for (int i = 0; i < a.ndim(); ++i) sa[static_cast<size_t>(nd - a.ndim() + i)] = a.dim(i);
  for (int i = 0; i < b.ndim(); ++i) sb[static_cast<size_t>(nd - b.ndim() + i)] = b.dim(i);
  for (int i = 0; i < nd; ++i) {
    const auto da = sa[static_cast<size_t>(i)], db = sb[static_cast<size_t>(i)];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                                  shape_str(b.shape()) + " are not broadcast-compatible");
    }
    out[static_cast<size_t>(i)] = std::max(da, db);
  }
  auto strides_of = [&](const Shape& s) {
    std::vector<int64_t> st(static_cast<size_t>(nd), 0);
    int64_t acc = 1;
    for (int i = nd - 1; i >= 0; --i) {
      st[static_cast<size_t>(i)] = (s[static_cast<size_t>(i)] == 1) ? 0 : acc;
      acc *= s[static_cast<size_t>(i)];
    }
    return st;
  };
  return {out, strides_of(sa), strides_of(sb), false};
}

template <typename Fn>
void broadcast_walk(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, Fn&& fn) {
  const int nd = static_cast<int>(out.size());
  const int64_t total = shape_numel(out);
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < total; ++i) {
    fn(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      auto& id = idx[static_cast<size_t>(d)];
      oa += sa[static_cast<size_t>(d)];
      ob += sb[static_cast<size_t>(d)];
      if (++id < out[static_cast<size_t>(d)]) break;
      oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      id = 0;
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BroadcastPlan plan = plan_broadcast(a, b, "add");
  const bool wanted = grad_wanted({&a, &b});
  std::vector<double> out(static_cast<size_t>(shape_numel(plan.out)));
  if (plan.same_shape) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  } else {
    broadcast_walk(plan.out, plan.sa, plan.sb,
                   [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = a.data()[oa] + b.data()[ob]; });
  }
  Tensor y = make_tensor(plan.out, std::move(out), wanted);
  detail::check_finite(y, "add");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl ai = a.impl(), bi = b.impl(), yi = y.impl();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    tp->record(
        [ai, bi, yi, plan, ra, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (ra) detail::ensure_grad(*ai);
          if (rb) detail::ensure_grad(*bi);
          if (plan.same_shape) {
            for (size_t i = 0; i < gy->size(); ++i) {
              if (ra) ai->grad[i] += (*gy)[i];
              if (rb) bi->grad[i] += (*gy)[i];
            }
          } else {
            broadcast_walk(plan.out, plan.sa, plan.sb, [&](int64_t i, int64_t oa, int64_t ob) {
              if (ra) ai->grad[static_cast<size_t>(oa)] += (*gy)[static_cast<size_t>(i)];
              if (rb) bi->grad[static_cast<size_t>(ob)] += (*gy)[static_cast<size_t>(i)];
            });
          }
        },
        y);
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                " must match");
  }
  const bool wanted = grad_wanted({&a, &b});
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = make_tensor(a.shape(), std::move(out), wanted);
  detail::check_finite(y, "mul");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl ai = a.impl(), bi = b.impl(), yi = y.impl();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    tp->record(
        [ai, bi, yi, ra, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (ra) {
            detail::ensure_grad(*ai);
            for (size_t i = 0; i < gy->size(); ++i) ai->grad[i] += (*gy)[i] * bi->data[i];
          }
          if (rb) {
            detail::ensure_grad(*bi);
            for (size_t i = 0; i < gy->size(); ++i) bi->grad[i] += (*gy)[i] * ai->data[i];
          }
        },
        y);
  }
  return y;
}

Tensor scale(const Tensor& x, double alpha) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * alpha;
  Tensor y = make_tensor(x.shape(), std::move(out), x.requires_grad());
  detail::check_finite(y, "scale");
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, alpha]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (size_t i = 0; i < gy->size(); ++i) xi->grad[i] += (*gy)[i] * alpha;
        },
        y);
  }
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  check_axis(x, axis, "softmax");
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<double> out(x.values().size());
  const double* px = x.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.n * sp.inner + in;
      double mx = px[base];
      for (int64_t t = 1; t < sp.n; ++t) mx = std::max(mx, px[base + t * sp.inner]);
      double denom = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) {
        const double e = std::exp(px[base + t * sp.inner] - mx);
        out[static_cast<size_t>(base + t * sp.inner)] = e;
        denom += e;
      }
      for (int64_t t = 0; t < sp.n; ++t) out[static_cast<size_t>(base + t * sp.inner)] /= denom;
    }
  }
  Tensor y = make_tensor(x.shape(), std::move(out), x.requires_grad());
  detail::check_finite(y, "softmax");
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, sp]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
              const int64_t base = o * sp.n * sp.inner + in;
              double dot = 0.0;
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto k = static_cast<size_t>(base + t * sp.inner);
                dot += (*gy)[k] * yi->data[k];
              }
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto k = static_cast<size_t>(base + t * sp.inner);
                xi->grad[k] += yi->data[k] * ((*gy)[k] - dot);
              }
            }
          }
        },
        y);
  }
  return y;
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  check_axis(x, axis, "l2_normalize");
  if (eps <= 0.0) throw std::invalid_argument("l2_normalize: eps must be positive");
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<double> out(x.values().size());
  const double* px = x.data();
  bool hit_zero = false;
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.n * sp.inner + in;
      double ss = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) {
        const double v = px[base + t * sp.inner];
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      if (norm == 0.0) hit_zero = true;
      const double r = 1.0 / (norm + eps);
      for (int64_t t = 0; t < sp.n; ++t) {
        const auto k = static_cast<size_t>(base + t * sp.inner);
        out[k] = px[k] * r;
      }
    }
  }
  if (hit_zero) {
    g_zero_norm_flags.fetch_add(1);
    log_note("l2_normalize: zero vector mapped to zero");
  }
  Tensor y = make_tensor(x.shape(), std::move(out), x.requires_grad());
  detail::check_finite(y, "l2_normalize");
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, sp, eps]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
              const int64_t base = o * sp.n * sp.inner + in;
              double ss = 0.0, dot = 0.0;
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto k = static_cast<size_t>(base + t * sp.inner);
                ss += xi->data[k] * xi->data[k];
                dot += xi->data[k] * (*gy)[k];
              }
              const double norm = std::sqrt(ss);
              const double r = 1.0 / (norm + eps);
              const double coef = (norm > 0.0) ? dot / (norm * (norm + eps) * (norm + eps)) : 0.0;
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto k = static_cast<size_t>(base + t * sp.inner);
                xi->grad[k] += r * (*gy)[k] - coef * xi->data[k];
              }
            }
          }
        },
        y);
  }
  return y;
}

namespace blas {

void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + m * n, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
      cr[j] = s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + m * n, 0.0);
  for (int64_t p = 0; p < k; ++p) {
    const double* ar = a + p * m;
    const double* br = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* cr = c + i * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace blas

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool wanted = grad_wanted({&a, &b});
  std::vector<double> out(static_cast<size_t>(m * n));
  blas::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  Tensor y = make_tensor({m, n}, std::move(out), wanted);
  detail::check_finite(y, "matmul");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl ai = a.impl(), bi = b.impl(), yi = y.impl();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    tp->record(
        [ai, bi, yi, m, k, n, ra, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (ra) {
            detail::ensure_grad(*ai);
            std::vector<double> da(static_cast<size_t>(m * k));
            blas::gemm_nt(gy->data(), bi->data.data(), da.data(), m, n, k);
            for (size_t i = 0; i < da.size(); ++i) ai->grad[i] += da[i];
          }
          if (rb) {
            detail::ensure_grad(*bi);
            std::vector<double> db(static_cast<size_t>(k * n));
            blas::gemm_tn(ai->data.data(), gy->data(), db.data(), k, m, n);
            for (size_t i = 0; i < db.size(); ++i) bi->grad[i] += db[i];
          }
        },
        y);
  }
  return y;
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("transpose2d: expected 2-D, got " + shape_str(x.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = x.data()[i * c + j];
  Tensor y = make_tensor({c, r}, std::move(out), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, r, c]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (int64_t j = 0; j < c; ++j)
            for (int64_t i = 0; i < r; ++i) xi->grad[static_cast<size_t>(i * c + j)] += (*gy)[static_cast<size_t>(j * r + i)];
        },
        y);
  }
  return y;
}

namespace {

void im2col(const double* x, int64_t cin, int64_t h, int64_t w, int64_t k, double* col) {
  const int64_t pad = (k - 1) / 2, hw = h * w;
  int64_t row = 0;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t dy = 0; dy < k; ++dy) {
      for (int64_t dx = 0; dx < k; ++dx, ++row) {
        double* dst = col + row * hw;
        const double* src = x + ci * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst + y * w, dst + (y + 1) * w, 0.0);
            continue;
          }
          for (int64_t xo = 0; xo < w; ++xo) {
            const int64_t sx = xo + dx - pad;
            dst[y * w + xo] = (sx < 0 || sx >= w) ? 0.0 : src[sy * w + sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t cin, int64_t h, int64_t w, int64_t k, double* dx) {
  const int64_t pad = (k - 1) / 2, hw = h * w;
  int64_t row = 0;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t dy = 0; dy < k; ++dy) {
      for (int64_t dx_ = 0; dx_ < k; ++dx_, ++row) {
        const double* src = col + row * hw;
        double* dst = dx + ci * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= h) continue;
          for (int64_t xo = 0; xo < w; ++xo) {
            const int64_t sx = xo + dx_ - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + xo];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3 || w.ndim() != 4 || b.ndim() != 1) {
    throw std::invalid_argument("conv2d: expected x CxHxW, w OxIxkxk, b O; got " + shape_str(x.shape()) + ", " +
                                shape_str(w.shape()) + ", " + shape_str(b.shape()));
  }
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw std::invalid_argument("conv2d: weight input channels " + std::to_string(w.dim(1)) +
                                " do not match input channels " + std::to_string(cin));
  }
  if (w.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square and odd");
  if (b.dim(0) != cout) throw std::invalid_argument("conv2d: bias length does not match output channels");

  const int64_t hw = h * wd, kk = cin * k * k;
  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(kk * hw));
  im2col(x.data(), cin, h, wd, k, col->data());
  std::vector<double> out(static_cast<size_t>(cout * hw));
  blas::gemm_nn(w.data(), col->data(), out.data(), cout, kk, hw);
  for (int64_t o = 0; o < cout; ++o) {
    const double bias = b.data()[o];
    double* pr = out.data() + o * hw;
    for (int64_t p = 0; p < hw; ++p) pr[p] += bias;
  }
  const bool wanted = grad_wanted({&x, &w, &b});
  Tensor y = make_tensor({cout, h, wd}, std::move(out), wanted);
  detail::check_finite(y, "conv2d");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl xi = x.impl(), wi = w.impl(), bi = b.impl(), yi = y.impl();
    const bool rx = x.requires_grad(), rw = w.requires_grad(), rb = b.requires_grad();
    tp->record(
        [xi, wi, bi, yi, col, cin, h, wd, cout, k, kk, hw, rx, rw, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (rw) {
            detail::ensure_grad(*wi);
            std::vector<double> dw(static_cast<size_t>(cout * kk));
            blas::gemm_nt(gy->data(), col->data(), dw.data(), cout, hw, kk);
            for (size_t i = 0; i < dw.size(); ++i) wi->grad[i] += dw[i];
          }
          if (rb) {
            detail::ensure_grad(*bi);
            for (int64_t o = 0; o < cout; ++o) {
              double s = 0.0;
              for (int64_t p = 0; p < hw; ++p) s += (*gy)[static_cast<size_t>(o * hw + p)];
              bi->grad[static_cast<size_t>(o)] += s;
            }
          }
          if (rx) {
            detail::ensure_grad(*xi);
            std::vector<double> dcol(static_cast<size_t>(kk * hw));
            blas::gemm_tn(wi->data.data(), gy->data(), dcol.data(), kk, cout, hw);
            col2im_add(dcol.data(), cin, h, wd, k, xi->grad.data());
          }
        },
        y);
  }
  return y;
}

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3 || w.ndim() != 4 || b.ndim() != 1) {
    throw std::invalid_argument("deconv2d: expected x CxHxW, w IxOx2x2, b O; got " + shape_str(x.shape()) + ", " +
                                shape_str(w.shape()) + ", " + shape_str(b.shape()));
  }
  if (w.dim(2) != 2 || w.dim(3) != 2) throw std::invalid_argument("deconv2d: kernel must be 2x2 (stride 2)");
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(1);
  if (w.dim(0) != cin) {
    throw std::invalid_argument("deconv2d: weight input channels " + std::to_string(w.dim(0)) +
                                " do not match input channels " + std::to_string(cin));
  }
  if (b.dim(0) != cout) throw std::invalid_argument("deconv2d: bias length does not match output channels");
  const int64_t oh = 2 * h, ow = 2 * wd;
  std::vector<double> out(static_cast<size_t>(cout * oh * ow));
  for (int64_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * oh * ow, oh * ow, b.data()[o]);
  for (int64_t ci = 0; ci < cin; ++ci) {
    const double* px = x.data() + ci * h * wd;
    for (int64_t o = 0; o < cout; ++o) {
      const double* pw = w.data() + (ci * cout + o) * 4;
      double* py = out.data() + o * oh * ow;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t xo = 0; xo < wd; ++xo) {
          const double v = px[y * wd + xo];
          double* dst = py + (2 * y) * ow + 2 * xo;
          dst[0] += v * pw[0];
          dst[1] += v * pw[1];
          dst[ow] += v * pw[2];
          dst[ow + 1] += v * pw[3];
        }
      }
    }
  }
  const bool wanted = grad_wanted({&x, &w, &b});
  Tensor y = make_tensor({cout, oh, ow}, std::move(out), wanted);
  detail::check_finite(y, "deconv2d");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl xi = x.impl(), wi = w.impl(), bi = b.impl(), yi = y.impl();
    const bool rx = x.requires_grad(), rw = w.requires_grad(), rb = b.requires_grad();
    tp->record(
        [xi, wi, bi, yi, cin, h, wd, cout, oh, ow, rx, rw, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (rb) {
            detail::ensure_grad(*bi);
            for (int64_t o = 0; o < cout; ++o) {
              double s = 0.0;
              for (int64_t p = 0; p < oh * ow; ++p) s += (*gy)[static_cast<size_t>(o * oh * ow + p)];
              bi->grad[static_cast<size_t>(o)] += s;
            }
          }
          if (rx) detail::ensure_grad(*xi);
          if (rw) detail::ensure_grad(*wi);
          for (int64_t ci = 0; ci < cin; ++ci) {
            for (int64_t o = 0; o < cout; ++o) {
              const double* pw = wi->data.data() + (ci * cout + o) * 4;
              const double* pgy = gy->data() + o * oh * ow;
              const double* px = xi->data.data() + ci * h * wd;
              for (int64_t y2 = 0; y2 < h; ++y2) {
                for (int64_t x2 = 0; x2 < wd; ++x2) {
                  const double* gdst = pgy + (2 * y2) * ow + 2 * x2;
                  const double g0 = gdst[0], g1 = gdst[1], g2 = gdst[ow], g3 = gdst[ow + 1];
                  if (rx) {
                    xi->grad[static_cast<size_t>(ci * h * wd + y2 * wd + x2)] +=
                        g0 * pw[0] + g1 * pw[1] + g2 * pw[2] + g3 * pw[3];
                  }
                  if (rw) {
                    const double v = px[y2 * wd + x2];
                    double* gw = wi->grad.data() + (ci * cout + o) * 4;
                    gw[0] += v * g0;
                    gw[1] += v * g1;
                    gw[2] += v * g2;
                    gw[3] += v * g3;
                  }
                }
              }
            }
          }
        },
        y);
  }
  return y;
}

Tensor maxpool2d(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("maxpool2d: expected CxHxW, got " + shape_str(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2d: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const int64_t oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<size_t>(c * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * oh * ow));
  for (int64_t ci = 0; ci < c; ++ci) {
    const double* px = x.data() + ci * h * w;
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xo = 0; xo < ow; ++xo) {
        // first maximal element in row-major block order wins ties
        const int64_t i0 = (2 * y) * w + 2 * xo;
        const int64_t cand[4] = {i0, i0 + 1, i0 + w, i0 + w + 1};
        int64_t best = cand[0];
        for (int j = 1; j < 4; ++j) {
          if (px[cand[j]] > px[best]) best = cand[j];
        }
        out[static_cast<size_t>(ci * oh * ow + y * ow + xo)] = px[best];
        (*argmax)[static_cast<size_t>(ci * oh * ow + y * ow + xo)] = ci * h * w + best;
      }
    }
  }
  Tensor y = make_tensor({c, oh, ow}, std::move(out), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, argmax]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (size_t i = 0; i < gy->size(); ++i) xi->grad[static_cast<size_t>((*argmax)[i])] += (*gy)[i];
        },
        y);
  }
  return y;
}

Tensor layernorm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta, double eps) {
  check_axis(x, axis, "layernorm");
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (gamma.ndim() != 1 || gamma.dim(0) != sp.n || beta.ndim() != 1 || beta.dim(0) != sp.n) {
    throw std::invalid_argument("layernorm: gamma/beta shapes " + shape_str(gamma.shape()) + "/" +
                                shape_str(beta.shape()) + " must be [" + std::to_string(sp.n) + "]");
  }
  const bool wanted = grad_wanted({&x, &gamma, &beta});
  std::vector<double> out(x.values().size());
  const double* px = x.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.n * sp.inner + in;
      double mean = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) mean += px[base + t * sp.inner];
      mean /= static_cast<double>(sp.n);
      double var = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) {
        const double d = px[base + t * sp.inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(sp.n);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int64_t t = 0; t < sp.n; ++t) {
        const auto kidx = static_cast<size_t>(base + t * sp.inner);
        out[kidx] = (px[kidx] - mean) * inv * gamma.data()[t] + beta.data()[t];
      }
    }
  }
  Tensor y = make_tensor(x.shape(), std::move(out), wanted);
  detail::check_finite(y, "layernorm");
  if (Tape* tp = Tape::active(); tp && wanted) {
    Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
    const bool rx = x.requires_grad(), rg = gamma.requires_grad(), rb = beta.requires_grad();
    tp->record(
        [xi, gi, bi, yi, sp, eps, rx, rg, rb]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          if (rx) detail::ensure_grad(*xi);
          if (rg) detail::ensure_grad(*gi);
          if (rb) detail::ensure_grad(*bi);
          std::vector<double> xhat(static_cast<size_t>(sp.n)), gyh(static_cast<size_t>(sp.n));
          for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
              const int64_t base = o * sp.n * sp.inner + in;
              double mean = 0.0;
              for (int64_t t = 0; t < sp.n; ++t) mean += xi->data[static_cast<size_t>(base + t * sp.inner)];
              mean /= static_cast<double>(sp.n);
              double var = 0.0;
              for (int64_t t = 0; t < sp.n; ++t) {
                const double d = xi->data[static_cast<size_t>(base + t * sp.inner)] - mean;
                var += d * d;
              }
              var /= static_cast<double>(sp.n);
              const double inv = 1.0 / std::sqrt(var + eps);
              double mg = 0.0, mgx = 0.0;
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto kidx = static_cast<size_t>(base + t * sp.inner);
                xhat[static_cast<size_t>(t)] = (xi->data[kidx] - mean) * inv;
                gyh[static_cast<size_t>(t)] = (*gy)[kidx] * gi->data[static_cast<size_t>(t)];
                mg += gyh[static_cast<size_t>(t)];
                mgx += gyh[static_cast<size_t>(t)] * xhat[static_cast<size_t>(t)];
              }
              mg /= static_cast<double>(sp.n);
              mgx /= static_cast<double>(sp.n);
              for (int64_t t = 0; t < sp.n; ++t) {
                const auto kidx = static_cast<size_t>(base + t * sp.inner);
                if (rx) xi->grad[kidx] += inv * (gyh[static_cast<size_t>(t)] - mg - xhat[static_cast<size_t>(t)] * mgx);
                if (rg) gi->grad[static_cast<size_t>(t)] += (*gy)[kidx] * xhat[static_cast<size_t>(t)];
                if (rb) bi->grad[static_cast<size_t>(t)] += (*gy)[kidx];
              }
            }
          }
        },
        y);
  }
  return y;
}

namespace {

struct LerpAxis {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

LerpAxis bilinear_axis(int64_t n_in, int64_t n_out) {
  LerpAxis ax;
  ax.lo.resize(static_cast<size_t>(n_out));
  ax.hi.resize(static_cast<size_t>(n_out));
  ax.frac.resize(static_cast<size_t>(n_out));
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (int64_t i = 0; i < n_out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    double fl = std::floor(src);
    double fr = src - fl;
    int64_t lo = static_cast<int64_t>(fl);
    int64_t hi = lo + 1;
    if (lo < 0) lo = 0;
    if (hi < 0) hi = 0;
    if (lo > n_in - 1) lo = n_in - 1;
    if (hi > n_in - 1) hi = n_in - 1;
    ax.lo[static_cast<size_t>(i)] = lo;
    ax.hi[static_cast<size_t>(i)] = hi;
    ax.frac[static_cast<size_t>(i)] = fr;
  }
  return ax;
}

}  // namespace

Tensor bilinear_upsample2x(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("bilinear_upsample2x: expected CxHxW, got " + shape_str(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t oh = 2 * h, ow = 2 * w;
  const LerpAxis ay = bilinear_axis(h, oh), axx = bilinear_axis(w, ow);
  std::vector<double> out(static_cast<size_t>(c * oh * ow));
  for (int64_t ci = 0; ci < c; ++ci) {
    const double* px = x.data() + ci * h * w;
    double* py = out.data() + ci * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      const int64_t y0 = ay.lo[static_cast<size_t>(y)], y1 = ay.hi[static_cast<size_t>(y)];
      const double fy = ay.frac[static_cast<size_t>(y)];
      for (int64_t xo = 0; xo < ow; ++xo) {
        const int64_t x0 = axx.lo[static_cast<size_t>(xo)], x1 = axx.hi[static_cast<size_t>(xo)];
        const double fx = axx.frac[static_cast<size_t>(xo)];
        py[y * ow + xo] = (1.0 - fy) * ((1.0 - fx) * px[y0 * w + x0] + fx * px[y0 * w + x1]) +
                          fy * ((1.0 - fx) * px[y1 * w + x0] + fx * px[y1 * w + x1]);
      }
    }
  }
  Tensor y = make_tensor({c, oh, ow}, std::move(out), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, c, h, w, oh, ow, ay, axx]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (int64_t ci = 0; ci < c; ++ci) {
            double* gx = xi->grad.data() + ci * h * w;
            const double* pgy = gy->data() + ci * oh * ow;
            for (int64_t y2 = 0; y2 < oh; ++y2) {
              const int64_t y0 = ay.lo[static_cast<size_t>(y2)], y1 = ay.hi[static_cast<size_t>(y2)];
              const double fy = ay.frac[static_cast<size_t>(y2)];
              for (int64_t xo = 0; xo < ow; ++xo) {
                const int64_t x0 = axx.lo[static_cast<size_t>(xo)], x1 = axx.hi[static_cast<size_t>(xo)];
                const double fx = axx.frac[static_cast<size_t>(xo)];
                const double g = pgy[y2 * ow + xo];
                gx[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                gx[y0 * w + x1] += (1.0 - fy) * fx * g;
                gx[y1 * w + x0] += fy * (1.0 - fx) * g;
                gx[y1 * w + x1] += fy * fx * g;
              }
            }
          }
        },
        y);
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  std::vector<Tensor> live;
  for (const Tensor& t : parts) {
    if (t.defined()) live.push_back(t);
  }
  if (live.empty()) throw std::invalid_argument("concat: no defined operands");
  if (live.size() == 1) {
    // single live operand: pass through a copy so the graph stays uniform
    return add(live[0], Tensor::zeros(live[0].shape()));
  }
  const Tensor& first = live[0];
  check_axis(first, axis, "concat");
  int64_t axis_total = 0;
  for (size_t i = 0; i < live.size(); ++i) {
    const Tensor& t = live[i];
    if (t.ndim() != first.ndim()) {
      throw std::invalid_argument("concat: operand " + std::to_string(i) + " rank mismatch: " +
                                  shape_str(t.shape()) + " vs " + shape_str(first.shape()));
    }
    for (int d = 0; d < first.ndim(); ++d) {
      if (d != axis && t.dim(d) != first.dim(d)) {
        throw std::invalid_argument("concat: operand " + std::to_string(i) + " extent mismatch at dim " +
                                    std::to_string(d) + ": " + shape_str(t.shape()) + " vs " +
                                    shape_str(first.shape()));
      }
    }
    axis_total += t.dim(axis);
  }
  Shape oshape = first.shape();
  oshape[static_cast<size_t>(axis)] = axis_total;
  const AxisSplit osp = split_axis(oshape, axis);
  std::vector<double> out(static_cast<size_t>(shape_numel(oshape)));
  int64_t axis_off = 0;
  bool wanted = false;
  for (const Tensor& t : live) {
    wanted = wanted || t.requires_grad();
    const int64_t tn = t.dim(axis);
    for (int64_t o = 0; o < osp.outer; ++o) {
      const double* src = t.data() + o * tn * osp.inner;
      double* dst = out.data() + (o * osp.n + axis_off) * osp.inner;
      std::copy(src, src + tn * osp.inner, dst);
    }
    axis_off += tn;
  }
  Tensor y = make_tensor(oshape, std::move(out), wanted);
  if (Tape* tp = Tape::active(); tp && wanted) {
    std::vector<Impl> impls;
    std::vector<int64_t> extents;
    std::vector<bool> reqs;
    for (const Tensor& t : live) {
      impls.push_back(t.impl());
      extents.push_back(t.dim(axis));
      reqs.push_back(t.requires_grad());
    }
    Impl yi = y.impl();
    tp->record(
        [impls, extents, reqs, yi, osp]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          int64_t axis_off = 0;
          for (size_t p = 0; p < impls.size(); ++p) {
            const int64_t tn = extents[p];
            if (reqs[p]) {
              detail::ensure_grad(*impls[p]);
              for (int64_t o = 0; o < osp.outer; ++o) {
                const double* src = gy->data() + (o * osp.n + axis_off) * osp.inner;
                double* dst = impls[p]->grad.data() + o * tn * osp.inner;
                for (int64_t i = 0; i < tn * osp.inner; ++i) dst[i] += src[i];
              }
            }
            axis_off += tn;
          }
        },
        y);
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  check_axis(x, axis, "slice");
  if (start < 0 || len <= 0 || start + len > x.dim(axis)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of bounds for axis extent " + std::to_string(x.dim(axis)));
  }
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = len;
  std::vector<double> out(static_cast<size_t>(shape_numel(oshape)));
  for (int64_t o = 0; o < sp.outer; ++o) {
    const double* src = x.data() + (o * sp.n + start) * sp.inner;
    std::copy(src, src + len * sp.inner, out.data() + o * len * sp.inner);
  }
  Tensor y = make_tensor(oshape, std::move(out), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, sp, start, len]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (int64_t o = 0; o < sp.outer; ++o) {
            const double* src = gy->data() + o * len * sp.inner;
            double* dst = xi->grad.data() + (o * sp.n + start) * sp.inner;
            for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
          }
        },
        y);
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  Tensor y = make_tensor(new_shape, x.values(), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::accumulate_grad(*xi, *gy);
        },
        y);
  }
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  if (x.ndim() != 2) throw std::invalid_argument("gather_rows: expected 2-D, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), d = x.dim(1);
  for (int64_t r : rows) {
    if (r < 0 || r >= n) throw std::invalid_argument("gather_rows: row index " + std::to_string(r) + " out of range");
  }
  std::vector<double> out(rows.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data() + rows[i] * d, d, out.data() + static_cast<int64_t>(i) * d);
  }
  Tensor y = make_tensor({static_cast<int64_t>(rows.size()), d}, std::move(out), x.requires_grad());
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    auto idx = std::make_shared<std::vector<int64_t>>(rows);
    tp->record(
        [xi, yi, idx, d]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (size_t i = 0; i < idx->size(); ++i) {
            const double* src = gy->data() + static_cast<int64_t>(i) * d;
            double* dst = xi->grad.data() + (*idx)[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
          }
        },
        y);
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = make_tensor(Shape{}, {s}, x.requires_grad());
  detail::check_finite(y, "sum_all");
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (auto& g : xi->grad) g += (*gy)[0];
        },
        y);
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = make_tensor(Shape{}, {s * inv}, x.requires_grad());
  detail::check_finite(y, "mean_all");
  if (Tape* tp = Tape::active(); tp && x.requires_grad()) {
    Impl xi = x.impl(), yi = y.impl();
    tp->record(
        [xi, yi, inv]() {
          const auto* gy = out_grad(*yi);
          if (!gy) return;
          detail::ensure_grad(*xi);
          for (auto& g : xi->grad) g += (*gy)[0] * inv;
        },
        y);
  }
  return y;
}

}  // namespace geovit
