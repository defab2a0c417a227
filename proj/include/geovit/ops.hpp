#pragma once

#include <vector>

#include "geovit/tensor.hpp"

namespace geovit {

// Pointwise kernels. Every kernel validates its inputs, checks its output for
// non-finite values, and records a backward step on the active tape when any
// input requires gradients.

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor sigmoid(const Tensor& x);

/// Elementwise sum with numpy-style trailing-dimension broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise product, same shapes only.
Tensor mul(const Tensor& a, const Tensor& b);
/// x * alpha for a runtime scalar alpha.
Tensor scale(const Tensor& x, double alpha);

/// Numerically stable softmax along `axis` (max-subtraction).
Tensor softmax(const Tensor& x, int axis);

/// x / (||x|| + eps) along `axis`; zero vectors map to zero and are flagged
/// through the diagnostic log.
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);

/// 2-D matrix product, a: MxK, b: KxN.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);

/// Same-padding stride-1 convolution. x: C_in x H x W, w: C_out x C_in x k x k
/// (k odd), b: C_out.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Transposed convolution, kernel 2 stride 2; doubles both spatial extents.
/// x: C_in x H x W, w: C_in x C_out x 2 x 2, b: C_out.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b);

/// 2x2 window, stride 2; spatial extents must be even. Gradient flows to the
/// first maximal element in row-major block order.
Tensor maxpool2d(const Tensor& x);

/// Normalizes along `axis` (population variance), then applies gamma/beta of
/// that axis' extent.
Tensor layernorm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// 2x bilinear upsampling, align-corners=false convention.
Tensor bilinear_upsample2x(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape new_shape);

/// Row gather on a 2-D tensor; backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Count of l2_normalize calls that hit at least one zero vector, plus a hook
/// for routing diagnostic notes somewhere other than stderr.
uint64_t zero_norm_flag_count();
void set_log_handler(void (*handler)(const char* msg));

/// Raw buffer matmuls shared by conv/attention internals. C must not alias A/B.
namespace blas {
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);   // C = A B
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);   // C = A B^T, b is n x k
void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);   // C = A^T B, a is k x m
}  // namespace blas

}  // namespace geovit
