#include "fairft/kernels/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace fairft::kernels::neon {
namespace {

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const float64x2_t va = vdupq_n_f64(aip);
      const double* bp = b + p * n;
      std::size_t j = 0;
      for (; j + 2 <= n; j += 2)
        vst1q_f64(ci + j, vaddq_f64(vld1q_f64(ci + j), vmulq_f64(va, vld1q_f64(bp + j))));
      for (; j < n; ++j) ci[j] = ci[j] + aip * bp[j];
    }
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void add(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void square_acc(const double* x, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vx = vld1q_f64(x + i);
    vst1q_f64(acc + i, vaddq_f64(vld1q_f64(acc + i), vmulq_f64(vx, vx)));
  }
  for (; i < n; ++i) acc[i] = acc[i] + x[i] * x[i];
}

void masked_sgd(double lr, const double* mask, const double* grad, double* theta, std::size_t n) {
  const float64x2_t vlr = vdupq_n_f64(lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t step = vmulq_f64(vlr, vmulq_f64(vld1q_f64(mask + i), vld1q_f64(grad + i)));
    vst1q_f64(theta + i, vsubq_f64(vld1q_f64(theta + i), step));
  }
  for (; i < n; ++i) theta[i] = theta[i] - lr * (mask[i] * grad[i]);
}

void relu(const double* x, double* out, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vx = vld1q_f64(x + i);
    vst1q_f64(out + i, vbslq_f64(vcgtq_f64(vx, zero), vx, zero));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_acc(const double* x, const double* gy, double* gx, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t g = vbslq_f64(vcgtq_f64(vld1q_f64(x + i), zero), vld1q_f64(gy + i), zero);
    vst1q_f64(gx + i, vaddq_f64(vld1q_f64(gx + i), g));
  }
  for (; i < n; ++i) gx[i] = gx[i] + (x[i] > 0.0 ? gy[i] : 0.0);
}

}  // namespace

const KernelTable kTable{gemm_acc, axpy, add, mul, square_acc, masked_sgd, relu, relu_backward_acc};

}  // namespace fairft::kernels::neon

#endif
