#include "fairft/kernels/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

// Compiled for the baseline ISA; AVX2 is enabled per function so the binary
// still runs on CPUs without it (dispatch never selects this table there).
#define FAIRFT_AVX2 __attribute__((target("avx2")))

namespace fairft::kernels::avx2 {
namespace {

FAIRFT_AVX2 void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d va = _mm256_set1_pd(aip);
      const double* bp = b + p * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d vc = _mm256_loadu_pd(ci + j);
        vc = _mm256_add_pd(vc, _mm256_mul_pd(va, _mm256_loadu_pd(bp + j)));
        _mm256_storeu_pd(ci + j, vc);
      }
      for (; j < n; ++j) ci[j] = ci[j] + aip * bp[j];
    }
  }
}

FAIRFT_AVX2 void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

FAIRFT_AVX2 void add(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

FAIRFT_AVX2 void mul(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

FAIRFT_AVX2 void square_acc(const double* x, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), _mm256_mul_pd(vx, vx)));
  }
  for (; i < n; ++i) acc[i] = acc[i] + x[i] * x[i];
}

FAIRFT_AVX2 void masked_sgd(double lr, const double* mask, const double* grad, double* theta,
                            std::size_t n) {
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d step =
        _mm256_mul_pd(vlr, _mm256_mul_pd(_mm256_loadu_pd(mask + i), _mm256_loadu_pd(grad + i)));
    _mm256_storeu_pd(theta + i, _mm256_sub_pd(_mm256_loadu_pd(theta + i), step));
  }
  for (; i < n; ++i) theta[i] = theta[i] - lr * (mask[i] * grad[i]);
}

FAIRFT_AVX2 void relu(const double* x, double* out, std::size_t n) {
  // max_pd(x, 0) returns the second operand for NaN and for signed zeros,
  // matching the scalar `x > 0 ? x : 0`.
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

FAIRFT_AVX2 void relu_backward_acc(const double* x, const double* gy, double* gx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(keep, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), g));
  }
  for (; i < n; ++i) gx[i] = gx[i] + (x[i] > 0.0 ? gy[i] : 0.0);
}

}  // namespace

const KernelTable kTable{gemm_acc, axpy, add, mul, square_acc, masked_sgd, relu, relu_backward_acc};

}  // namespace fairft::kernels::avx2

#endif
