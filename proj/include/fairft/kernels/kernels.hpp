#pragma once

// Dense inner loops used by the autodiff engine and the optimizers.
//
// Every kernel has a scalar reference implementation and optional AVX2 / NEON
// variants. Variants perform exactly the same IEEE operations per element in
// the same order (no FMA, no reordered reductions), so every backend produces
// bit-identical results. Transcendentals (exp, log, tanh) stay in scalar code.

#include <cstddef>
#include <span>
#include <string_view>

namespace fairft::kernels {

enum class Backend { scalar, avx2, neon };

std::string_view to_string(Backend b);

// Best backend supported by the running CPU.
Backend detect_backend();

// Backend used by the dispatching entry points below. Defaults to
// detect_backend(); FAIRFT_KERNELS=scalar in the environment forces scalar.
Backend active_backend();
void set_backend(Backend b);  // throws ContractError if unsupported here
bool backend_supported(Backend b);

// Kernel table; one instance per backend.
struct KernelTable {
  // c[m x n] += a[m x k] * b[k x n], row-major, accumulating over k in order.
  void (*gemm_acc)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = x + y
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  // out = x * y
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // acc += x * x
  void (*square_acc)(const double* x, double* acc, std::size_t n);
  // theta -= lr * (mask * grad)
  void (*masked_sgd)(double lr, const double* mask, const double* grad, double* theta,
                     std::size_t n);
  // out = max(x, 0)
  void (*relu)(const double* x, double* out, std::size_t n);
  // gx += x > 0 ? gy : 0
  void (*relu_backward_acc)(const double* x, const double* gy, double* gx, std::size_t n);
};

const KernelTable& table(Backend b);

namespace scalar {
extern const KernelTable kTable;
}
#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
extern const KernelTable kTable;
}
#endif
#if defined(__aarch64__)
namespace neon {
extern const KernelTable kTable;
}
#endif

// Dispatching wrappers over std::span.
void gemm_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
              std::size_t m, std::size_t k, std::size_t n);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void add(std::span<const double> x, std::span<const double> y, std::span<double> out);
void mul(std::span<const double> x, std::span<const double> y, std::span<double> out);
void square_acc(std::span<const double> x, std::span<double> acc);
void masked_sgd(double lr, std::span<const double> mask, std::span<const double> grad,
                std::span<double> theta);
void relu(std::span<const double> x, std::span<double> out);
void relu_backward_acc(std::span<const double> x, std::span<const double> gy,
                       std::span<double> gx);

}  // namespace fairft::kernels
