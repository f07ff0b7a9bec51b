#include <atomic>
#include <cstdlib>
#include <string>

#include "fairft/error.hpp"
#include "fairft/kernels/kernels.hpp"

namespace fairft::kernels {
namespace {

Backend initial_backend() {
  if (const char* env = std::getenv("FAIRFT_KERNELS"); env && std::string(env) == "scalar")
    return Backend::scalar;
  return detect_backend();
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

void require_same(std::size_t a, std::size_t b, const char* op) {
  if (a != b)
    throw ContractError(std::string("kernel ") + op + ": length mismatch " + std::to_string(a) +
                        " vs " + std::to_string(b));
}

}  // namespace

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend detect_backend() {
  if (backend_supported(Backend::avx2)) return Backend::avx2;
  if (backend_supported(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

Backend active_backend() { return active().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (!backend_supported(b))
    throw ContractError("kernel backend " + std::string(to_string(b)) + " not supported on this CPU");
  active().store(b, std::memory_order_relaxed);
}

const KernelTable& table(Backend b) {
  switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::avx2: return avx2::kTable;
#endif
#if defined(__aarch64__)
    case Backend::neon: return neon::kTable;
#endif
    default: return scalar::kTable;
  }
}

void gemm_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
              std::size_t m, std::size_t k, std::size_t n) {
  require_same(a.size(), m * k, "gemm_acc(a)");
  require_same(b.size(), k * n, "gemm_acc(b)");
  require_same(c.size(), m * n, "gemm_acc(c)");
  table(active_backend()).gemm_acc(a.data(), b.data(), c.data(), m, k, n);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same(x.size(), y.size(), "axpy");
  table(active_backend()).axpy(alpha, x.data(), y.data(), x.size());
}

void add(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  require_same(x.size(), y.size(), "add");
  require_same(x.size(), out.size(), "add");
  table(active_backend()).add(x.data(), y.data(), out.data(), x.size());
}

void mul(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  require_same(x.size(), y.size(), "mul");
  require_same(x.size(), out.size(), "mul");
  table(active_backend()).mul(x.data(), y.data(), out.data(), x.size());
}

void square_acc(std::span<const double> x, std::span<double> acc) {
  require_same(x.size(), acc.size(), "square_acc");
  table(active_backend()).square_acc(x.data(), acc.data(), x.size());
}

void masked_sgd(double lr, std::span<const double> mask, std::span<const double> grad,
                std::span<double> theta) {
  require_same(mask.size(), theta.size(), "masked_sgd");
  require_same(grad.size(), theta.size(), "masked_sgd");
  table(active_backend()).masked_sgd(lr, mask.data(), grad.data(), theta.data(), theta.size());
}

void relu(std::span<const double> x, std::span<double> out) {
  require_same(x.size(), out.size(), "relu");
  table(active_backend()).relu(x.data(), out.data(), x.size());
}

void relu_backward_acc(std::span<const double> x, std::span<const double> gy,
                       std::span<double> gx) {
  require_same(x.size(), gy.size(), "relu_backward_acc");
  require_same(x.size(), gx.size(), "relu_backward_acc");
  table(active_backend()).relu_backward_acc(x.data(), gy.data(), gx.data(), x.size());
}

}  // namespace fairft::kernels
