#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "fairft/error.hpp"
#include "fairft/kernels/kernels.hpp"
#include "support.hpp"

using namespace fairft;
using namespace fairft::kernels;
using testing::same_bits;
using testing::uniform;

namespace {

std::vector<Backend> accelerated() {
  std::vector<Backend> out;
  for (Backend b : {Backend::avx2, Backend::neon})
    if (backend_supported(b)) out.push_back(b);
  return out;
}

// Sprinkle signed zeros, NaN-free extremes and subnormals into the inputs.
void salt(std::vector<double>& v, std::mt19937_64& rng) {
  const double specials[] = {0.0, -0.0, 1e-310, -1e-310, 1e300, -1e300, 1.0, -1.0};
  std::uniform_int_distribution<std::size_t> pick(0, 7);
  for (std::size_t i = 0; i < v.size(); i += 5) v[i] = specials[pick(rng)];
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar backend is always available") {
    CHECK(backend_supported(Backend::scalar));
    CHECK(backend_supported(detect_backend()));
  }

  TEST_CASE("unsupported backend is refused") {
    for (Backend b : {Backend::avx2, Backend::neon})
      if (!backend_supported(b)) CHECK_THROWS_AS(set_backend(b), ContractError);
  }

  TEST_CASE("elementwise kernels agree bitwise with the scalar reference") {
    std::mt19937_64 rng(11);
    const Backend saved = active_backend();
    for (Backend b : accelerated()) {
      const KernelTable& ref = table(Backend::scalar);
      const KernelTable& alt = table(b);
      for (std::size_t n = 0; n < 70; ++n) {
        auto x = uniform(rng, n, -3, 3), y = uniform(rng, n, -3, 3), m = uniform(rng, n, 0, 1);
        salt(x, rng);
        const double alpha = std::uniform_real_distribution<double>(-2, 2)(rng);

        std::vector<double> o1(n), o2(n);
        ref.add(x.data(), y.data(), o1.data(), n);
        alt.add(x.data(), y.data(), o2.data(), n);
        CHECK(same_bits(o1, o2));

        ref.mul(x.data(), y.data(), o1.data(), n);
        alt.mul(x.data(), y.data(), o2.data(), n);
        CHECK(same_bits(o1, o2));

        ref.relu(x.data(), o1.data(), n);
        alt.relu(x.data(), o2.data(), n);
        CHECK(same_bits(o1, o2));

        auto a1 = y, a2 = y;
        ref.axpy(alpha, x.data(), a1.data(), n);
        alt.axpy(alpha, x.data(), a2.data(), n);
        CHECK(same_bits(a1, a2));

        a1 = y, a2 = y;
        ref.square_acc(x.data(), a1.data(), n);
        alt.square_acc(x.data(), a2.data(), n);
        CHECK(same_bits(a1, a2));

        a1 = y, a2 = y;
        ref.masked_sgd(alpha, m.data(), x.data(), a1.data(), n);
        alt.masked_sgd(alpha, m.data(), x.data(), a2.data(), n);
        CHECK(same_bits(a1, a2));

        a1 = y, a2 = y;
        ref.relu_backward_acc(x.data(), m.data(), a1.data(), n);
        alt.relu_backward_acc(x.data(), m.data(), a2.data(), n);
        CHECK(same_bits(a1, a2));
      }
    }
    set_backend(saved);
  }

  TEST_CASE("relu treats negative zero and NaN the same on every backend") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> x = {-0.0, nan, 2.0, -1.0, 0.0, nan, -0.0, 3.0, 1e-320};
    for (Backend b : accelerated()) {
      std::vector<double> o1(x.size()), o2(x.size());
      table(Backend::scalar).relu(x.data(), o1.data(), x.size());
      table(b).relu(x.data(), o2.data(), x.size());
      CHECK(same_bits(o1, o2));
    }
    std::vector<double> o(x.size());
    table(Backend::scalar).relu(x.data(), o.data(), x.size());
    CHECK(!std::signbit(o[0]));
    CHECK(o[1] == 0.0);
  }

  TEST_CASE("gemm agrees bitwise across backends for ragged shapes") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> dim(1, 19);
    for (Backend b : accelerated()) {
      for (int rep = 0; rep < 200; ++rep) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = uniform(rng, m * k, -2, 2), bb = uniform(rng, k * n, -2, 2), c = uniform(rng, m * n, -1, 1);
        auto c1 = c, c2 = c;
        table(Backend::scalar).gemm_acc(a.data(), bb.data(), c1.data(), m, k, n);
        table(b).gemm_acc(a.data(), bb.data(), c2.data(), m, k, n);
        CHECK(same_bits(c1, c2));
      }
    }
  }

  TEST_CASE("gemm matches a naive triple loop") {
    std::mt19937_64 rng(9);
    const std::size_t m = 3, k = 4, n = 5;
    auto a = uniform(rng, m * k, -1, 1), b = uniform(rng, k * n, -1, 1);
    std::vector<double> c(m * n, 0.0);
    gemm_acc(a, b, c, m, k, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
        CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
      }
  }

  TEST_CASE("masked sgd arithmetic") {
    std::vector<double> theta = {1.0, 1.0, 1.0}, grad = {0.5, 0.5, 0.5}, mask = {1.0, 0.5, 0.0};
    masked_sgd(0.1, mask, grad, theta);
    CHECK(theta[0] == doctest::Approx(0.95));
    CHECK(theta[1] == doctest::Approx(0.975));
    CHECK(theta[2] == 1.0);
  }

  TEST_CASE("wrappers reject length mismatches") {
    std::vector<double> a(3), b(4);
    CHECK_THROWS_AS(axpy(1.0, a, b), ContractError);
    CHECK_THROWS_AS(add(a, a, b), ContractError);
    CHECK_THROWS_AS(gemm_acc(a, a, b, 2, 2, 2), ContractError);
  }

  TEST_CASE("set_backend switches the dispatch target") {
    const Backend saved = active_backend();
    set_backend(Backend::scalar);
    CHECK(active_backend() == Backend::scalar);
    set_backend(saved);
    CHECK(active_backend() == saved);
  }
}
