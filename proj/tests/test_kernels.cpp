#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "gap/common.hpp"
#include "gap/kernels/kernels.hpp"

using namespace gap;
namespace k = gap::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return v;
}

// Naive reference used to cross-check both dispatch variants.
template <typename T>
void ref_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk,
              T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb,
              T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < kk; ++p) {
        const T av = ta ? a[p * lda + i] : a[i * lda + p];
        const T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        s += av * bv;
      }
      c[i * ldc + j] = alpha * s + beta * c[i * ldc + j];
    }
}

template <typename T>
void check_all_kernels(double tol) {
  Rng rng(42);
  const std::size_t n = 1037;  // odd length exercises the tail loops
  auto x = random_vec<T>(rng, n);
  auto y = random_vec<T>(rng, n);

  for (auto impl : {k::Impl::kScalar, k::Impl::kAvx2}) {
    if (impl == k::Impl::kAvx2 && !k::avx2_supported()) continue;
    REQUIRE(k::set_impl(impl));

    auto yy = y;
    k::axpy<T>(n, T(0.5), x.data(), yy.data());
    for (std::size_t i = 0; i < n; ++i)
      CHECK(yy[i] == doctest::Approx(y[i] + 0.5 * x[i]).epsilon(tol));

    CHECK(static_cast<double>(k::dot<T>(n, x.data(), y.data())) ==
          doctest::Approx([&] {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
              s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
            return s;
          }()).epsilon(tol));

    T mn, mx;
    k::minmax<T>(n, x.data(), &mn, &mx);
    CHECK(mn == *std::min_element(x.begin(), x.end()));
    CHECK(mx == *std::max_element(x.begin(), x.end()));

    std::vector<T> r(n);
    k::relu<T>(n, x.data(), r.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(r[i] == std::max(x[i], T(0)));
  }
  k::set_impl(k::Impl::kAuto);
}

}  // namespace

TEST_CASE("elementwise and reduction kernels agree across variants") {
  check_all_kernels<float>(1e-4);
  check_all_kernels<double>(1e-10);
}

TEST_CASE("gemm matches the naive reference for every transpose combination") {
  Rng rng(7);
  const std::size_t m = 13, n = 29, kk = 17;
  for (auto impl : {k::Impl::kScalar, k::Impl::kAvx2}) {
    if (impl == k::Impl::kAvx2 && !k::avx2_supported()) continue;
    REQUIRE(k::set_impl(impl));
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        const std::size_t lda = ta ? m : kk;
        const std::size_t ldb = tb ? kk : n;
        auto a = random_vec<double>(rng, (ta ? kk : m) * lda);
        auto b = random_vec<double>(rng, (tb ? n : kk) * ldb);
        auto c0 = random_vec<double>(rng, m * n);
        auto c1 = c0;
        ref_gemm<double>(ta, tb, m, n, kk, 1.3, a.data(), lda, b.data(), ldb,
                         0.7, c0.data(), n);
        k::gemm<double>(ta, tb, m, n, kk, 1.3, a.data(), lda, b.data(), ldb,
                        0.7, c1.data(), n);
        for (std::size_t i = 0; i < m * n; ++i)
          CHECK(c1[i] == doctest::Approx(c0[i]).epsilon(1e-10));
      }
    }
  }
  k::set_impl(k::Impl::kAuto);
}

TEST_CASE("scalar and avx2 gemm agree on large shapes") {
  if (!k::avx2_supported()) return;
  Rng rng(11);
  const std::size_t m = 32, n = 512, kk = 108;
  auto a = random_vec<double>(rng, m * kk);
  auto b = random_vec<double>(rng, kk * n);
  std::vector<double> c_s(m * n, 0.0), c_v(m * n, 0.0);

  REQUIRE(k::set_impl(k::Impl::kScalar));
  k::gemm<double>(false, false, m, n, kk, 1.0, a.data(), kk, b.data(), n, 0.0,
                  c_s.data(), n);
  REQUIRE(k::set_impl(k::Impl::kAvx2));
  k::gemm<double>(false, false, m, n, kk, 1.0, a.data(), kk, b.data(), n, 0.0,
                  c_v.data(), n);
  for (std::size_t i = 0; i < m * n; ++i)
    CHECK(c_v[i] == doctest::Approx(c_s[i]).epsilon(1e-11));
  k::set_impl(k::Impl::kAuto);
}

TEST_CASE("dispatch reports an implementation") {
  CHECK((std::string(k::active_impl_name()) == "avx2" ||
         std::string(k::active_impl_name()) == "scalar"));
}
