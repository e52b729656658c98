// AVX2 + FMA variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here may be called unless cpuid reported support.

#include "kernels_detail.hpp"

#if GAP_HAVE_AVX2_TU

#include <immintrin.h>

#include <algorithm>
#include <limits>

namespace gap::kernels::avx2_impl {

namespace {

// Minimal register abstraction so float/double kernels share one body.
template <typename T>
struct V;

template <>
struct V<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
  static reg min(reg a, reg b) { return _mm256_min_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
  }
};

template <>
struct V<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
  static reg min(reg a, reg b) { return _mm256_min_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
  }
};

}  // namespace

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using W = V<T>;
  const auto va = W::set1(alpha);
  std::size_t i = 0;
  for (; i + 2 * W::width <= n; i += 2 * W::width) {
    W::store(y + i, W::fma(va, W::load(x + i), W::load(y + i)));
    W::store(y + i + W::width,
             W::fma(va, W::load(x + i + W::width), W::load(y + i + W::width)));
  }
  for (; i + W::width <= n; i += W::width)
    W::store(y + i, W::fma(va, W::load(x + i), W::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(std::size_t n, T alpha, T* x) {
  using W = V<T>;
  const auto va = W::set1(alpha);
  std::size_t i = 0;
  for (; i + W::width <= n; i += W::width)
    W::store(x + i, W::mul(va, W::load(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out) {
  using W = V<T>;
  std::size_t i = 0;
  for (; i + W::width <= n; i += W::width)
    W::store(out + i, W::add(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void vmul(std::size_t n, const T* a, const T* b, T* out) {
  using W = V<T>;
  std::size_t i = 0;
  for (; i + W::width <= n; i += W::width)
    W::store(out + i, W::mul(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
T dot(std::size_t n, const T* a, const T* b) {
  using W = V<T>;
  auto s0 = W::zero();
  auto s1 = W::zero();
  auto s2 = W::zero();
  auto s3 = W::zero();
  std::size_t i = 0;
  for (; i + 4 * W::width <= n; i += 4 * W::width) {
    s0 = W::fma(W::load(a + i), W::load(b + i), s0);
    s1 = W::fma(W::load(a + i + W::width), W::load(b + i + W::width), s1);
    s2 = W::fma(W::load(a + i + 2 * W::width), W::load(b + i + 2 * W::width), s2);
    s3 = W::fma(W::load(a + i + 3 * W::width), W::load(b + i + 3 * W::width), s3);
  }
  for (; i + W::width <= n; i += W::width)
    s0 = W::fma(W::load(a + i), W::load(b + i), s0);
  T s = W::hsum(W::add(W::add(s0, s1), W::add(s2, s3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T reduce_sum(std::size_t n, const T* x) {
  using W = V<T>;
  auto s0 = W::zero();
  auto s1 = W::zero();
  std::size_t i = 0;
  for (; i + 2 * W::width <= n; i += 2 * W::width) {
    s0 = W::add(s0, W::load(x + i));
    s1 = W::add(s1, W::load(x + i + W::width));
  }
  for (; i + W::width <= n; i += W::width) s0 = W::add(s0, W::load(x + i));
  T s = W::hsum(W::add(s0, s1));
  for (; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T reduce_sumsq(std::size_t n, const T* x) {
  using W = V<T>;
  auto s0 = W::zero();
  auto s1 = W::zero();
  std::size_t i = 0;
  for (; i + 2 * W::width <= n; i += 2 * W::width) {
    const auto v0 = W::load(x + i);
    const auto v1 = W::load(x + i + W::width);
    s0 = W::fma(v0, v0, s0);
    s1 = W::fma(v1, v1, s1);
  }
  for (; i + W::width <= n; i += W::width) {
    const auto v = W::load(x + i);
    s0 = W::fma(v, v, s0);
  }
  T s = W::hsum(W::add(s0, s1));
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

template <typename T>
void minmax(std::size_t n, const T* x, T* mn, T* mx) {
  using W = V<T>;
  T lo = std::numeric_limits<T>::infinity();
  T hi = -std::numeric_limits<T>::infinity();
  std::size_t i = 0;
  if (n >= W::width) {
    auto vlo = W::load(x);
    auto vhi = vlo;
    i = W::width;
    for (; i + W::width <= n; i += W::width) {
      const auto v = W::load(x + i);
      vlo = W::min(vlo, v);
      vhi = W::max(vhi, v);
    }
    alignas(32) T tmp[W::width];
    W::store(tmp, vlo);
    for (std::size_t j = 0; j < W::width; ++j) lo = std::min(lo, tmp[j]);
    W::store(tmp, vhi);
    for (std::size_t j = 0; j < W::width; ++j) hi = std::max(hi, tmp[j]);
  }
  for (; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  *mn = lo;
  *mx = hi;
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
  using W = V<T>;
  const auto z = W::zero();
  std::size_t i = 0;
  for (; i + W::width <= n; i += W::width)
    W::store(y + i, W::max(W::load(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  using W = V<T>;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      std::fill(crow, crow + n, T(0));
    } else if (beta != T(1)) {
      scale(n, beta, crow);
    }
  }
  if (alpha == T(0) || m == 0 || n == 0) return;

  if ((!trans_a && !trans_b) || (trans_a && !trans_b)) {
    // axpy form: C[i,:] += alpha * op(A)[i,p] * B[p,:], unrolled two rows of
    // B at a time to keep both FMA ports busy.
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      std::size_t p = 0;
      for (; p + 2 <= k; p += 2) {
        const T a0 = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
        const T a1 = alpha * (trans_a ? a[(p + 1) * lda + i] : a[i * lda + p + 1]);
        const T* b0 = b + p * ldb;
        const T* b1 = b + (p + 1) * ldb;
        const auto va0 = W::set1(a0);
        const auto va1 = W::set1(a1);
        std::size_t j = 0;
        for (; j + W::width <= n; j += W::width) {
          auto acc = W::load(crow + j);
          acc = W::fma(va0, W::load(b0 + j), acc);
          acc = W::fma(va1, W::load(b1 + j), acc);
          W::store(crow + j, acc);
        }
        for (; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j];
      }
      for (; p < k; ++p) {
        const T av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
        axpy(n, av, b + p * ldb, crow);
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      const T* arow = a + i * lda;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] += alpha * dot(k, arow, b + j * ldb);
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * lda + i] * b[j * ldb + p];
        crow[j] += alpha * s;
      }
    }
  }
}

#define GAP_INSTANTIATE_AVX2(T)                                             \
  template void axpy<T>(std::size_t, T, const T*, T*);                      \
  template void scale<T>(std::size_t, T, T*);                               \
  template void vadd<T>(std::size_t, const T*, const T*, T*);               \
  template void vmul<T>(std::size_t, const T*, const T*, T*);               \
  template T dot<T>(std::size_t, const T*, const T*);                       \
  template T reduce_sum<T>(std::size_t, const T*);                          \
  template T reduce_sumsq<T>(std::size_t, const T*);                        \
  template void minmax<T>(std::size_t, const T*, T*, T*);                   \
  template void relu<T>(std::size_t, const T*, T*);                         \
  template void relu_backward<T>(std::size_t, const T*, const T*, T*);      \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t,  \
                        T, const T*, std::size_t, const T*, std::size_t, T, \
                        T*, std::size_t);

GAP_INSTANTIATE_AVX2(float)
GAP_INSTANTIATE_AVX2(double)

#undef GAP_INSTANTIATE_AVX2

}  // namespace gap::kernels::avx2_impl

#endif  // GAP_HAVE_AVX2_TU
