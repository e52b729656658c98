#include <algorithm>
#include <limits>

#include "kernels_detail.hpp"

namespace gap::kernels::scalar_impl {

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(std::size_t n, T alpha, T* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void vmul(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
T dot(std::size_t n, const T* a, const T* b) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T reduce_sum(std::size_t n, const T* x) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T reduce_sumsq(std::size_t n, const T* x) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

template <typename T>
void minmax(std::size_t n, const T* x, T* mn, T* mx) {
  T lo = std::numeric_limits<T>::infinity();
  T hi = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  *mn = lo;
  *mx = hi;
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      std::fill(crow, crow + n, T(0));
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (alpha == T(0) || m == 0 || n == 0) return;

  if (!trans_a && !trans_b) {
    // C[i,:] += alpha * A[i,p] * B[p,:]
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = alpha * a[i * lda + p];
        if (av == T(0)) continue;
        const T* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // C[i,:] += alpha * A[p,i] * B[p,:]
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * ldb;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = alpha * a[p * lda + i];
        if (av == T(0)) continue;
        T* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // C[i,j] += alpha * dot(A[i,:], B[j,:])
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      const T* arow = a + i * lda;
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        const T* brow = b + j * ldb;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] += alpha * s;
      }
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

#define GAP_INSTANTIATE_SCALAR(T)                                          \
  template void axpy<T>(std::size_t, T, const T*, T*);                     \
  template void scale<T>(std::size_t, T, T*);                              \
  template void vadd<T>(std::size_t, const T*, const T*, T*);              \
  template void vmul<T>(std::size_t, const T*, const T*, T*);              \
  template T dot<T>(std::size_t, const T*, const T*);                      \
  template T reduce_sum<T>(std::size_t, const T*);                         \
  template T reduce_sumsq<T>(std::size_t, const T*);                       \
  template void minmax<T>(std::size_t, const T*, T*, T*);                  \
  template void relu<T>(std::size_t, const T*, T*);                        \
  template void relu_backward<T>(std::size_t, const T*, const T*, T*);     \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, \
                        T, const T*, std::size_t, const T*, std::size_t, T, \
                        T*, std::size_t);

GAP_INSTANTIATE_SCALAR(float)
GAP_INSTANTIATE_SCALAR(double)

#undef GAP_INSTANTIATE_SCALAR

}  // namespace gap::kernels::scalar_impl
