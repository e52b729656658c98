#pragma once

#include <cstddef>

// Internal: per-variant entry points. The AVX2 set lives in a translation
// unit compiled with -mavx2 -mfma; only the dispatcher may call it, and only
// after the cpuid check.

namespace gap::kernels::scalar_impl {

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
void scale(std::size_t n, T alpha, T* x);
template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out);
template <typename T>
void vmul(std::size_t n, const T* a, const T* b, T* out);
template <typename T>
T dot(std::size_t n, const T* a, const T* b);
template <typename T>
T reduce_sum(std::size_t n, const T* x);
template <typename T>
T reduce_sumsq(std::size_t n, const T* x);
template <typename T>
void minmax(std::size_t n, const T* x, T* mn, T* mx);
template <typename T>
void relu(std::size_t n, const T* x, T* y);
template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx);
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace gap::kernels::scalar_impl

#if defined(__x86_64__) || defined(_M_X64)
#define GAP_HAVE_AVX2_TU 1

namespace gap::kernels::avx2_impl {

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
void scale(std::size_t n, T alpha, T* x);
template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out);
template <typename T>
void vmul(std::size_t n, const T* a, const T* b, T* out);
template <typename T>
T dot(std::size_t n, const T* a, const T* b);
template <typename T>
T reduce_sum(std::size_t n, const T* x);
template <typename T>
T reduce_sumsq(std::size_t n, const T* x);
template <typename T>
void minmax(std::size_t n, const T* x, T* mn, T* mx);
template <typename T>
void relu(std::size_t n, const T* x, T* y);
template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx);
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace gap::kernels::avx2_impl

#else
#define GAP_HAVE_AVX2_TU 0
#endif
