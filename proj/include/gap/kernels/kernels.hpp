#pragma once

#include <cstddef>

// Data-parallel inner loops used by the model, the losses, and the signal
// code. Every kernel exists as a scalar reference implementation and, on
// x86-64 with AVX2+FMA, as a vectorized variant. Selection happens once at
// startup from cpuid, overridable with set_impl() or the GAP_KERNELS
// environment variable ("scalar" / "avx2"). The two variants are
// equivalence-tested against each other in tests/test_kernels.cpp.

namespace gap::kernels {

enum class Impl { kAuto, kScalar, kAvx2 };

// Returns false if the requested impl is unavailable on this machine.
bool set_impl(Impl impl);
Impl active_impl();
const char* active_impl_name();
bool avx2_supported();

// y[i] += alpha * x[i]
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

// x[i] *= alpha
template <typename T>
void scale(std::size_t n, T alpha, T* x);

// out[i] = a[i] + b[i]
template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out);

// out[i] = a[i] * b[i]
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

// y[i] = max(x[i], 0)
template <typename T>
void relu(std::size_t n, const T* x, T* y);

// dx[i] = x[i] > 0 ? dy[i] : 0   (overwrites dx)
template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx);

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, with op(A) m-by-k
// and op(B) k-by-n. lda/ldb/ldc are leading (row) strides of the stored
// matrices, i.e. of A/B before transposition.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace gap::kernels
