#include "gap/kernels/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "kernels_detail.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <cpuid.h>
#endif

namespace gap::kernels {

namespace {

bool detect_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
  const bool avx2 = (ebx & (1u << 5)) != 0;
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  const bool fma = (ecx & (1u << 12)) != 0;
  return avx2 && fma;
#else
  return false;
#endif
}

Impl initial_impl() {
  if (const char* env = std::getenv("GAP_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Impl::kScalar;
    if (std::strcmp(env, "avx2") == 0 && detect_avx2()) return Impl::kAvx2;
  }
  return detect_avx2() ? Impl::kAvx2 : Impl::kScalar;
}

std::atomic<Impl> g_impl{initial_impl()};

inline bool use_avx2() { return g_impl.load(std::memory_order_relaxed) == Impl::kAvx2; }

}  // namespace

bool avx2_supported() {
  static const bool ok = detect_avx2();
  return ok;
}

bool set_impl(Impl impl) {
  if (impl == Impl::kAuto) impl = detect_avx2() ? Impl::kAvx2 : Impl::kScalar;
  if (impl == Impl::kAvx2 && !avx2_supported()) return false;
  g_impl.store(impl, std::memory_order_relaxed);
  return true;
}

Impl active_impl() { return g_impl.load(std::memory_order_relaxed); }

const char* active_impl_name() {
  return active_impl() == Impl::kAvx2 ? "avx2" : "scalar";
}

#if GAP_HAVE_AVX2_TU
#define GAP_DISPATCH(fn, ...)                            \
  if (use_avx2()) return avx2_impl::fn(__VA_ARGS__);     \
  return scalar_impl::fn(__VA_ARGS__)
#else
#define GAP_DISPATCH(fn, ...) return scalar_impl::fn(__VA_ARGS__)
#endif

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  GAP_DISPATCH(axpy, n, alpha, x, y);
}

template <typename T>
void scale(std::size_t n, T alpha, T* x) {
  GAP_DISPATCH(scale, n, alpha, x);
}

template <typename T>
void vadd(std::size_t n, const T* a, const T* b, T* out) {
  GAP_DISPATCH(vadd, n, a, b, out);
}

template <typename T>
void vmul(std::size_t n, const T* a, const T* b, T* out) {
  GAP_DISPATCH(vmul, n, a, b, out);
}

template <typename T>
T dot(std::size_t n, const T* a, const T* b) {
  GAP_DISPATCH(dot, n, a, b);
}

template <typename T>
T reduce_sum(std::size_t n, const T* x) {
  GAP_DISPATCH(reduce_sum, n, x);
}

template <typename T>
T reduce_sumsq(std::size_t n, const T* x) {
  GAP_DISPATCH(reduce_sumsq, n, x);
}

template <typename T>
void minmax(std::size_t n, const T* x, T* mn, T* mx) {
  GAP_DISPATCH(minmax, n, x, mn, mx);
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
  GAP_DISPATCH(relu, n, x, y);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  GAP_DISPATCH(relu_backward, n, x, dy, dx);
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  GAP_DISPATCH(gemm, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
               ldc);
}

#undef GAP_DISPATCH

#define GAP_INSTANTIATE_DISPATCH(T)                                         \
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

GAP_INSTANTIATE_DISPATCH(float)
GAP_INSTANTIATE_DISPATCH(double)

#undef GAP_INSTANTIATE_DISPATCH

}  // namespace gap::kernels
