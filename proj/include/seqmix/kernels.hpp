#pragma once

#include <cstddef>

namespace seqmix::kernels {

// Numeric kernels come in two flavors: a serial reference and an OpenMP
// version. Every parallel loop assigns whole output elements (or rows) to
// one thread and keeps the inner reduction order fixed, so both backends
// produce bitwise-identical results for any thread count.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
void set_threads(int n);
int threads();

// Work below this many output elements always runs serially.
inline constexpr std::size_t kParallelCutoff = 4096;

bool parallel_enabled(std::size_t work);

// y[m x n] = a[m x k] * b[k x n]; accumulate adds into y instead of overwriting.
template <class T>
void matmul_nn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false);

// y[m x n] = a[m x k] * b[n x k]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false);

// y[m x n] = a[k x m]^T * b[k x n]
template <class T>
void matmul_tn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false);

// Row-wise softmax with max subtraction.
template <class T>
void softmax_rows(const T* x, T* y, std::size_t m, std::size_t n);

// Causal depthwise convolution, true convolution orientation:
//   y[i,c] = sum_{t=0}^{w-1} kernel[t,c] * x[i-t,c],  x[j<0] = 0.
template <class T>
void causal_dwconv(const T* x, const T* kernel, T* y, std::size_t n, std::size_t d,
                   std::size_t w);

// dx[j,c] += sum_t kernel[t,c] * dy[j+t,c];  dk[t,c] += sum_i dy[i,c] * x[i-t,c]
template <class T>
void causal_dwconv_backward(const T* x, const T* kernel, const T* dy, T* dx, T* dk,
                            std::size_t n, std::size_t d, std::size_t w);

}  // namespace seqmix::kernels

// Elementwise helpers live in the header so functors inline. They follow the
// same determinism rule: one thread per output chunk, pure maps only.
#ifdef _OPENMP
#include <omp.h>
#endif

namespace seqmix::kernels {

template <class T, class F>
void map(const T* x, T* y, std::size_t n, F f) {
#ifdef _OPENMP
  if (parallel_enabled(n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = f(x[i]);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class T, class F>
void zip(const T* a, const T* b, T* y, std::size_t n, F f) {
#ifdef _OPENMP
  if (parallel_enabled(n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = f(a[i], b[i]);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
}

}  // namespace seqmix::kernels
