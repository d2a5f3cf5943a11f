#include "seqmix/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace seqmix::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : 1);
#else
  (void)n;
#endif
}

int threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool parallel_enabled(std::size_t work) {
#ifdef _OPENMP
  return backend() == Backend::openmp && work >= kParallelCutoff && !omp_in_parallel();
#else
  (void)work;
  return false;
#endif
}

template <class T>
void matmul_nn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
  // Row of y per iteration; i-k-j order keeps b and y accesses contiguous.
  auto row = [&](std::size_t i) {
    T* yi = y + i * n;
    if (!accumulate) std::memset(yi, 0, n * sizeof(T));
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) yi[j] += av * bp[j];
    }
  };
#ifdef _OPENMP
  if (parallel_enabled(m * n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) row(i);
    return;
  }
#endif
  for (std::size_t i = 0; i < m; ++i) row(i);
}

template <class T>
void matmul_nt(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
  auto row = [&](std::size_t i) {
    const T* ai = a + i * k;
    T* yi = y + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      yi[j] = accumulate ? yi[j] + acc : acc;
    }
  };
#ifdef _OPENMP
  if (parallel_enabled(m * n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) row(i);
    return;
  }
#endif
  for (std::size_t i = 0; i < m; ++i) row(i);
}

template <class T>
void matmul_tn(const T* a, const T* b, T* y, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
  auto row = [&](std::size_t i) {
    T* yi = y + i * n;
    if (!accumulate) std::memset(yi, 0, n * sizeof(T));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) yi[j] += av * bp[j];
    }
  };
#ifdef _OPENMP
  if (parallel_enabled(m * n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) row(i);
    return;
  }
#endif
  for (std::size_t i = 0; i < m; ++i) row(i);
}

template <class T>
void softmax_rows(const T* x, T* y, std::size_t m, std::size_t n) {
  auto row = [&](std::size_t i) {
    const T* xi = x + i * n;
    T* yi = y + i * n;
    T mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) yi[j] *= inv;
  };
#ifdef _OPENMP
  if (parallel_enabled(m * n)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) row(i);
    return;
  }
#endif
  for (std::size_t i = 0; i < m; ++i) row(i);
}

template <class T>
void causal_dwconv(const T* x, const T* kernel, T* y, std::size_t n, std::size_t d,
                   std::size_t w) {
  auto row = [&](std::size_t i) {
    T* yi = y + i * d;
    std::memset(yi, 0, d * sizeof(T));
    const std::size_t tmax = std::min(w - 1, i);
    for (std::size_t t = 0; t <= tmax; ++t) {
      const T* kt = kernel + t * d;
      const T* xs = x + (i - t) * d;
      for (std::size_t c = 0; c < d; ++c) yi[c] += kt[c] * xs[c];
    }
  };
#ifdef _OPENMP
  if (parallel_enabled(n * d)) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) row(i);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) row(i);
}

template <class T>
void causal_dwconv_backward(const T* x, const T* kernel, const T* dy, T* dx, T* dk,
                            std::size_t n, std::size_t d, std::size_t w) {
  // Serial; gradient buffers are shared accumulators.
  for (std::size_t i = 0; i < n; ++i) {
    const T* dyi = dy + i * d;
    const std::size_t tmax = std::min(w - 1, i);
    for (std::size_t t = 0; t <= tmax; ++t) {
      const T* kt = kernel + t * d;
      const T* xs = x + (i - t) * d;
      T* dxs = dx + (i - t) * d;
      T* dkt = dk + t * d;
      for (std::size_t c = 0; c < d; ++c) {
        dxs[c] += kt[c] * dyi[c];
        dkt[c] += xs[c] * dyi[c];
      }
    }
  }
}

#define SEQMIX_INSTANTIATE(T)                                                                  \
  template void matmul_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                             bool);                                                           \
  template void matmul_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                             bool);                                                           \
  template void matmul_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                             bool);                                                           \
  template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);                      \
  template void causal_dwconv<T>(const T*, const T*, T*, std::size_t, std::size_t,            \
                                 std::size_t);                                                \
  template void causal_dwconv_backward<T>(const T*, const T*, const T*, T*, T*, std::size_t,  \
                                          std::size_t, std::size_t);

SEQMIX_INSTANTIATE(float)
SEQMIX_INSTANTIATE(double)

#undef SEQMIX_INSTANTIATE

}  // namespace seqmix::kernels
