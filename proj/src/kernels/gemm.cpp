#include "bce/kernels/gemm.hpp"

#include <algorithm>

#include "bce/kernels/exec.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bce::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

constexpr int kColBlock = 512;

// Four output rows share every load of a B row. `a_at(i, kk)` abstracts A's layout.
template <typename T, typename AAt>
void gemm_rows(int m, int n, int k, AAt a_at, const T* b, T* c) {
  const int blocks = (n + kColBlock - 1) / kColBlock;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    const int j0 = blk * kColBlock;
    const int nb = std::min(kColBlock, n - j0);
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      T* c0 = c + static_cast<std::size_t>(i) * n + j0;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      for (int kk = 0; kk < k; ++kk) {
        const T a0 = a_at(i, kk), a1 = a_at(i + 1, kk), a2 = a_at(i + 2, kk), a3 = a_at(i + 3, kk);
        const T* br = b + static_cast<std::size_t>(kk) * n + j0;
        for (int j = 0; j < nb; ++j) {
          const T bv = br[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* c0 = c + static_cast<std::size_t>(i) * n + j0;
      for (int kk = 0; kk < k; ++kk) {
        const T a0 = a_at(i, kk);
        const T* br = b + static_cast<std::size_t>(kk) * n + j0;
        for (int j = 0; j < nb; ++j) c0[j] += a0 * br[j];
      }
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, int len) {
  T acc[8] = {};
  int j = 0;
  for (; j + 8 <= len; j += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += x[j + l] * y[j + l];
  }
  T tail = 0;
  for (; j < len; ++j) tail += x[j] * y[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
  gemm_rows<T>(
      m, n, k, [a, k](int i, int kk) { return a[static_cast<std::size_t>(i) * k + kk]; }, b, c);
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c) {
  gemm_rows<T>(
      m, n, k, [a, m](int i, int kk) { return a[static_cast<std::size_t>(kk) * m + i]; }, b, c);
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  const long long total = static_cast<long long>(m) * n;
#pragma omp parallel for schedule(static)
  for (long long idx = 0; idx < total; ++idx) {
    const int i = static_cast<int>(idx / n);
    const int j = static_cast<int>(idx % n);
    c[idx] += dot(a + static_cast<std::size_t>(i) * k, b + static_cast<std::size_t>(j) * k, k);
  }
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*);
template void gemm_tn<float>(int, int, int, const float*, const float*, float*);
template void gemm_tn<double>(int, int, int, const double*, const double*, double*);
template void gemm_nt<float>(int, int, int, const float*, const float*, float*);
template void gemm_nt<double>(int, int, int, const double*, const double*, double*);

}  // namespace bce::kernels
