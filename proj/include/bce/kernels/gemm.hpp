#pragma once

#include <cstddef>

namespace bce::kernels {

// Row-major dense products used by the convolution paths. All accumulate into C.

/// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c);

/// C[M x N] += A^T * B with A stored [K x M], B [K x N]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c);

/// C[M x N] += A * B^T with A [M x K], B stored [N x K]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c);

}  // namespace bce::kernels
