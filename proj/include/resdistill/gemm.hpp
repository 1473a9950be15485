#pragma once

#include <cstddef>

namespace resdistill {

// Minimal accumulating GEMM kernels (C += A·B variants). Loop orders are
// chosen so the innermost loop walks contiguous memory and auto-vectorizes;
// at the sizes used here (im2col matrices) this is within a small factor of
// a tuned BLAS and keeps the project dependency-free.

template <typename T>
void gemm_nn(int m, int n, int k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + std::size_t(i) * k;
        T* crow = c + std::size_t(i) * n;
        for (int l = 0; l < k; ++l) {
            T av = arow[l];
            if (av == T(0)) continue;
            const T* brow = b + std::size_t(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]^T  (dot products of rows)
template <typename T>
void gemm_nt(int m, int n, int k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + std::size_t(i) * k;
        T* crow = c + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + std::size_t(j) * k;
            T acc = T(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[m×n] += A[k×m]^T · B[k×n]
template <typename T>
void gemm_tn(int m, int n, int k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    for (int l = 0; l < k; ++l) {
        const T* arow = a + std::size_t(l) * m;
        const T* brow = b + std::size_t(l) * n;
        for (int i = 0; i < m; ++i) {
            T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace resdistill
