// Small row-major GEMM kernels for the im2col convolution path and the
// linear layer. Loop orders are chosen so the inner loop is contiguous and
// auto-vectorizes; per-element accumulation order is identical to the naive
// serial loop, which keeps results bitwise reproducible.
#pragma once

#include <cstdint>
#include <vector>

namespace shiftlab {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T. B is transposed into a scratch buffer first;
// the row-of-dot-products formulation stalls on the serial reduction while
// this keeps the vectorizable nn inner loop (and the same per-element
// accumulation order: k ascending).
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    std::vector<T> bt(static_cast<std::size_t>(k * n));
    for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, n, k);
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k) {
    for (std::int64_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace shiftlab
