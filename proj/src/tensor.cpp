// SPDX-License-Identifier: Apache-2.0
#include "fuselave/tensor.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fuselave {

namespace {
constexpr int kRowBlock = 32;
constexpr long kParallelFlopCutoff = 1L << 18;
}  // namespace

// i-k-j loop order: the j loop vectorizes, and each C[i][j] accumulates its
// k terms in index order regardless of blocking or thread count.
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    const long flops = static_cast<long>(m) * k * n;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (flops > kParallelFlopCutoff)
#endif
    for (int i0 = 0; i0 < m; i0 += kRowBlock) {
        const int i1 = std::min(i0 + kRowBlock, m);
        for (int i = i0; i < i1; ++i) {
            const double* ai = a + static_cast<size_t>(i) * k;
            double* ci = c + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = ai[kk];
                const double* bk = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        }
    }
    (void)flops;
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    const long flops = static_cast<long>(m) * k * n;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (flops > kParallelFlopCutoff)
#endif
    for (int i0 = 0; i0 < m; i0 += kRowBlock) {
        const int i1 = std::min(i0 + kRowBlock, m);
        for (int i = i0; i < i1; ++i) {
            const double* ai = a + static_cast<size_t>(i) * k;
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* bj = b + static_cast<size_t>(j) * k;
                double acc = 0.0;
                for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
                ci[j] += acc;
            }
        }
    }
    (void)flops;
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    const long flops = static_cast<long>(m) * k * n;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (flops > kParallelFlopCutoff)
#endif
    for (int i0 = 0; i0 < m; i0 += kRowBlock) {
        const int i1 = std::min(i0 + kRowBlock, m);
        for (int i = i0; i < i1; ++i) {
            double* ci = c + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = a[static_cast<size_t>(kk) * m + i];
                const double* bk = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        }
    }
    (void)flops;
}

}  // namespace fuselave
