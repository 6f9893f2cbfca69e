// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace fuselave {

// Dense row-major matrix of doubles. All model math runs in double so the
// finite-difference and cross-path equality tolerances in the test suite
// hold with a wide margin.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

// C += A * B. Accumulation over k runs in a fixed order per output element,
// so an element's value never depends on which other rows are present in the
// call; the block-deletion equality tests rely on this.
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C += A * B^T  (A: m x k, B: n x k, C: m x n).
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C += A^T * B  (A: k x m, B: k x n, C: m x n).
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace fuselave
