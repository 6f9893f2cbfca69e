// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "fuselave/common.hpp"
#include "fuselave/tensor.hpp"

using namespace fuselave;

namespace {

Tensor random_tensor(int r, int c, Rng& rng) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

}  // namespace

TEST_SUITE("core") {

TEST_CASE("rng is seed-deterministic and uniform stays in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double ua = a.uniform();
        CHECK(ua == b.uniform());
        CHECK(ua >= 0.0);
        CHECK(ua < 1.0);
    }
    Rng c(42), d(43);
    CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("fork yields independent reproducible streams") {
    Rng base(7);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    Rng f1b = Rng(7).fork(1);
    CHECK(f1.next_u64() == f1b.next_u64());
    CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("matmul variants match the naive triple loop") {
    Rng rng(3);
    const int m = 7, k = 13, n = 9;
    Tensor a = random_tensor(m, k, rng);
    Tensor b = random_tensor(k, n, rng);
    Tensor bt = random_tensor(n, k, rng);
    Tensor at = random_tensor(k, m, rng);

    Tensor c1(m, n), ref1(m, n);
    matmul_acc(a.data.data(), b.data.data(), c1.data.data(), m, k, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int kk = 0; kk < k; ++kk) ref1.at(i, j) += a.at(i, kk) * b.at(kk, j);
    for (size_t i = 0; i < c1.size(); ++i) CHECK(c1.data[i] == doctest::Approx(ref1.data[i]).epsilon(1e-12));

    Tensor c2(m, n), ref2(m, n);
    matmul_nt_acc(a.data.data(), bt.data.data(), c2.data.data(), m, k, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int kk = 0; kk < k; ++kk) ref2.at(i, j) += a.at(i, kk) * bt.at(j, kk);
    for (size_t i = 0; i < c2.size(); ++i) CHECK(c2.data[i] == doctest::Approx(ref2.data[i]).epsilon(1e-12));

    Tensor c3(m, n), ref3(m, n);
    matmul_tn_acc(at.data.data(), b.data.data(), c3.data.data(), m, k, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int kk = 0; kk < k; ++kk) ref3.at(i, j) += at.at(kk, i) * b.at(kk, j);
    for (size_t i = 0; i < c3.size(); ++i) CHECK(c3.data[i] == doctest::Approx(ref3.data[i]).epsilon(1e-12));
}

TEST_CASE("matmul row results are independent of other rows") {
    // Per-element fixed-order accumulation: deleting rows of A must not
    // change surviving rows' results bitwise.
    Rng rng(5);
    const int m = 40, k = 33, n = 17;
    Tensor a = random_tensor(m, k, rng);
    Tensor b = random_tensor(k, n, rng);
    Tensor full(m, n);
    matmul_acc(a.data.data(), b.data.data(), full.data.data(), m, k, n);

    Tensor half(m / 2, k);
    for (int i = 0; i < m / 2; ++i) std::copy_n(a.row(2 * i), k, half.row(i));
    Tensor out(m / 2, n);
    matmul_acc(half.data.data(), b.data.data(), out.data.data(), m / 2, k, n);
    for (int i = 0; i < m / 2; ++i)
        for (int j = 0; j < n; ++j) CHECK(out.at(i, j) == full.at(2 * i, j));
}

}  // TEST_SUITE
