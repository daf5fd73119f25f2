#include <doctest.h>

#include <tuple>

#include "kiwi/kernels.hpp"
#include "kiwi/rng.hpp"

using namespace kiwi;

namespace {

Tensor random_matrix(Rng& rng, int64_t r, int64_t c) { return rng.randn({r, c}); }

// independent triple-loop oracle
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.cols()});
    for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

} // namespace

TEST_CASE("matmul matches a naive oracle") {
    Rng rng(11);
    const Tensor a = random_matrix(rng, 7, 13), b = random_matrix(rng, 13, 5);
    const Tensor c = kernels::matmul(a, b);
    const Tensor oracle = naive_matmul(a, b);
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("serial and OpenMP kernels agree bitwise") {
    Rng rng(12);
    for (auto [m, k, n] : {std::tuple{3, 4, 5}, std::tuple{17, 32, 9}, std::tuple{64, 64, 64}}) {
        const Tensor a = random_matrix(rng, m, k), b = random_matrix(rng, k, n);
        Tensor cs({static_cast<int64_t>(m), static_cast<int64_t>(n)});
        Tensor cp = cs;
        kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
        kernels::matmul_omp(a.data(), b.data(), cp.data(), m, k, n);
        CHECK(cs.vec() == cp.vec());

        const Tensor bt = random_matrix(rng, n, k);
        Tensor ds = cs, dp = cs;
        kernels::matmul_nt_serial(a.data(), bt.data(), ds.data(), m, k, n);
        kernels::matmul_nt_omp(a.data(), bt.data(), dp.data(), m, k, n);
        CHECK(ds.vec() == dp.vec());
    }
}

TEST_CASE("matmul_nt equals matmul with an explicitly transposed operand") {
    Rng rng(13);
    const Tensor a = random_matrix(rng, 6, 9), b = random_matrix(rng, 4, 9);
    Tensor bt({9, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 9; ++j) bt.at(j, i) = b.at(i, j);
    const Tensor via_nt = kernels::matmul_nt(a, b);
    const Tensor direct = kernels::matmul(a, bt);
    for (int64_t i = 0; i < via_nt.numel(); ++i)
        CHECK(via_nt[i] == doctest::Approx(direct[i]).epsilon(1e-12));
}

TEST_CASE("matmul_tn_acc accumulates A^T B into C") {
    Rng rng(14);
    const Tensor a = random_matrix(rng, 5, 3), b = random_matrix(rng, 5, 4);
    Tensor c = Tensor::full({3, 4}, 2.0);
    Tensor expected = c;
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t m = 0; m < 5; ++m) expected.at(i, j) += a.at(m, i) * b.at(m, j);
    kernels::matmul_tn_acc(a, b, c);
    for (int64_t i = 0; i < c.numel(); ++i)
        CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    Tensor cs = Tensor::full({3, 4}, 2.0), cp = Tensor::full({3, 4}, 2.0);
    kernels::matmul_tn_acc_serial(a.data(), b.data(), cs.data(), 5, 3, 4);
    kernels::matmul_tn_acc_omp(a.data(), b.data(), cp.data(), 5, 3, 4);
    CHECK(cs.vec() == cp.vec());
}

TEST_CASE("softmax rows: normalization, shift invariance, serial==omp") {
    Rng rng(15);
    Tensor x = random_matrix(rng, 9, 17);
    Tensor shifted = x;
    for (int64_t r = 0; r < 9; ++r)
        for (int64_t c = 0; c < 17; ++c) shifted.at(r, c) += 100.0;

    Tensor xs = x, xp = x;
    kernels::softmax_rows_serial(xs.data(), 9, 17);
    kernels::softmax_rows_omp(xp.data(), 9, 17);
    CHECK(xs.vec() == xp.vec());

    kernels::softmax_rows(x);
    kernels::softmax_rows(shifted);
    for (int64_t r = 0; r < 9; ++r) {
        double sum = 0.0;
        for (int64_t c = 0; c < 17; ++c) sum += x.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(x[i] == doctest::Approx(shifted[i]).epsilon(1e-12));
}

TEST_CASE("parallel switch is honored") {
    kernels::set_parallel(false);
    CHECK_FALSE(kernels::parallel_enabled());
    Rng rng(16);
    const Tensor a = random_matrix(rng, 140, 130), b = random_matrix(rng, 130, 150);
    const Tensor serial_only = kernels::matmul(a, b);
    kernels::set_parallel(true);
    CHECK(kernels::parallel_enabled());
    const Tensor dispatched = kernels::matmul(a, b);
    CHECK(serial_only.vec() == dispatched.vec());
}
