#include "kiwi/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace kiwi::kernels {

namespace {
std::atomic<bool> g_parallel{true};
constexpr int64_t kParallelCutoff = 16 * 1024; // flop-ish threshold on m*n

inline void check_2d(const Tensor& t, const char* name) {
    if (t.ndim() != 2) throw std::invalid_argument(std::string(name) + " must be 2D");
}
} // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

// i-k-j loop order keeps the inner loop contiguous in both B and C so the
// compiler can vectorize it.
void matmul_serial(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_omp(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n) {
    #pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

void matmul_nt_omp(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n) {
    #pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       int64_t m, int64_t k, int64_t n) {
    // parallel over output rows (the k dimension) so no two threads write
    // the same row of C
    #pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < k; ++p) {
        double* crow = c + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            const double* brow = b + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void softmax_rows_serial(double* x, int64_t m, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* row = x + i * n;
        double mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) { row[j] = std::exp(row[j] - mx); sum += row[j]; }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < n; ++j) row[j] *= inv;
    }
}

void softmax_rows_omp(double* x, int64_t m, int64_t n) {
    #pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) softmax_rows_serial(x + i * n, 1, n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul lhs"); check_2d(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul inner dimension mismatch " +
                                    shape_str(a) + " x " + shape_str(b));
    Tensor c({a.rows(), b.cols()});
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (g_parallel.load() && m * n >= kParallelCutoff)
        matmul_omp(a.data(), b.data(), c.data(), m, k, n);
    else
        matmul_serial(a.data(), b.data(), c.data(), m, k, n);
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt lhs"); check_2d(b, "matmul_nt rhs");
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt inner dimension mismatch " +
                                    shape_str(a) + " x " + shape_str(b) + "^T");
    Tensor c({a.rows(), b.rows()});
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    if (g_parallel.load() && m * n >= kParallelCutoff)
        matmul_nt_omp(a.data(), b.data(), c.data(), m, k, n);
    else
        matmul_nt_serial(a.data(), b.data(), c.data(), m, k, n);
    return c;
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
    check_2d(a, "matmul_tn lhs"); check_2d(b, "matmul_tn rhs"); check_2d(c, "matmul_tn out");
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
        throw std::invalid_argument("matmul_tn_acc shape mismatch");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (g_parallel.load() && k * n >= kParallelCutoff)
        matmul_tn_acc_omp(a.data(), b.data(), c.data(), m, k, n);
    else
        matmul_tn_acc_serial(a.data(), b.data(), c.data(), m, k, n);
}

void softmax_rows(Tensor& x) {
    check_2d(x, "softmax input");
    const int64_t m = x.rows(), n = x.cols();
    if (g_parallel.load() && m * n >= kParallelCutoff)
        softmax_rows_omp(x.data(), m, n);
    else
        softmax_rows_serial(x.data(), m, n);
}

} // namespace kiwi::kernels
