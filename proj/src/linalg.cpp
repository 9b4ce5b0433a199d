#include "topa/linalg.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace topa {

namespace kernels {

namespace {
int g_threads = 1;
}

void set_threads(int n) { g_threads = n < 1 ? 1 : n; }
int threads() { return g_threads; }

void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.rows);
    c = Matrix(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.cols);
    c = Matrix(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            ci[j] = dot(ai, b.row(j), a.cols);
        }
    }
}

void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.rows == b.rows);
    c = Matrix(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            double aki = ak[i];
            double* ci = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    if (g_threads == 1) {
        matmul_serial(a, b, c);
        return;
    }
    assert(a.cols == b.rows);
    c = Matrix(a.rows, b.cols);
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (long long ii = 0; ii < static_cast<long long>(a.rows); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    if (g_threads == 1) {
        matmul_nt_serial(a, b, c);
        return;
    }
    assert(a.cols == b.cols);
    c = Matrix(a.rows, b.rows);
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (long long ii = 0; ii < static_cast<long long>(a.rows); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            ci[j] = dot(ai, b.row(j), a.cols);
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    if (g_threads == 1) {
        matmul_tn_serial(a, b, c);
        return;
    }
    assert(a.rows == b.rows);
    c = Matrix(a.cols, b.cols);
    // Partition by output row i; each thread scans all k for its rows,
    // accumulating in the same k order as the serial reference.
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (long long ii = 0; ii < static_cast<long long>(a.cols); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.rows; ++k) {
            double aki = a.at(k, i);
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

}  // namespace kernels

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const double* a, std::size_t n) {
    return std::sqrt(dot(a, a, n));
}

void normalize(std::vector<double>& x) {
    double norm = l2_norm(x.data(), x.size());
    if (norm == 0.0) return;
    for (double& v : x) v /= norm;
}

}  // namespace topa
