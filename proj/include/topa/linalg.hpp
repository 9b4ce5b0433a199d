#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace topa {

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

namespace kernels {

/// Worker count for the parallel kernels. 1 selects the serial path.
/// Parallel variants partition by output element, so results are
/// bit-identical to the serial reference for any thread count.
void set_threads(int n);
int threads();

// Serial reference implementations, kept for testing and benchmarking.
void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c);     // c = a * b
void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& c);  // c = a * b^T
void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& c);  // c = a^T * b

// OpenMP-parallel kernels (fall back to serial when threads() == 1).
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);

}  // namespace kernels

double dot(const double* a, const double* b, std::size_t n);
double l2_norm(const double* a, std::size_t n);

/// In-place x /= ||x||; leaves the zero vector untouched.
void normalize(std::vector<double>& x);

}  // namespace topa
