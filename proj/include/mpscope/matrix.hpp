#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mpscope/errors.hpp"

namespace mpscope {

// Guard for relative-error denominators; covers the all-zero matrix.
inline constexpr double kDenomGuard = 1e-300;

// Dense row-major matrix of 64-bit floats. All spectral analysis runs in
// doubles even when checkpoints store 32-bit values.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // length rows*cols, row-major

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    Matrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) {
            throw config_error("matrix: data length " + std::to_string(data.size()) +
                               " does not match shape " + shape_str());
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenRowMajor> as_eigen(const Matrix& a) {
    return {a.data.data(), static_cast<Eigen::Index>(a.rows),
            static_cast<Eigen::Index>(a.cols)};
}

inline Eigen::Map<EigenRowMajor> as_eigen(Matrix& a) {
    return {a.data.data(), static_cast<Eigen::Index>(a.rows),
            static_cast<Eigen::Index>(a.cols)};
}

// a (m x k) * b (k x n)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw config_error("matmul: incompatible shapes " + a.shape_str() + " * " +
                           b.shape_str());
    }
    Matrix c(a.rows, b.cols);
    as_eigen(c).noalias() = as_eigen(a) * as_eigen(b);
    return c;
}

// a (m x k) * b^T for b (n x k)
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw config_error("matmul_nt: incompatible shapes " + a.shape_str() +
                           " * transpose(" + b.shape_str() + ")");
    }
    Matrix c(a.rows, b.rows);
    as_eigen(c).noalias() = as_eigen(a) * as_eigen(b).transpose();
    return c;
}

// a^T (k x m) * b (m x n), accumulated into c (k x n)
inline void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) {
        throw config_error("add_matmul_tn: incompatible shapes " + c.shape_str() +
                           " += transpose(" + a.shape_str() + ") * " + b.shape_str());
    }
    as_eigen(c).noalias() += as_eigen(a).transpose() * as_eigen(b);
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace mpscope
