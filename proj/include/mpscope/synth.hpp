#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "mpscope/errors.hpp"
#include "mpscope/gram.hpp"
#include "mpscope/matrix.hpp"
#include "mpscope/mpstats.hpp"
#include "mpscope/rng.hpp"
#include "mpscope/svd.hpp"

namespace mpscope {

// i.i.d. standard-normal matrix, deterministic per seed.
inline Matrix gaussian_matrix(std::size_t m, std::size_t n, std::uint64_t seed) {
    if (m == 0 || n == 0) {
        throw config_error("gaussian_matrix: dimensions must be positive");
    }
    Rng rng(seed);
    Matrix x(m, n);
    for (auto& v : x.data) v = rng.gaussian();
    return x;
}

// Eigenvalues of (1/d_in) * X * X^T for X i.i.d. standard normal, computed as
// sigma_i(X)^2 / d_in. This symmetric ensemble is the one whose bulk the
// mp_edges formula describes exactly, which makes it the calibration null for
// the metric pipeline. Small dimensions are rejected: below ~16 the
// finite-size smearing of the edges is too coarse for the edge-based metrics
// to mean anything.
inline Spectrum wishart_null_spectrum(std::size_t m, std::size_t d_in,
                                      std::uint64_t seed) {
    if (m < 16 || d_in < 16) {
        throw config_error("wishart_null_spectrum: m and d_in must be >= 16, got " +
                           std::to_string(m) + ", " + std::to_string(d_in));
    }
    const Matrix x = gaussian_matrix(m, d_in, seed);
    Spectrum s;
    s.spec.variant = Variant::MHA;  // carrier metadata; no variant applies
    s.spec.layer_index = 0;
    s.spec.m = m;
    s.spec.d_in = d_in;
    s.spec.eigen_mode = EigenMode::SINGULAR;
    s.values = singular_values(x, "wishart null");
    const double inv = 1.0 / static_cast<double>(d_in);
    for (auto& v : s.values) v = v * v * inv;
    return s;
}

// Planted-signal pair: wq = X_q + theta * U V^T, wk = X_k + theta * U V'^T
// with i.i.d. Gaussian backgrounds, shared left factors U (orthonormal
// columns), and independent Gaussian right factors V, V'. Sharing U is what
// lets the signal survive the cross product: the dominant detection terms
// X_q V' U^T and U V^T X_k^T have operator norm ~ theta * sqrt(m/d_in), so at
// theta = 10 the planted direction clears a lambda_plus = 4 bulk edge by a
// wide margin, while theta = 0 degenerates to the pure null.
inline std::pair<Matrix, Matrix> spiked_pair(std::size_t m, std::size_t d_in,
                                             double theta, std::size_t rank,
                                             std::uint64_t seed) {
    if (rank == 0 || rank > std::min(m, d_in)) {
        throw config_error("spiked_pair: rank must lie in [1, min(m, d_in)], got " +
                           std::to_string(rank));
    }
    if (theta < 0.0) {
        throw config_error("spiked_pair: theta must be non-negative");
    }
    Rng rng(seed);
    Matrix xq(m, d_in), xk(m, d_in);
    for (auto& v : xq.data) v = rng.gaussian();
    for (auto& v : xk.data) v = rng.gaussian();

    // U: Gaussian draw orthonormalized by modified Gram-Schmidt.
    Matrix u(m, rank);
    for (auto& v : u.data) v = rng.gaussian();
    for (std::size_t c = 0; c < rank; ++c) {
        for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t i = 0; i < m; ++i) dot += u(i, c) * u(i, prev);
            for (std::size_t i = 0; i < m; ++i) u(i, c) -= dot * u(i, prev);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < m; ++i) norm += u(i, c) * u(i, c);
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            throw numeric_error("spiked_pair: degenerate direction draw");
        }
        for (std::size_t i = 0; i < m; ++i) u(i, c) /= norm;
    }

    Matrix v(d_in, rank), vp(d_in, rank);
    for (auto& e : v.data) e = rng.gaussian();
    for (auto& e : vp.data) e = rng.gaussian();

    if (theta > 0.0) {
        // wq += theta * U V^T, wk += theta * U V'^T
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d_in; ++j) {
                double sq = 0.0, sk = 0.0;
                for (std::size_t r = 0; r < rank; ++r) {
                    sq += u(i, r) * v(j, r);
                    sk += u(i, r) * vp(j, r);
                }
                xq(i, j) += theta * sq;
                xk(i, j) += theta * sk;
            }
        }
    }
    return {std::move(xq), std::move(xk)};
}

// Marchenko-Pastur bulk density at aspect ratio gamma:
// sqrt((lambda_plus - x)(x - lambda_minus)) / (2 pi gamma x) inside the open
// bulk, 0 outside. For gamma > 1 the distribution additionally has a point
// mass at zero, reported by mp_zero_mass; the density here covers only the
// continuous part (total mass min(1, 1/gamma)).
inline double mp_density(double x, double gamma) {
    if (gamma <= 0.0) {
        throw config_error("mp_density: gamma must be positive");
    }
    const double sg = std::sqrt(gamma);
    const double lo = (1.0 - sg) * (1.0 - sg);
    const double hi = (1.0 + sg) * (1.0 + sg);
    if (x <= lo || x >= hi || x <= 0.0) return 0.0;
    return std::sqrt((hi - x) * (x - lo)) / (2.0 * std::numbers::pi * gamma * x);
}

// Weight of the point mass at zero: 1 - 1/gamma when gamma > 1 (the analyzed
// m x m matrix has rank at most d_in < m), else 0.
inline double mp_zero_mass(double gamma) {
    if (gamma <= 0.0) {
        throw config_error("mp_zero_mass: gamma must be positive");
    }
    return gamma > 1.0 ? 1.0 - 1.0 / gamma : 0.0;
}

}  // namespace mpscope
