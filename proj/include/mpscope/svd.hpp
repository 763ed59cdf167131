#pragma once

#include <string>
#include <vector>

#include <Eigen/SVD>

#include "mpscope/errors.hpp"
#include "mpscope/matrix.hpp"

namespace mpscope {

// Thin SVD: a = u * diag(s) * v^T with u (m x k), v (n x k), k = min(m, n),
// s sorted non-increasing.
struct SvdResult {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

// `label` identifies the matrix in diagnostics; partial spectra are never
// returned.
inline SvdResult svd(const Matrix& a, const std::string& label = "matrix") {
    if (a.rows == 0 || a.cols == 0) {
        throw config_error("svd: empty input (" + label + ")");
    }
    if (!a.all_finite()) {
        throw numeric_error("svd: non-finite entries in " + label + " (" +
                            a.shape_str() + ")");
    }

    Eigen::BDCSVD<Eigen::MatrixXd> dec(as_eigen(a),
                                       Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success) {
        throw numeric_error("svd: iteration failed to converge on " + label + " (" +
                            a.shape_str() + ")");
    }

    const auto k = dec.singularValues().size();
    SvdResult r;
    r.s.assign(dec.singularValues().data(), dec.singularValues().data() + k);
    r.u = Matrix(a.rows, static_cast<std::size_t>(k));
    r.v = Matrix(a.cols, static_cast<std::size_t>(k));
    as_eigen(r.u) = dec.matrixU();
    as_eigen(r.v) = dec.matrixV();
    return r;
}

inline std::vector<double> singular_values(const Matrix& a,
                                           const std::string& label = "matrix") {
    return svd(a, label).s;
}

}  // namespace mpscope
