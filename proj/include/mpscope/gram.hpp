#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mpscope/attention.hpp"
#include "mpscope/errors.hpp"
#include "mpscope/io.hpp"
#include "mpscope/matrix.hpp"
#include "mpscope/svd.hpp"

namespace mpscope {

// Whether spectrum entries are the cross-Gram's singular values or their
// squares. Both are legitimate readings of a non-symmetric product's
// "eigenvalues"; SINGULAR is the default used by every CLI path.
enum class EigenMode { SINGULAR, SQUARED };

inline const char* eigen_mode_name(EigenMode m) {
    return m == EigenMode::SINGULAR ? "singular" : "squared";
}

inline EigenMode eigen_mode_from_name(const std::string& s) {
    if (s == "singular") return EigenMode::SINGULAR;
    if (s == "squared") return EigenMode::SQUARED;
    throw config_error("unknown eigen mode '" + s + "' (expected singular|squared)");
}

// Identifies which weight blocks a spectrum came from and the aspect ratio
// that sets its reference bulk.
struct GramSpec {
    Variant variant = Variant::MHA;
    std::size_t layer_index = 0;
    std::size_t m = 0;     // row dimension of the analyzed blocks
    std::size_t d_in = 0;  // shared input dimension of the analyzed blocks
    EigenMode eigen_mode = EigenMode::SINGULAR;
};

struct Spectrum {
    std::vector<double> values;  // sorted non-increasing, all >= 0
    GramSpec spec;
};

// G = (1/d_in) * wq * wk^T, the normalized query-key cross product whose
// spectrum all downstream metrics are computed from.
inline Matrix cross_gram(const Matrix& wq, const Matrix& wk, std::size_t d_in) {
    if (wq.rows != wk.rows || wq.cols != wk.cols) {
        throw config_error("cross_gram: operand shapes differ, " + wq.shape_str() +
                           " vs " + wk.shape_str());
    }
    if (d_in == 0 || wq.cols != d_in) {
        throw config_error("cross_gram: d_in = " + std::to_string(d_in) +
                           " does not match operand columns (" +
                           std::to_string(wq.cols) + ")");
    }
    Matrix g = matmul_nt(wq, wk);
    const double inv = 1.0 / static_cast<double>(d_in);
    for (auto& v : g.data) v *= inv;
    return g;
}

// Pulls the query/key blocks a variant's analysis looks at out of a
// checkpoint:
//   MHA              full projections, d_in = d_model
//   MLA_PRE/MLA_NOPE head-stacked up-projections, d_in = d_latent (the shared
//                    down-projection is excluded)
//   MLA_DEC          the query rotary-branch up-projection against the shared
//                    key rotary matrix replicated per head, d_in = d_latent
struct QkSelection {
    Matrix wq;
    Matrix wk;
    GramSpec spec;
};

inline QkSelection select_qk_weights(const TensorStore& store, std::size_t layer,
                                     const AttentionConfig& config) {
    config.validate();
    QkSelection sel;
    sel.spec.variant = config.variant;
    sel.spec.layer_index = layer;
    const std::size_t hk = config.n_heads * config.d_k;
    switch (config.variant) {
        case Variant::MHA:
            sel.wq = store.get_matrix(tensor_name(layer, "wq"), hk, config.d_model);
            sel.wk = store.get_matrix(tensor_name(layer, "wk"), hk, config.d_model);
            sel.spec.m = hk;
            sel.spec.d_in = config.d_model;
            break;
        case Variant::MLA_PRE:
        case Variant::MLA_NOPE:
            sel.wq = store.get_matrix(tensor_name(layer, "wq_up"), hk, config.d_latent);
            sel.wk = store.get_matrix(tensor_name(layer, "wk_up"), hk, config.d_latent);
            sel.spec.m = hk;
            sel.spec.d_in = config.d_latent;
            break;
        case Variant::MLA_DEC: {
            const std::size_t rd = config.rope_dim();
            if (rd == 0) {
                throw config_error(
                    "select_qk_weights: decoupled variant with rope_frac = 0 has no "
                    "rotary branch to analyze");
            }
            sel.wq = store.get_matrix(tensor_name(layer, "wq_rope"),
                                      rd * config.n_heads, config.d_latent);
            const Matrix shared =
                store.get_matrix(tensor_name(layer, "wk_rope"), rd, config.d_latent);
            sel.wk = Matrix(rd * config.n_heads, config.d_latent);
            for (std::size_t h = 0; h < config.n_heads; ++h) {
                std::copy(shared.data.begin(), shared.data.end(),
                          sel.wk.data.begin() +
                              static_cast<std::ptrdiff_t>(h * shared.data.size()));
            }
            sel.spec.m = rd * config.n_heads;
            sel.spec.d_in = config.d_latent;
            break;
        }
    }
    return sel;
}

inline Spectrum gram_spectrum(const Matrix& wq, const Matrix& wk,
                              const GramSpec& spec) {
    if (wq.rows != spec.m || wq.cols != spec.d_in || wk.rows != spec.m ||
        wk.cols != spec.d_in) {
        throw config_error("gram_spectrum: operands " + wq.shape_str() + " / " +
                           wk.shape_str() + " do not match spec m=" +
                           std::to_string(spec.m) + ", d_in=" +
                           std::to_string(spec.d_in));
    }
    const Matrix g = cross_gram(wq, wk, spec.d_in);
    Spectrum out;
    out.spec = spec;
    out.values = singular_values(
        g, "cross-gram layer " + std::to_string(spec.layer_index));
    if (spec.eigen_mode == EigenMode::SQUARED) {
        for (auto& v : out.values) v *= v;
    }
    return out;
}

}  // namespace mpscope
