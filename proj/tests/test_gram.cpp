#include <algorithm>
#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "mpscope/gram.hpp"
#include "mpscope/pipeline.hpp"
#include "mpscope/svd.hpp"
#include "mpscope/synth.hpp"

using namespace mpscope;

namespace {

GramSpec make_spec(std::size_t m, std::size_t d_in,
                   EigenMode mode = EigenMode::SINGULAR) {
    GramSpec spec;
    spec.variant = Variant::MHA;
    spec.layer_index = 0;
    spec.m = m;
    spec.d_in = d_in;
    spec.eigen_mode = mode;
    return spec;
}

// Orthogonal matrix from the left factor of a random square decomposition.
Matrix random_orthogonal(std::size_t n, std::uint64_t seed) {
    return svd(gaussian_matrix(n, n, seed)).u;
}

}  // namespace

TEST_CASE("cross_gram matches a hand-computed example") {
    const Matrix wq(2, 2, {1, 2, 3, 4});
    const Matrix wk(2, 2, {5, 6, 7, 8});
    const Matrix g = cross_gram(wq, wk, 2);
    REQUIRE(g(0, 0) == Catch::Approx(17.0 / 2.0).margin(1e-15));
    REQUIRE(g(0, 1) == Catch::Approx(23.0 / 2.0).margin(1e-15));
    REQUIRE(g(1, 0) == Catch::Approx(39.0 / 2.0).margin(1e-15));
    REQUIRE(g(1, 1) == Catch::Approx(53.0 / 2.0).margin(1e-15));
    REQUIRE_THROWS_AS(cross_gram(Matrix(2, 3), Matrix(2, 2), 3), config_error);
}

TEST_CASE("identity pair has a flat spectrum; squared mode squares it") {
    const Matrix eye = Matrix::identity(4);
    const Spectrum s = gram_spectrum(eye, eye, make_spec(4, 4));
    REQUIRE(s.values.size() == 4);
    for (double v : s.values) REQUIRE(v == Catch::Approx(0.25).margin(1e-14));

    const Spectrum sq =
        gram_spectrum(eye, eye, make_spec(4, 4, EigenMode::SQUARED));
    for (double v : sq.values) REQUIRE(v == Catch::Approx(0.0625).margin(1e-14));
}

TEST_CASE("spectrum is invariant under a shared right rotation") {
    const std::size_t m = 24, d_in = 16;
    const Matrix wq = gaussian_matrix(m, d_in, 1);
    const Matrix wk = gaussian_matrix(m, d_in, 2);
    const Matrix r = random_orthogonal(d_in, 3);

    const Spectrum base = gram_spectrum(wq, wk, make_spec(m, d_in));
    const Spectrum rotated =
        gram_spectrum(matmul(wq, r), matmul(wk, r), make_spec(m, d_in));
    REQUIRE(rotated.values.size() == base.values.size());
    for (std::size_t i = 0; i < base.values.size(); ++i)
        REQUIRE(rotated.values[i] == Catch::Approx(base.values[i]).margin(1e-10));
}

TEST_CASE("spectrum is symmetric under swapping the two factors") {
    const std::size_t m = 20, d_in = 20;
    const Matrix wq = gaussian_matrix(m, d_in, 4);
    const Matrix wk = gaussian_matrix(m, d_in, 5);
    const Spectrum ab = gram_spectrum(wq, wk, make_spec(m, d_in));
    const Spectrum ba = gram_spectrum(wk, wq, make_spec(m, d_in));
    for (std::size_t i = 0; i < ab.values.size(); ++i)
        REQUIRE(ab.values[i] == Catch::Approx(ba.values[i]).margin(1e-12));
}

TEST_CASE("low-rank factors bound the number of nonzero values") {
    const std::size_t m = 12, d_in = 10, r = 2;
    const Matrix wq = matmul(gaussian_matrix(m, r, 6), gaussian_matrix(r, d_in, 7));
    const Matrix wk = gaussian_matrix(m, d_in, 8);
    const Spectrum s = gram_spectrum(wq, wk, make_spec(m, d_in));
    for (std::size_t i = r; i < s.values.size(); ++i)
        REQUIRE(std::abs(s.values[i]) < 1e-10);
}

TEST_CASE("scaling one factor scales every value linearly") {
    const std::size_t m = 10, d_in = 14;
    const Matrix wq = gaussian_matrix(m, d_in, 9);
    const Matrix wk = gaussian_matrix(m, d_in, 10);
    Matrix scaled = wq;
    for (auto& v : scaled.data) v *= 3.0;
    const Spectrum base = gram_spectrum(wq, wk, make_spec(m, d_in));
    const Spectrum big = gram_spectrum(scaled, wk, make_spec(m, d_in));
    for (std::size_t i = 0; i < base.values.size(); ++i)
        REQUIRE(big.values[i] == Catch::Approx(3.0 * base.values[i]).margin(1e-10));
}

TEST_CASE("operands must match the declared shape") {
    const Matrix wq = gaussian_matrix(8, 6, 11);
    const Matrix wk = gaussian_matrix(8, 6, 12);
    REQUIRE_NOTHROW(gram_spectrum(wq, wk, make_spec(8, 6)));
    REQUIRE_THROWS_AS(gram_spectrum(wq, wk, make_spec(8, 7)), config_error);
    REQUIRE_THROWS_AS(gram_spectrum(wq, wk, make_spec(9, 6)), config_error);
}

TEST_CASE("eigen mode names round-trip and reject unknowns") {
    REQUIRE(eigen_mode_from_name("singular") == EigenMode::SINGULAR);
    REQUIRE(eigen_mode_from_name("squared") == EigenMode::SQUARED);
    REQUIRE(eigen_mode_name(EigenMode::SINGULAR) == std::string("singular"));
    REQUIRE(eigen_mode_name(EigenMode::SQUARED) == std::string("squared"));
    REQUIRE_THROWS_AS(eigen_mode_from_name("cubed"), config_error);
}

TEST_CASE("selection picks the analyzed projections per variant") {
    AttentionConfig config;
    config.d_model = 16;
    config.n_heads = 2;
    config.d_k = 8;
    config.d_latent = 6;
    config.rope_frac = 0.5;
    config.seq_len = 8;

    SECTION("full-projection variant uses the query/key maps directly") {
        config.variant = Variant::MHA;
        const AttentionWeights w = init_weights(config, 31);
        TensorStore store;
        weights_to_store(store, 0, w, Dtype::f64);
        const QkSelection sel = select_qk_weights(store, 0, config);
        REQUIRE(sel.spec.m == 16);     // n_heads * d_k
        REQUIRE(sel.spec.d_in == 16);  // d_model
        REQUIRE(sel.wq.data == w.wq.data);
        REQUIRE(sel.wk.data == w.wk.data);
    }

    SECTION("latent variants use the up-projections") {
        for (Variant v : {Variant::MLA_PRE, Variant::MLA_NOPE}) {
            config.variant = v;
            const AttentionWeights w = init_weights(config, 32);
            TensorStore store;
            weights_to_store(store, 0, w, Dtype::f64);
            const QkSelection sel = select_qk_weights(store, 0, config);
            REQUIRE(sel.spec.m == 16);    // n_heads * d_k
            REQUIRE(sel.spec.d_in == 6);  // d_latent
            REQUIRE(sel.wq.data == w.wq_up.data);
            REQUIRE(sel.wk.data == w.wk_up.data);
        }
    }

    SECTION("decoupled variant analyzes the rotary branch, key replicated") {
        config.variant = Variant::MLA_DEC;
        const AttentionWeights w = init_weights(config, 33);
        TensorStore store;
        weights_to_store(store, 0, w, Dtype::f64);
        const QkSelection sel = select_qk_weights(store, 0, config);
        const std::size_t rd = config.rope_dim();  // 4
        REQUIRE(rd == 4);
        REQUIRE(sel.spec.m == config.n_heads * rd);
        REQUIRE(sel.spec.d_in == 6);
        REQUIRE(sel.wq.data == w.wq_rope.data);
        // Shared key branch appears once per head, row block by row block.
        REQUIRE(sel.wk.rows == config.n_heads * rd);
        for (std::size_t h = 0; h < config.n_heads; ++h)
            for (std::size_t r = 0; r < rd; ++r)
                for (std::size_t c = 0; c < 6; ++c)
                    REQUIRE(sel.wk(h * rd + r, c) == w.wk_rope(r, c));
    }

    SECTION("decoupled variant without a rotary branch cannot be analyzed") {
        config.variant = Variant::MLA_DEC;
        config.rope_frac = 0.0;
        const AttentionWeights w = init_weights(config, 34);
        TensorStore store;
        weights_to_store(store, 0, w, Dtype::f64);
        REQUIRE_THROWS_AS(select_qk_weights(store, 0, config), config_error);
    }
}
