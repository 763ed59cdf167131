#include <cmath>
#include <limits>

#include <catch2/catch_amalgamated.hpp>

#include "mpscope/matrix.hpp"

using namespace mpscope;

TEST_CASE("matrix construction and element access") {
    Matrix a(2, 3);
    REQUIRE(a.rows == 2);
    REQUIRE(a.cols == 3);
    REQUIRE(a.size() == 6);
    for (double v : a.data) REQUIRE(v == 0.0);

    a(0, 0) = 1.0;
    a(1, 2) = -2.5;
    REQUIRE(a(0, 0) == 1.0);
    REQUIRE(a(1, 2) == -2.5);
    REQUIRE(a.row(1)[2] == -2.5);

    const Matrix i3 = Matrix::identity(3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            REQUIRE(i3(r, c) == (r == c ? 1.0 : 0.0));

    REQUIRE(Matrix().empty());
    REQUIRE_FALSE(a.empty());
}

TEST_CASE("matmul matches a hand-computed product") {
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    const Matrix c = matmul(a, b);
    REQUIRE(c.rows == 2);
    REQUIRE(c.cols == 2);
    REQUIRE(c(0, 0) == 58.0);
    REQUIRE(c(0, 1) == 64.0);
    REQUIRE(c(1, 0) == 139.0);
    REQUIRE(c(1, 1) == 154.0);
}

TEST_CASE("matmul_nt equals multiplying by the transpose") {
    const Matrix a(2, 3, {1, -2, 3, 0.5, 4, -1});
    const Matrix b(4, 3, {2, 1, 0, -1, 3, 2, 0, 0, 1, 5, -2, 4});
    const Matrix direct = matmul(a, transpose(b));
    const Matrix fused = matmul_nt(a, b);
    REQUIRE(fused.rows == 2);
    REQUIRE(fused.cols == 4);
    for (std::size_t i = 0; i < fused.size(); ++i)
        REQUIRE(fused.data[i] == Catch::Approx(direct.data[i]).margin(1e-14));
}

TEST_CASE("add_matmul_tn accumulates a^T * b") {
    const Matrix a(3, 2, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 4, {1, 0, 2, 1, 0, 1, 1, 0, 2, 2, 0, 3});
    Matrix c(2, 4);
    c(0, 0) = 100.0;  // accumulation must preserve prior content
    add_matmul_tn(c, a, b);
    const Matrix expect = matmul(transpose(a), b);
    REQUIRE(c(0, 0) == Catch::Approx(100.0 + expect(0, 0)).margin(1e-14));
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t col = 1; col < 4; ++col)
            REQUIRE(c(r, col) == Catch::Approx(expect(r, col)).margin(1e-14));
}

TEST_CASE("shape mismatches are rejected") {
    const Matrix a(2, 3);
    const Matrix b(2, 2);
    REQUIRE_THROWS_AS(matmul(a, b), config_error);
    REQUIRE_THROWS_AS(matmul_nt(a, Matrix(4, 4)), config_error);
    Matrix c(3, 2);
    REQUIRE_THROWS_AS(add_matmul_tn(c, a, Matrix(5, 2)), config_error);
}

TEST_CASE("transpose and frobenius_norm") {
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix t = transpose(a);
    REQUIRE(t.rows == 3);
    REQUIRE(t.cols == 2);
    REQUIRE(t(2, 1) == 6.0);
    REQUIRE(t(0, 1) == 4.0);

    const Matrix p(1, 2, {3, 4});
    REQUIRE(frobenius_norm(p) == Catch::Approx(5.0).margin(1e-15));
}

TEST_CASE("all_finite detects NaN and infinity") {
    Matrix a(2, 2, {1, 2, 3, 4});
    REQUIRE(a.all_finite());
    a(0, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(a.all_finite());
    a(0, 1) = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(a.all_finite());
}
