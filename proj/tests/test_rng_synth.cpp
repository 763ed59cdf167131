#include <algorithm>
#include <cmath>
#include <set>

#include <catch2/catch_amalgamated.hpp>

#include "mpscope/gram.hpp"
#include "mpscope/mpstats.hpp"
#include "mpscope/rng.hpp"
#include "mpscope/synth.hpp"

using namespace mpscope;

namespace {

// Quadrature oracle for the bulk density: substituting
// x = lo + (hi - lo) * sin^2(u / 2) turns the square-root edge behavior
// into a smooth integrand on [0, pi], where composite Simpson converges fast.
// The sin^2 form (rather than the equivalent (1 - cos u) / 2) keeps x
// accurate near the lower edge, where 1 - cos u cancels badly.
double bulk_integral(double gamma, bool first_moment, std::size_t panels = 8192) {
    const double sg = std::sqrt(gamma);
    const double lo = (1.0 - sg) * (1.0 - sg);
    const double hi = (1.0 + sg) * (1.0 + sg);
    const double pi = 3.14159265358979323846;
    auto g = [&](double u) {
        const double s = std::sin(u / 2.0);
        const double x = lo + (hi - lo) * s * s;
        const double jac = (hi - lo) / 2.0 * std::sin(u);
        const double f = mp_density(x, gamma) * jac;
        return first_moment ? x * f : f;
    };
    const double h = pi / static_cast<double>(panels);
    // Endpoints are evaluated a hair inside the support: at gamma = 1 the
    // density's removable 0/0 at x = 0 would otherwise read as 0 where the
    // integrand's limit is 2/pi. The nudge perturbs the integral by O(1e-9)
    // times the endpoint weight h/3, far below the comparison margin.
    const double nudge = 1e-9;
    double sum = g(nudge) + g(pi - nudge);
    for (std::size_t i = 1; i < panels; ++i)
        sum += g(static_cast<double>(i) * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

}  // namespace

TEST_CASE("rng streams are deterministic and seed-sensitive") {
    Rng a(99), b(99), c(100);
    bool all_equal = true, any_equal_c = false;
    for (int i = 0; i < 1000; ++i) {
        const double x = a.uniform();
        all_equal = all_equal && (x == b.uniform());
        any_equal_c = any_equal_c || (x == c.uniform());
    }
    REQUIRE(all_equal);
    REQUIRE_FALSE(any_equal_c);
}

TEST_CASE("uniform draws lie in [0, 1)") {
    Rng rng(5);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("gaussian draws have the right first two moments") {
    Rng rng(7);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum2 += g * g;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("below(n) is bounded and covers small ranges") {
    Rng rng(11);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 5000; ++i) {
        const auto v = rng.below(7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    REQUIRE(seen.size() == 7);
}

TEST_CASE("gaussian_matrix is deterministic with the documented shape") {
    const Matrix a = gaussian_matrix(5, 3, 17);
    const Matrix b = gaussian_matrix(5, 3, 17);
    REQUIRE(a.rows == 5);
    REQUIRE(a.cols == 3);
    REQUIRE(a.data == b.data);
    const Matrix c = gaussian_matrix(5, 3, 18);
    REQUIRE(a.data != c.data);
    REQUIRE_THROWS_AS(gaussian_matrix(0, 3, 1), config_error);
}

TEST_CASE("wishart null spectrum: order, trace, and size guard") {
    const Spectrum s = wishart_null_spectrum(64, 64, 3);
    REQUIRE(s.values.size() == 64);
    REQUIRE(std::is_sorted(s.values.rbegin(), s.values.rend()));
    for (double v : s.values) REQUIRE(v >= 0.0);

    // Mean eigenvalue = ||X||_F^2 / (m * d_in), concentrating at 1.
    double mean = 0.0;
    for (double v : s.values) mean += v;
    mean /= static_cast<double>(s.values.size());
    REQUIRE(mean > 0.9);
    REQUIRE(mean < 1.1);

    const Spectrum again = wishart_null_spectrum(64, 64, 3);
    REQUIRE(s.values == again.values);

    REQUIRE_THROWS_AS(wishart_null_spectrum(8, 64, 1), config_error);
    REQUIRE_THROWS_AS(wishart_null_spectrum(64, 8, 1), config_error);
}

TEST_CASE("bulk density integrates to the bulk mass with unit first moment") {
    for (double gamma : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        const double mass = bulk_integral(gamma, false);
        const double expected_mass = std::min(1.0, 1.0 / gamma);
        REQUIRE(mass == Catch::Approx(expected_mass).margin(1e-10));
        REQUIRE(mass + mp_zero_mass(gamma) == Catch::Approx(1.0).margin(1e-10));

        const double moment = bulk_integral(gamma, true);
        REQUIRE(moment == Catch::Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("bulk density vanishes outside the support and rejects bad gamma") {
    const double gamma = 0.5;
    const auto edges = mp_edges(1, 2);  // gamma = 0.5
    REQUIRE(mp_density(edges.lambda_minus - 1e-9, gamma) == 0.0);
    REQUIRE(mp_density(edges.lambda_plus + 1e-9, gamma) == 0.0);
    REQUIRE(mp_density(-1.0, gamma) == 0.0);
    const double mid = (edges.lambda_minus + edges.lambda_plus) / 2.0;
    REQUIRE(mp_density(mid, gamma) > 0.0);
    REQUIRE_THROWS_AS(mp_density(1.0, 0.0), config_error);
    REQUIRE_THROWS_AS(mp_zero_mass(-1.0), config_error);
}

TEST_CASE("planted spikes are detected; the null pair is not") {
    GramSpec spec;
    spec.variant = Variant::MHA;
    spec.m = 64;
    spec.d_in = 64;
    spec.eigen_mode = EigenMode::SINGULAR;
    const auto edges = mp_edges(spec.m, spec.d_in);

    const auto spiked = spiked_pair(64, 64, 10.0, 1, 21);
    const Spectrum hot = gram_spectrum(spiked.first, spiked.second, spec);
    REQUIRE(hot.values.front() > edges.lambda_plus);

    const auto null_pair = spiked_pair(64, 64, 0.0, 1, 21);
    const Spectrum cold = gram_spectrum(null_pair.first, null_pair.second, spec);
    REQUIRE(cold.values.front() < edges.lambda_plus);

    const auto rerun = spiked_pair(64, 64, 10.0, 1, 21);
    REQUIRE(rerun.first.data == spiked.first.data);
    REQUIRE(rerun.second.data == spiked.second.data);

    REQUIRE_THROWS_AS(spiked_pair(64, 64, 10.0, 0, 1), config_error);
    REQUIRE_THROWS_AS(spiked_pair(64, 64, 10.0, 65, 1), config_error);
    REQUIRE_THROWS_AS(spiked_pair(64, 64, -1.0, 1, 1), config_error);
}
