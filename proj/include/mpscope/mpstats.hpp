#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mpscope/errors.hpp"
#include "mpscope/gram.hpp"

namespace mpscope {

// Bulk support of the Marchenko-Pastur law at aspect ratio gamma = m/d_in:
// lambda_pm = (1 +- sqrt(gamma))^2. Eigenvalues above lambda_plus are treated
// as structure; everything inside [lambda_minus, lambda_plus] as noise bulk.
struct MpEdges {
    double gamma = 0.0;
    double lambda_minus = 0.0;
    double lambda_plus = 0.0;
};

inline MpEdges mp_edges(std::size_t m, std::size_t d_in) {
    if (m == 0 || d_in == 0) {
        throw config_error("mp_edges: m and d_in must be positive");
    }
    MpEdges e;
    e.gamma = static_cast<double>(m) / static_cast<double>(d_in);
    const double sg = std::sqrt(e.gamma);
    e.lambda_plus = (1.0 + sg) * (1.0 + sg);
    // (1 - sqrt(g))^2 rewritten as ((1 - g) / (1 + sqrt(g)))^2, with 1 - g
    // formed from the integer operands: the direct form cancels near g = 1
    // and loses several digits there. This one is exact at m == d_in and
    // stays within a few ulp everywhere.
    const double diff = (static_cast<double>(d_in) - static_cast<double>(m)) /
                        static_cast<double>(d_in);
    const double ratio = diff / (1.0 + sg);
    e.lambda_minus = ratio * ratio;
    return e;
}

// Scalar summaries of one spectrum against its reference bulk:
//   mp_gap         max(0, lambda1 - lambda_plus)      spike strength
//   outlier_count  #{lambda_i > lambda_plus}          strict inequality
//   outlier_energy sum of outliers / total mass       0 when the total is 0
//   mp_soft_rank   lambda1 / lambda_plus
//   stable_rank    total mass / lambda1               0 when lambda1 is 0
// An all-zero spectrum (e.g. an unused branch at step 0) reports zeros
// everywhere instead of erroring.
struct SpectralMetrics {
    double mp_gap = 0.0;
    long long outlier_count = 0;
    double outlier_energy = 0.0;
    double mp_soft_rank = 0.0;
    double stable_rank = 0.0;
    double lambda1 = 0.0;
    double gamma = 0.0;
    long long n_eigs = 0;
};

inline SpectralMetrics spectral_metrics(const std::vector<double>& values,
                                        const MpEdges& edges) {
    if (values.empty()) {
        throw config_error("spectral_metrics: empty spectrum");
    }
    double total = 0.0;
    double outlier_sum = 0.0;
    long long outliers = 0;
    double prev = values.front();
    for (double v : values) {
        if (v < 0.0) {
            throw config_error("spectral_metrics: negative eigenvalue " +
                               std::to_string(v));
        }
        if (v > prev) {
            throw config_error("spectral_metrics: spectrum not sorted non-increasing");
        }
        prev = v;
        total += v;
        if (v > edges.lambda_plus) {
            outlier_sum += v;
            ++outliers;
        }
    }

    SpectralMetrics m;
    m.lambda1 = values.front();
    m.gamma = edges.gamma;
    m.n_eigs = static_cast<long long>(values.size());
    m.mp_gap = std::max(0.0, m.lambda1 - edges.lambda_plus);
    m.outlier_count = outliers;
    m.outlier_energy = total > 0.0 ? outlier_sum / total : 0.0;
    m.mp_soft_rank = m.lambda1 / edges.lambda_plus;
    m.stable_rank = m.lambda1 > 0.0 ? total / m.lambda1 : 0.0;
    return m;
}

inline SpectralMetrics spectral_metrics(const Spectrum& spectrum) {
    return spectral_metrics(spectrum.values,
                            mp_edges(spectrum.spec.m, spectrum.spec.d_in));
}

// ---------------------------------------------------------------------------
// Layer series aggregation

struct LayerSeriesPoint {
    long long step = 0;
    long long layer = 0;
    SpectralMetrics metrics;
};

struct MetricStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
};

// Mean +- population standard deviation over the layers logged at one step,
// for each spectral metric. Layers are the whole population being summarized,
// hence the population (not sample) deviation.
struct StepAggregate {
    long long step = 0;
    std::size_t n_layers = 0;
    MetricStats lambda1, mp_gap, outlier_count, outlier_energy, mp_soft_rank,
        stable_rank;
};

namespace detail {

inline MetricStats mean_std(const std::vector<double>& xs) {
    MetricStats s;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) s.mean += x;
    s.mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / n);
    return s;
}

}  // namespace detail

inline StepAggregate aggregate_layers(const std::vector<LayerSeriesPoint>& points,
                                      long long step) {
    std::vector<double> lambda1, gap, count, energy, soft, stable;
    for (const auto& p : points) {
        if (p.step != step) continue;
        lambda1.push_back(p.metrics.lambda1);
        gap.push_back(p.metrics.mp_gap);
        count.push_back(static_cast<double>(p.metrics.outlier_count));
        energy.push_back(p.metrics.outlier_energy);
        soft.push_back(p.metrics.mp_soft_rank);
        stable.push_back(p.metrics.stable_rank);
    }
    if (lambda1.empty()) {
        throw config_error("aggregate_layers: no points at step " +
                           std::to_string(step));
    }
    StepAggregate a;
    a.step = step;
    a.n_layers = lambda1.size();
    a.lambda1 = detail::mean_std(lambda1);
    a.mp_gap = detail::mean_std(gap);
    a.outlier_count = detail::mean_std(count);
    a.outlier_energy = detail::mean_std(energy);
    a.mp_soft_rank = detail::mean_std(soft);
    a.stable_rank = detail::mean_std(stable);
    return a;
}

}  // namespace mpscope
