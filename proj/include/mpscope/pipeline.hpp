#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpscope/attention.hpp"
#include "mpscope/gram.hpp"
#include "mpscope/io.hpp"
#include "mpscope/mpstats.hpp"
#include "mpscope/parallel.hpp"
#include "mpscope/rng.hpp"

namespace mpscope {

// Loads one layer's attention weights back out of a checkpoint, shape-checked
// against the config.
inline AttentionWeights weights_from_store(const TensorStore& store,
                                           std::size_t layer,
                                           const AttentionConfig& config) {
    AttentionWeights w = weight_shapes(config);
    w.for_each([&](const char* name, Matrix& m) {
        if (m.empty()) return;  // absent branch (e.g. rope_frac = 0)
        m = store.get_matrix(tensor_name(layer, name), m.rows, m.cols);
    });
    return w;
}

// Adds one layer's attention weights to a checkpoint snapshot.
inline void weights_to_store(TensorStore& store, std::size_t layer,
                             const AttentionWeights& weights, Dtype dtype) {
    weights.for_each([&](const char* name, const Matrix& m) {
        if (m.empty()) return;
        store.add_matrix(tensor_name(layer, name), m, dtype);
    });
}

// Number of consecutive attention layers present, detected via the value
// projection every variant carries.
inline std::size_t count_layers(const TensorStore& store) {
    std::size_t n = 0;
    while (store.has(tensor_name(n, "wv"))) ++n;
    if (n == 0) {
        throw config_error("checkpoint contains no attention layers (no '" +
                           tensor_name(0, "wv") + "')");
    }
    return n;
}

// Synthetic inputs for the attention-entropy diagnostic: a fixed seeded
// Gaussian batch with entry std 0.25, small enough that a freshly
// initialized block attends near-uniformly. The same probe is fed to every
// layer at every step so entropy readings are comparable along both axes.
inline Matrix entropy_probe_inputs(const AttentionConfig& config,
                                   std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(config.seq_len, config.d_model);
    for (auto& v : x.data) v = 0.25 * rng.gaussian();
    return x;
}

struct LayerAnalysis {
    GramSpec spec;
    SpectralMetrics metrics;
    double entropy_bits = 0.0;
};

// Full per-layer diagnostic sweep over a checkpoint: cross-Gram spectrum
// metrics plus the entropy probe. Layers fan out to parallel workers; each
// writes only its own slot, so results are deterministic.
inline std::vector<LayerAnalysis> analyze_store(const TensorStore& store,
                                                const AttentionConfig& config,
                                                EigenMode eigen_mode,
                                                const Matrix& probe) {
    const std::size_t n = count_layers(store);
    std::vector<LayerAnalysis> out(n);
    parallel_for(n, [&](std::size_t layer) {
        QkSelection sel = select_qk_weights(store, layer, config);
        sel.spec.eigen_mode = eigen_mode;
        const Spectrum spectrum = gram_spectrum(sel.wq, sel.wk, sel.spec);
        out[layer].spec = sel.spec;
        out[layer].metrics = spectral_metrics(spectrum);

        const AttentionWeights w = weights_from_store(store, layer, config);
        AttentionTrace trace;
        attention_forward(w, probe, config, &trace);
        out[layer].entropy_bits = attention_entropy(trace.probs);
    });
    return out;
}

inline MetricsRow metrics_row_from(const LayerAnalysis& a, long long step) {
    MetricsRow r;
    r.step = step;
    r.layer = static_cast<long long>(a.spec.layer_index);
    r.variant = variant_name(a.spec.variant);
    r.m = a.spec.m;
    r.d_in = a.spec.d_in;
    r.gamma = a.metrics.gamma;
    r.lambda1 = a.metrics.lambda1;
    r.mp_gap = a.metrics.mp_gap;
    r.outlier_count = a.metrics.outlier_count;
    r.outlier_energy = a.metrics.outlier_energy;
    r.mp_soft_rank = a.metrics.mp_soft_rank;
    r.stable_rank = a.metrics.stable_rank;
    r.attention_entropy_bits = a.entropy_bits;
    return r;
}

}  // namespace mpscope
