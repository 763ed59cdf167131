#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mpscope/errors.hpp"
#include "mpscope/matrix.hpp"
#include "mpscope/rng.hpp"

namespace mpscope {

enum class Variant { MHA, MLA_PRE, MLA_DEC, MLA_NOPE };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::MHA: return "mha";
        case Variant::MLA_PRE: return "mla-pre";
        case Variant::MLA_DEC: return "mla-dec";
        case Variant::MLA_NOPE: return "mla-nope";
    }
    throw config_error("unreachable variant");
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "mha") return Variant::MHA;
    if (s == "mla-pre") return Variant::MLA_PRE;
    if (s == "mla-dec") return Variant::MLA_DEC;
    if (s == "mla-nope") return Variant::MLA_NOPE;
    throw config_error("unknown variant '" + s +
                       "' (expected mha|mla-pre|mla-dec|mla-nope)");
}

struct AttentionConfig {
    Variant variant = Variant::MHA;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_k = 16;
    std::size_t d_latent = 8;
    double rope_frac = 0.5;    // MLA_DEC only
    double rope_base = 10000.0;
    std::size_t seq_len = 32;
    bool causal = true;

    bool uses_latent() const { return variant != Variant::MHA; }

    // Rotary coordinates per head in the decoupled variant.
    std::size_t rope_dim() const {
        if (variant != Variant::MLA_DEC) return 0;
        return static_cast<std::size_t>(std::llround(rope_frac * static_cast<double>(d_k)));
    }

    std::size_t content_dim() const { return d_k - rope_dim(); }

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_k == 0 || seq_len == 0) {
            throw config_error("config: dimensions must be positive");
        }
        if (d_k % 2 != 0) {
            throw config_error("config: d_k must be even, got " + std::to_string(d_k));
        }
        if (d_model != n_heads * d_k) {
            throw config_error("config: d_model (" + std::to_string(d_model) +
                               ") != n_heads*d_k (" + std::to_string(n_heads * d_k) + ")");
        }
        if (uses_latent()) {
            if (d_latent == 0 || d_latent % 2 != 0) {
                throw config_error("config: d_latent must be positive and even, got " +
                                   std::to_string(d_latent));
            }
            if (d_latent >= n_heads * d_k) {
                throw config_error("config: d_latent (" + std::to_string(d_latent) +
                                   ") must compress below n_heads*d_k (" +
                                   std::to_string(n_heads * d_k) + ")");
            }
        }
        if (variant == Variant::MLA_DEC) {
            if (rope_frac < 0.0 || rope_frac > 1.0) {
                throw config_error("config: rope_frac must lie in [0,1], got " +
                                   std::to_string(rope_frac));
            }
            const double exact = rope_frac * static_cast<double>(d_k);
            const double rounded = std::llround(exact);
            if (std::abs(exact - rounded) > 1e-9) {
                throw config_error("config: rope_frac*d_k = " + std::to_string(exact) +
                                   " is not an integer");
            }
            const std::size_t rd = rope_dim();
            if (rd != 0 && (rd % 2 != 0 || rd < 2)) {
                throw config_error("config: rope dimension " + std::to_string(rd) +
                                   " must be even and >= 2 (or zero)");
            }
        }
        if (rope_base <= 0.0) {
            throw config_error("config: rope_base must be positive");
        }
    }
};

// Weight matrices for one attention block. Only the fields belonging to the
// active variant are populated; the rest stay 0x0.
//   MHA:                     wq, wk (H*d_k, d_model)
//   MLA_PRE / MLA_NOPE:      w_down (d_latent, d_model), wq_up, wk_up (H*d_k, d_latent)
//   MLA_DEC:                 as MLA_PRE with content dims H*content_dim, plus
//                            wq_rope (rope_dim*H, d_latent), wk_rope (rope_dim, d_latent)
//   all variants:            wv (H*d_k, d_model), wo (d_model, H*d_k)
struct AttentionWeights {
    Variant variant = Variant::MHA;
    Matrix wq, wk;               // MHA
    Matrix w_down, wq_up, wk_up; // MLA family
    Matrix wq_rope, wk_rope;     // MLA_DEC
    Matrix wv, wo;               // all variants

    // Iteration over live matrices, in a fixed order shared by init, the
    // optimizer, and checkpoint serialization.
    template <typename Fn>
    void for_each(Fn&& fn) {
        switch (variant) {
            case Variant::MHA:
                fn("wq", wq);
                fn("wk", wk);
                break;
            case Variant::MLA_PRE:
            case Variant::MLA_NOPE:
                fn("w_down", w_down);
                fn("wq_up", wq_up);
                fn("wk_up", wk_up);
                break;
            case Variant::MLA_DEC:
                fn("w_down", w_down);
                fn("wq_up", wq_up);
                fn("wk_up", wk_up);
                fn("wq_rope", wq_rope);
                fn("wk_rope", wk_rope);
                break;
        }
        fn("wv", wv);
        fn("wo", wo);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        const_cast<AttentionWeights*>(this)->for_each(
            [&](const char* name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
    }
};

// Zero-filled weight set with the exact shapes the config dictates; the
// single source of shape truth for init, checkpoint loading, and gradient
// buffers. A decoupled config with rope_frac = 0 leaves the rotary matrices
// 0x0.
inline AttentionWeights weight_shapes(const AttentionConfig& config) {
    config.validate();
    AttentionWeights w;
    w.variant = config.variant;
    const std::size_t hk = config.n_heads * config.d_k;
    switch (config.variant) {
        case Variant::MHA:
            w.wq = Matrix(hk, config.d_model);
            w.wk = Matrix(hk, config.d_model);
            break;
        case Variant::MLA_PRE:
        case Variant::MLA_NOPE:
            w.w_down = Matrix(config.d_latent, config.d_model);
            w.wq_up = Matrix(hk, config.d_latent);
            w.wk_up = Matrix(hk, config.d_latent);
            break;
        case Variant::MLA_DEC: {
            const std::size_t hc = config.n_heads * config.content_dim();
            const std::size_t rd = config.rope_dim();
            w.w_down = Matrix(config.d_latent, config.d_model);
            w.wq_up = Matrix(hc, config.d_latent);
            w.wk_up = Matrix(hc, config.d_latent);
            if (rd > 0) {
                w.wq_rope = Matrix(rd * config.n_heads, config.d_latent);
                w.wk_rope = Matrix(rd, config.d_latent);
            }
            break;
        }
    }
    w.wv = Matrix(hk, config.d_model);
    w.wo = Matrix(config.d_model, hk);
    return w;
}

// Deterministic Gaussian init, std 1/sqrt(fan_in) per matrix (fan_in = column
// count). Matrices are drawn in for_each order; variants that share a prefix
// of that order (e.g. decoupled with rope_frac = 0 versus no-rotation)
// therefore share the corresponding draws given the same seed.
inline AttentionWeights init_weights(const AttentionConfig& config,
                                     std::uint64_t seed) {
    AttentionWeights w = weight_shapes(config);
    Rng rng(seed);
    w.for_each([&](const char*, Matrix& m) {
        if (m.empty()) return;
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(m.cols));
        for (auto& v : m.data) v = std_dev * rng.gaussian();
    });
    return w;
}

// ---------------------------------------------------------------------------
// Rotary embedding

// Precomputed cos/sin tables for rotating vectors of length `dim` at
// positions [0, seq_len). Pair j rotates by angle position * base^(-2j/dim).
struct RopeTable {
    std::size_t dim = 0;
    std::vector<double> cos_t;  // (seq_len, dim/2), row-major
    std::vector<double> sin_t;

    RopeTable() = default;
    RopeTable(std::size_t dim_, std::size_t seq_len, double base) : dim(dim_) {
        if (dim % 2 != 0) {
            throw config_error("rope: dimension must be even, got " + std::to_string(dim));
        }
        const std::size_t half = dim / 2;
        cos_t.resize(seq_len * half);
        sin_t.resize(seq_len * half);
        for (std::size_t p = 0; p < seq_len; ++p) {
            for (std::size_t j = 0; j < half; ++j) {
                const double theta =
                    static_cast<double>(p) *
                    std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
                cos_t[p * half + j] = std::cos(theta);
                sin_t[p * half + j] = std::sin(theta);
            }
        }
    }

    // In-place rotation of x[0..dim) at `position`.
    void apply(double* x, std::size_t position) const {
        const std::size_t half = dim / 2;
        const double* c = cos_t.data() + position * half;
        const double* s = sin_t.data() + position * half;
        for (std::size_t j = 0; j < half; ++j) {
            const double a = x[2 * j];
            const double b = x[2 * j + 1];
            x[2 * j] = a * c[j] - b * s[j];
            x[2 * j + 1] = a * s[j] + b * c[j];
        }
    }

    // Inverse rotation; used by gradient propagation (rotations are
    // orthogonal, so the inverse is the transpose).
    void apply_inverse(double* x, std::size_t position) const {
        const std::size_t half = dim / 2;
        const double* c = cos_t.data() + position * half;
        const double* s = sin_t.data() + position * half;
        for (std::size_t j = 0; j < half; ++j) {
            const double a = x[2 * j];
            const double b = x[2 * j + 1];
            x[2 * j] = a * c[j] + b * s[j];
            x[2 * j + 1] = -a * s[j] + b * c[j];
        }
    }
};

// One-off rotation of a vector copy; the forward passes use RopeTable
// directly.
inline std::vector<double> rope_rotate(const std::vector<double>& x,
                                       std::size_t position, double base) {
    if (x.size() % 2 != 0) {
        throw config_error("rope: vector length must be even, got " +
                           std::to_string(x.size()));
    }
    RopeTable table(x.size(), position + 1, base);
    std::vector<double> out = x;
    if (!out.empty()) table.apply(out.data(), position);
    return out;
}

// ---------------------------------------------------------------------------
// Attention probabilities

// Probabilities indexed (head, query, key), each stored row-major as
// (seq_len, seq_len) with masked entries exactly zero.
struct AttentionProbs {
    std::size_t n_heads = 0;
    std::size_t seq_len = 0;
    std::vector<double> data;

    AttentionProbs() = default;
    AttentionProbs(std::size_t heads, std::size_t len)
        : n_heads(heads), seq_len(len), data(heads * len * len, 0.0) {}

    double& at(std::size_t h, std::size_t q, std::size_t k) {
        return data[(h * seq_len + q) * seq_len + k];
    }
    double at(std::size_t h, std::size_t q, std::size_t k) const {
        return data[(h * seq_len + q) * seq_len + k];
    }
};

// Mean Shannon entropy in bits over heads and query positions; each row's
// entropy is taken over its causally valid keys with 0*log 0 := 0.
inline double attention_entropy(const AttentionProbs& probs) {
    if (probs.n_heads == 0 || probs.seq_len == 0) {
        throw config_error("entropy: empty probability tensor");
    }
    constexpr double kLog2 = 0.6931471805599453;  // ln 2
    double total = 0.0;
    for (std::size_t h = 0; h < probs.n_heads; ++h) {
        for (std::size_t q = 0; q < probs.seq_len; ++q) {
            double sum = 0.0, ent = 0.0;
            for (std::size_t k = 0; k < probs.seq_len; ++k) {
                const double p = probs.at(h, q, k);
                if (p < 0.0) {
                    throw numeric_error("entropy: negative probability at head " +
                                        std::to_string(h) + ", query " + std::to_string(q));
                }
                sum += p;
                if (p > 0.0) ent -= p * std::log(p);
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw numeric_error("entropy: row (head " + std::to_string(h) +
                                    ", query " + std::to_string(q) + ") sums to " +
                                    std::to_string(sum) + ", not 1");
            }
            total += ent / kLog2;
        }
    }
    return total / static_cast<double>(probs.n_heads * probs.seq_len);
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

// Numerically stable softmax over logits[0..n); writes probabilities in
// place.
inline void softmax_inplace(double* logits, std::size_t n) {
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] = std::exp(logits[i] - mx);
        sum += logits[i];
    }
    for (std::size_t i = 0; i < n; ++i) logits[i] /= sum;
}

}  // namespace detail

// Intermediate activations retained for gradient propagation. Layout notes:
//   latent   (seq, d_latent)         pre-rotation latent (MLA family)
//   latent_r (seq, d_latent)         rotated latent (MLA_PRE only)
//   q, k     (seq, H*d_k)            per-head query/key blocks, post-rotation;
//                                    MLA_DEC packs [content | rope] per head
//   k_rope_shared (seq, rope_dim)    rotated shared key rope vector (MLA_DEC)
//   v        (seq, H*d_k)            value blocks
//   concat   (seq, H*d_k)            pre-output-projection head concat
struct AttentionTrace {
    Matrix latent, latent_r;
    Matrix q, k;
    Matrix k_rope_shared;
    Matrix v;
    Matrix concat;
    AttentionProbs probs;
};

// Runs one attention block over `inputs` (seq_len, d_model). Returns outputs
// (seq_len, d_model); fills `trace` when provided so the caller can run the
// corresponding backward pass.
inline Matrix attention_forward(const AttentionWeights& weights, const Matrix& inputs,
                                const AttentionConfig& config,
                                AttentionTrace* trace = nullptr) {
    config.validate();
    if (inputs.cols != config.d_model) {
        throw config_error("attention: inputs have " + std::to_string(inputs.cols) +
                           " columns, expected d_model = " + std::to_string(config.d_model));
    }
    if (inputs.rows == 0 || inputs.rows > config.seq_len) {
        throw config_error("attention: sequence length " + std::to_string(inputs.rows) +
                           " outside [1, " + std::to_string(config.seq_len) + "]");
    }
    const std::size_t seq = inputs.rows;
    const std::size_t H = config.n_heads;
    const std::size_t dk = config.d_k;
    const std::size_t hk = H * dk;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    AttentionTrace local;
    AttentionTrace& t = trace ? *trace : local;

    // Q/K construction per variant. t.q / t.k end up (seq, H*d_k) with
    // rotations already applied; MLA_DEC packs [content | rope] per head and
    // keeps the shared key rope vector separately.
    switch (config.variant) {
        case Variant::MHA: {
            t.q = matmul_nt(inputs, weights.wq);  // (seq, H*d_k)
            t.k = matmul_nt(inputs, weights.wk);
            RopeTable rope(dk, seq, config.rope_base);
            for (std::size_t p = 0; p < seq; ++p) {
                for (std::size_t h = 0; h < H; ++h) {
                    rope.apply(&t.q.data[p * hk + h * dk], p);
                    rope.apply(&t.k.data[p * hk + h * dk], p);
                }
            }
            break;
        }
        case Variant::MLA_PRE: {
            t.latent = matmul_nt(inputs, weights.w_down);  // (seq, d_latent)
            t.latent_r = t.latent;
            RopeTable rope(config.d_latent, seq, config.rope_base);
            for (std::size_t p = 0; p < seq; ++p) {
                rope.apply(&t.latent_r.data[p * config.d_latent], p);
            }
            t.q = matmul_nt(t.latent_r, weights.wq_up);  // (seq, H*d_k)
            t.k = matmul_nt(t.latent_r, weights.wk_up);
            break;
        }
        case Variant::MLA_NOPE: {
            t.latent = matmul_nt(inputs, weights.w_down);
            t.q = matmul_nt(t.latent, weights.wq_up);
            t.k = matmul_nt(t.latent, weights.wk_up);
            break;
        }
        case Variant::MLA_DEC: {
            const std::size_t rd = config.rope_dim();
            const std::size_t cd = config.content_dim();
            t.latent = matmul_nt(inputs, weights.w_down);
            const Matrix qc = matmul_nt(t.latent, weights.wq_up);  // (seq, H*cd)
            const Matrix kc = matmul_nt(t.latent, weights.wk_up);
            t.q = Matrix(seq, hk);
            t.k = Matrix(seq, hk);
            for (std::size_t p = 0; p < seq; ++p) {
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t c = 0; c < cd; ++c) {
                        t.q(p, h * dk + c) = qc(p, h * cd + c);
                        t.k(p, h * dk + c) = kc(p, h * cd + c);
                    }
                }
            }
            if (rd > 0) {
                Matrix qr = matmul_nt(t.latent, weights.wq_rope);  // (seq, rd*H)
                t.k_rope_shared = matmul_nt(t.latent, weights.wk_rope);  // (seq, rd)
                RopeTable rope(rd, seq, config.rope_base);
                for (std::size_t p = 0; p < seq; ++p) {
                    for (std::size_t h = 0; h < H; ++h) {
                        rope.apply(&qr.data[p * rd * H + h * rd], p);
                    }
                    rope.apply(&t.k_rope_shared.data[p * rd], p);
                }
                for (std::size_t p = 0; p < seq; ++p) {
                    for (std::size_t h = 0; h < H; ++h) {
                        for (std::size_t c = 0; c < rd; ++c) {
                            t.q(p, h * dk + cd + c) = qr(p, h * rd + c);
                            t.k(p, h * dk + cd + c) = t.k_rope_shared(p, c);
                        }
                    }
                }
            }
            break;
        }
    }

    t.v = matmul_nt(inputs, weights.wv);  // (seq, H*d_k)

    // Logits, causal softmax, weighted value sum. The decoupled variant's
    // shared key rope vector is already packed into every head's k block, so
    // one dot product per (q, k) pair covers content + rope.
    t.probs = AttentionProbs(H, seq);
    t.concat = Matrix(seq, hk);
    std::vector<double> logits(seq);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t qi = 0; qi < seq; ++qi) {
            const std::size_t limit = config.causal ? qi + 1 : seq;
            for (std::size_t ki = 0; ki < limit; ++ki) {
                double dot = 0.0;
                const double* qp = &t.q.data[qi * hk + h * dk];
                const double* kp = &t.k.data[ki * hk + h * dk];
                for (std::size_t c = 0; c < dk; ++c) dot += qp[c] * kp[c];
                logits[ki] = dot * scale;
                if (!std::isfinite(logits[ki])) {
                    throw numeric_error("attention: non-finite logit at head " +
                                        std::to_string(h) + ", query " +
                                        std::to_string(qi) + ", key " + std::to_string(ki));
                }
            }
            detail::softmax_inplace(logits.data(), limit);
            for (std::size_t ki = 0; ki < limit; ++ki) {
                t.probs.at(h, qi, ki) = logits[ki];
            }
            for (std::size_t c = 0; c < dk; ++c) {
                double acc = 0.0;
                for (std::size_t ki = 0; ki < limit; ++ki) {
                    acc += t.probs.at(h, qi, ki) * t.v.data[ki * hk + h * dk + c];
                }
                t.concat(qi, h * dk + c) = acc;
            }
        }
    }

    return matmul_nt(t.concat, weights.wo);  // (seq, d_model)
}

}  // namespace mpscope
