#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpscope/attention.hpp"
#include "mpscope/errors.hpp"
#include "mpscope/io.hpp"
#include "mpscope/matrix.hpp"
#include "mpscope/pipeline.hpp"
#include "mpscope/rng.hpp"

namespace mpscope {

struct TrainConfig {
    AttentionConfig model;
    std::size_t n_layers = 2;
    std::size_t vocab_size = 64;
    std::size_t steps = 1000;
    std::size_t batch_size = 8;
    double learning_rate = 0.5;
    std::uint64_t seed = 1729;
    std::size_t log_every = 50;
    double corpus_sharpness = 0.9;

    // `bound_log_every` is relaxed by the overhead harness, which compares a
    // logging run against a non-logging one and may push the interval past
    // the step count to make logging a no-op.
    void validate(bool bound_log_every = true) const {
        model.validate();
        if (n_layers == 0) throw config_error("train: n_layers must be positive");
        if (vocab_size < 2) throw config_error("train: vocab_size must be >= 2");
        if (steps == 0) throw config_error("train: steps must be positive");
        if (batch_size == 0) throw config_error("train: batch_size must be positive");
        if (learning_rate <= 0.0) {
            throw config_error("train: learning_rate must be positive");
        }
        if (log_every == 0) throw config_error("train: log_every must be positive");
        if (bound_log_every && log_every > steps) {
            throw config_error("train: log_every (" + std::to_string(log_every) +
                               ") exceeds steps (" + std::to_string(steps) + ")");
        }
        if (!(corpus_sharpness > 0.0 && corpus_sharpness < 1.0)) {
            throw config_error("train: corpus_sharpness must lie in (0,1)");
        }
    }
};

// ---------------------------------------------------------------------------
// Synthetic corpus

// First-order Markov chain: from state s the next token is perm[s] with
// probability `sharpness`, otherwise uniform over the vocabulary. Sharpness
// near 1 gives near-deterministic successor structure; near 0, i.i.d. uniform
// tokens.
inline std::vector<int> synth_corpus(std::uint64_t seed, std::size_t vocab_size,
                                     std::size_t length, double sharpness) {
    if (vocab_size < 2) throw config_error("corpus: vocab_size must be >= 2");
    if (length < 2) throw config_error("corpus: length must be >= 2");
    if (!(sharpness > 0.0 && sharpness < 1.0)) {
        throw config_error("corpus: sharpness must lie in (0,1)");
    }
    Rng rng(seed);
    std::vector<int> perm(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i) perm[i] = static_cast<int>(i);
    for (std::size_t i = vocab_size - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(perm[i], perm[j]);
    }
    std::vector<int> seq(length);
    seq[0] = static_cast<int>(rng.below(vocab_size));
    for (std::size_t i = 1; i < length; ++i) {
        if (rng.uniform() < sharpness) {
            seq[i] = perm[static_cast<std::size_t>(seq[i - 1])];
        } else {
            seq[i] = static_cast<int>(rng.below(vocab_size));
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Model

inline constexpr double kRmsEps = 1e-6;

struct LayerParams {
    std::vector<double> gain;  // pre-norm gain, length d_model
    AttentionWeights attn;
};

// Attention-only residual stack: token embedding, n_layers of
// x <- x + attn(rmsnorm(x) * gain), then a linear unembedding. No final
// norm, no biases: the diagnostics target the attention weight spectra and
// everything else stays minimal.
struct ToyModel {
    AttentionConfig config;
    std::size_t n_layers = 0;
    std::size_t vocab_size = 0;
    Matrix embed;    // (vocab_size, d_model)
    std::vector<LayerParams> layers;
    Matrix unembed;  // (d_model, vocab_size)
};

namespace detail {

// Per-layer seeds spread across the 64-bit space so layers never share init
// streams (additive golden-ratio stepping, wraparound intended).
inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
    return seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(layer + 1);
}

}  // namespace detail

// Deterministic init. Embedding entries are unit Gaussians; the unembedding
// is scaled to 0.1/sqrt(d_model) so initial logits sit near zero and the
// first loss lands at ~ln(vocab_size). Gains start at 1.
inline ToyModel init_model(const TrainConfig& config) {
    config.validate(false);
    ToyModel m;
    m.config = config.model;
    m.n_layers = config.n_layers;
    m.vocab_size = config.vocab_size;
    Rng rng(config.seed);
    m.embed = Matrix(config.vocab_size, config.model.d_model);
    for (auto& v : m.embed.data) v = rng.gaussian();
    m.unembed = Matrix(config.model.d_model, config.vocab_size);
    const double unembed_std = 0.1 / std::sqrt(static_cast<double>(config.model.d_model));
    for (auto& v : m.unembed.data) v = unembed_std * rng.gaussian();
    m.layers.resize(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        m.layers[l].gain.assign(config.model.d_model, 1.0);
        m.layers[l].attn = init_weights(config.model, detail::layer_seed(config.seed, l));
    }
    return m;
}

struct LayerGrads {
    std::vector<double> gain;
    AttentionWeights attn;  // same shapes as the parameters, holding gradients
};

struct ModelGrads {
    Matrix embed;
    std::vector<LayerGrads> layers;
    Matrix unembed;
};

inline ModelGrads zero_grads(const ToyModel& model) {
    ModelGrads g;
    g.embed = Matrix(model.embed.rows, model.embed.cols);
    g.unembed = Matrix(model.unembed.rows, model.unembed.cols);
    g.layers.resize(model.n_layers);
    for (std::size_t l = 0; l < model.n_layers; ++l) {
        g.layers[l].gain.assign(model.config.d_model, 0.0);
        g.layers[l].attn = weight_shapes(model.config);
    }
    return g;
}

// Named view over every parameter (or gradient) buffer; init, the update
// rule, and the gradient checker all walk the same list so no role can be
// silently skipped.
struct ParamView {
    std::string role;
    double* data;
    std::size_t count;
};

inline std::vector<ParamView> param_views(ToyModel& model) {
    std::vector<ParamView> views;
    views.push_back({"embed", model.embed.data.data(), model.embed.size()});
    for (std::size_t l = 0; l < model.n_layers; ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        views.push_back({prefix + "gain", model.layers[l].gain.data(),
                         model.layers[l].gain.size()});
        model.layers[l].attn.for_each([&](const char* name, Matrix& m) {
            if (m.empty()) return;
            views.push_back({prefix + "attn." + name, m.data.data(), m.size()});
        });
    }
    views.push_back({"unembed", model.unembed.data.data(), model.unembed.size()});
    return views;
}

inline std::vector<ParamView> param_views(ModelGrads& grads) {
    std::vector<ParamView> views;
    views.push_back({"embed", grads.embed.data.data(), grads.embed.size()});
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        views.push_back({prefix + "gain", grads.layers[l].gain.data(),
                         grads.layers[l].gain.size()});
        grads.layers[l].attn.for_each([&](const char* name, Matrix& m) {
            if (m.empty()) return;
            views.push_back({prefix + "attn." + name, m.data.data(), m.size()});
        });
    }
    views.push_back({"unembed", grads.unembed.data.data(), grads.unembed.size()});
    return views;
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

// n = (x / rms(x)) * gain per row, rms including a small epsilon. Returns
// the per-row rms values needed by the backward pass.
inline std::vector<double> rmsnorm_forward(const Matrix& x,
                                           const std::vector<double>& gain,
                                           Matrix& out) {
    const std::size_t d = x.cols;
    out = Matrix(x.rows, d);
    std::vector<double> rms(x.rows);
    for (std::size_t p = 0; p < x.rows; ++p) {
        double ss = 0.0;
        for (std::size_t b = 0; b < d; ++b) ss += x(p, b) * x(p, b);
        const double r = std::sqrt(ss / static_cast<double>(d) + kRmsEps);
        rms[p] = r;
        for (std::size_t b = 0; b < d; ++b) out(p, b) = x(p, b) / r * gain[b];
    }
    return rms;
}

// Given d_out = dL/dn, accumulates dL/dgain and returns dL/dx.
// With u = x/r: dL/du_b = d_out_b * gain_b, and
// dL/dx_b = du_b / r - x_b * (sum_a du_a * x_a) / (d * r^3).
inline Matrix rmsnorm_backward(const Matrix& x, const std::vector<double>& gain,
                               const std::vector<double>& rms, const Matrix& d_out,
                               std::vector<double>& d_gain) {
    const std::size_t d = x.cols;
    Matrix dx(x.rows, d);
    for (std::size_t p = 0; p < x.rows; ++p) {
        const double r = rms[p];
        double dot = 0.0;
        for (std::size_t b = 0; b < d; ++b) {
            const double du = d_out(p, b) * gain[b];
            d_gain[b] += d_out(p, b) * x(p, b) / r;
            dot += du * x(p, b);
        }
        const double corr = dot / (static_cast<double>(d) * r * r * r);
        for (std::size_t b = 0; b < d; ++b) {
            dx(p, b) = d_out(p, b) * gain[b] / r - x(p, b) * corr;
        }
    }
    return dx;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Attention backward

// Reverse-mode pass matching attention_forward exactly. `inputs` is the
// normalized residual the forward pass saw, `trace` its retained
// intermediates, `d_out` the gradient of the loss in the block's output.
// Weight gradients accumulate into `dw`; the return value is dL/d inputs.
inline Matrix attention_backward(const AttentionWeights& weights,
                                 const Matrix& inputs, const AttentionConfig& config,
                                 const AttentionTrace& trace, const Matrix& d_out,
                                 AttentionWeights& dw) {
    const std::size_t seq = inputs.rows;
    const std::size_t H = config.n_heads;
    const std::size_t dk = config.d_k;
    const std::size_t hk = H * dk;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    // Output projection: out = concat * wo^T.
    add_matmul_tn(dw.wo, d_out, trace.concat);
    const Matrix d_concat = matmul(d_out, weights.wo);  // (seq, hk)

    // Probability-weighted value sum and softmax, per head and query row.
    Matrix dq(seq, hk), dk_full(seq, hk), dv(seq, hk);
    std::vector<double> d_probs;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t qi = 0; qi < seq; ++qi) {
            const std::size_t limit = config.causal ? qi + 1 : seq;
            d_probs.assign(limit, 0.0);
            for (std::size_t ki = 0; ki < limit; ++ki) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) {
                    acc += d_concat(qi, h * dk + c) * trace.v.data[ki * hk + h * dk + c];
                    dv.data[ki * hk + h * dk + c] +=
                        trace.probs.at(h, qi, ki) * d_concat(qi, h * dk + c);
                }
                d_probs[ki] = acc;
            }
            // softmax: d_logit_k = p_k * (d_prob_k - sum_j p_j d_prob_j)
            double dot = 0.0;
            for (std::size_t ki = 0; ki < limit; ++ki) {
                dot += trace.probs.at(h, qi, ki) * d_probs[ki];
            }
            for (std::size_t ki = 0; ki < limit; ++ki) {
                const double d_logit =
                    trace.probs.at(h, qi, ki) * (d_probs[ki] - dot) * scale;
                for (std::size_t c = 0; c < dk; ++c) {
                    dq.data[qi * hk + h * dk + c] +=
                        d_logit * trace.k.data[ki * hk + h * dk + c];
                    dk_full.data[ki * hk + h * dk + c] +=
                        d_logit * trace.q.data[qi * hk + h * dk + c];
                }
            }
        }
    }

    // Values: v = inputs * wv^T.
    add_matmul_tn(dw.wv, dv, inputs);
    Matrix d_inputs = matmul(dv, weights.wv);  // (seq, d_model)

    // Query/key paths, by variant.
    switch (config.variant) {
        case Variant::MHA: {
            RopeTable rope(dk, seq, config.rope_base);
            for (std::size_t p = 0; p < seq; ++p) {
                for (std::size_t h = 0; h < H; ++h) {
                    rope.apply_inverse(&dq.data[p * hk + h * dk], p);
                    rope.apply_inverse(&dk_full.data[p * hk + h * dk], p);
                }
            }
            add_matmul_tn(dw.wq, dq, inputs);
            add_matmul_tn(dw.wk, dk_full, inputs);
            detail::add_inplace(d_inputs, matmul(dq, weights.wq));
            detail::add_inplace(d_inputs, matmul(dk_full, weights.wk));
            break;
        }
        case Variant::MLA_PRE: {
            add_matmul_tn(dw.wq_up, dq, trace.latent_r);
            add_matmul_tn(dw.wk_up, dk_full, trace.latent_r);
            Matrix d_latent = matmul(dq, weights.wq_up);  // (seq, d_latent)
            detail::add_inplace(d_latent, matmul(dk_full, weights.wk_up));
            RopeTable rope(config.d_latent, seq, config.rope_base);
            for (std::size_t p = 0; p < seq; ++p) {
                rope.apply_inverse(&d_latent.data[p * config.d_latent], p);
            }
            add_matmul_tn(dw.w_down, d_latent, inputs);
            detail::add_inplace(d_inputs, matmul(d_latent, weights.w_down));
            break;
        }
        case Variant::MLA_NOPE: {
            add_matmul_tn(dw.wq_up, dq, trace.latent);
            add_matmul_tn(dw.wk_up, dk_full, trace.latent);
            Matrix d_latent = matmul(dq, weights.wq_up);
            detail::add_inplace(d_latent, matmul(dk_full, weights.wk_up));
            add_matmul_tn(dw.w_down, d_latent, inputs);
            detail::add_inplace(d_inputs, matmul(d_latent, weights.w_down));
            break;
        }
        case Variant::MLA_DEC: {
            const std::size_t rd = config.rope_dim();
            const std::size_t cd = config.content_dim();
            // Unpack the per-head [content | rope] gradient blocks.
            Matrix dqc(seq, H * cd), dkc(seq, H * cd);
            for (std::size_t p = 0; p < seq; ++p) {
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t c = 0; c < cd; ++c) {
                        dqc(p, h * cd + c) = dq(p, h * dk + c);
                        dkc(p, h * cd + c) = dk_full(p, h * dk + c);
                    }
                }
            }
            add_matmul_tn(dw.wq_up, dqc, trace.latent);
            add_matmul_tn(dw.wk_up, dkc, trace.latent);
            Matrix d_latent = matmul(dqc, weights.wq_up);
            detail::add_inplace(d_latent, matmul(dkc, weights.wk_up));

            if (rd > 0) {
                Matrix dqr(seq, rd * H);
                Matrix dk_shared(seq, rd);
                for (std::size_t p = 0; p < seq; ++p) {
                    for (std::size_t h = 0; h < H; ++h) {
                        for (std::size_t c = 0; c < rd; ++c) {
                            dqr(p, h * rd + c) = dq(p, h * dk + cd + c);
                            // The rotated key rope vector is shared by every
                            // head, so its gradient sums over heads.
                            dk_shared(p, c) += dk_full(p, h * dk + cd + c);
                        }
                    }
                }
                RopeTable rope(rd, seq, config.rope_base);
                for (std::size_t p = 0; p < seq; ++p) {
                    for (std::size_t h = 0; h < H; ++h) {
                        rope.apply_inverse(&dqr.data[p * rd * H + h * rd], p);
                    }
                    rope.apply_inverse(&dk_shared.data[p * rd], p);
                }
                add_matmul_tn(dw.wq_rope, dqr, trace.latent);
                add_matmul_tn(dw.wk_rope, dk_shared, trace.latent);
                detail::add_inplace(d_latent, matmul(dqr, weights.wq_rope));
                detail::add_inplace(d_latent, matmul(dk_shared, weights.wk_rope));
            }
            add_matmul_tn(dw.w_down, d_latent, inputs);
            detail::add_inplace(d_inputs, matmul(d_latent, weights.w_down));
            break;
        }
    }
    return d_inputs;
}

// ---------------------------------------------------------------------------
// Loss

// Mean next-token cross-entropy (nats) over every predicted position in the
// batch. When `grads` is non-null it is zeroed and filled with dL/dtheta.
inline double batch_loss(ToyModel& model, const std::vector<std::vector<int>>& batch,
                         ModelGrads* grads) {
    if (batch.empty()) throw config_error("loss: empty batch");
    std::size_t total_preds = 0;
    for (const auto& window : batch) {
        if (window.size() < 2) {
            throw config_error("loss: window needs at least 2 tokens");
        }
        if (window.size() > model.config.seq_len) {
            throw config_error("loss: window length " + std::to_string(window.size()) +
                               " exceeds seq_len " + std::to_string(model.config.seq_len));
        }
        for (int t : window) {
            if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size) {
                throw config_error("loss: token " + std::to_string(t) +
                                   " outside vocabulary");
            }
        }
        total_preds += window.size() - 1;
    }
    if (grads) *grads = zero_grads(model);
    const double inv_preds = 1.0 / static_cast<double>(total_preds);
    const std::size_t d = model.config.d_model;
    const std::size_t V = model.vocab_size;

    double loss = 0.0;
    for (const auto& window : batch) {
        const std::size_t T = window.size();

        // Forward, retaining per-layer inputs, rms values, normalized
        // activations, and attention traces for the backward sweep.
        Matrix x(T, d);
        for (std::size_t p = 0; p < T; ++p) {
            const double* row = model.embed.row(static_cast<std::size_t>(window[p]));
            std::copy(row, row + d, x.row(p));
        }
        std::vector<Matrix> layer_in(model.n_layers);
        std::vector<std::vector<double>> layer_rms(model.n_layers);
        std::vector<Matrix> layer_norm(model.n_layers);
        std::vector<AttentionTrace> traces(model.n_layers);
        for (std::size_t l = 0; l < model.n_layers; ++l) {
            layer_in[l] = x;
            layer_rms[l] = detail::rmsnorm_forward(x, model.layers[l].gain,
                                                   layer_norm[l]);
            const Matrix attn_out = attention_forward(
                model.layers[l].attn, layer_norm[l], model.config, &traces[l]);
            detail::add_inplace(x, attn_out);
        }
        Matrix logits = matmul(x, model.unembed);  // (T, V)

        // Stable log-softmax cross-entropy against the next token.
        Matrix d_logits;
        if (grads) d_logits = Matrix(T, V);
        for (std::size_t p = 0; p + 1 < T; ++p) {
            double mx = logits(p, 0);
            for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, logits(p, v));
            double sum = 0.0;
            for (std::size_t v = 0; v < V; ++v) sum += std::exp(logits(p, v) - mx);
            const double lse = mx + std::log(sum);
            const std::size_t target = static_cast<std::size_t>(window[p + 1]);
            loss += (lse - logits(p, target)) * inv_preds;
            if (grads) {
                for (std::size_t v = 0; v < V; ++v) {
                    d_logits(p, v) = std::exp(logits(p, v) - lse) * inv_preds;
                }
                d_logits(p, target) -= inv_preds;
            }
        }
        if (!grads) continue;

        // Backward.
        add_matmul_tn(grads->unembed, x, d_logits);
        Matrix dx = matmul_nt(d_logits, model.unembed);  // (T, d)
        for (std::size_t l = model.n_layers; l-- > 0;) {
            const Matrix d_norm = attention_backward(
                model.layers[l].attn, layer_norm[l], model.config, traces[l], dx,
                grads->layers[l].attn);
            const Matrix d_res = detail::rmsnorm_backward(
                layer_in[l], model.layers[l].gain, layer_rms[l], d_norm,
                grads->layers[l].gain);
            detail::add_inplace(dx, d_res);
        }
        for (std::size_t p = 0; p < T; ++p) {
            double* g = grads->embed.row(static_cast<std::size_t>(window[p]));
            const double* src = dx.row(p);
            for (std::size_t b = 0; b < d; ++b) g[b] += src[b];
        }
    }
    return loss;
}

// One plain gradient-descent step. Throws before touching the parameters if
// the loss or any gradient is non-finite.
inline double train_step(ToyModel& model, const std::vector<std::vector<int>>& batch,
                         double learning_rate) {
    ModelGrads grads;
    const double loss = batch_loss(model, batch, &grads);
    if (!std::isfinite(loss)) {
        throw numeric_error("train: non-finite loss");
    }
    auto gviews = param_views(grads);
    for (const auto& gv : gviews) {
        for (std::size_t i = 0; i < gv.count; ++i) {
            if (!std::isfinite(gv.data[i])) {
                throw numeric_error("train: non-finite gradient in " + gv.role);
            }
        }
    }
    auto pviews = param_views(model);
    for (std::size_t v = 0; v < pviews.size(); ++v) {
        for (std::size_t i = 0; i < pviews[v].count; ++i) {
            pviews[v].data[i] -= learning_rate * gviews[v].data[i];
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Gradient verification

namespace detail {

// Central difference of a scalar function of one parameter slot.
template <typename Fn>
double central_diff(Fn&& f, double& slot, double epsilon) {
    const double saved = slot;
    slot = saved + epsilon;
    const double up = f();
    slot = saved - epsilon;
    const double down = f();
    slot = saved;
    return (up - down) / (2.0 * epsilon);
}

}  // namespace detail

// Compares analytic gradients against central differences on a deterministic
// sample of parameters covering every role (embedding, every gain, every
// attention matrix, unembedding), at least 200 in total. Returns the max
// relative error; pairs where both sides are below 1e-7 in magnitude count
// as exact agreement.
inline double finite_diff_check(ToyModel& model,
                                const std::vector<std::vector<int>>& batch,
                                double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw config_error("finite_diff_check: epsilon must lie in [1e-7, 1e-3]");
    }
    ModelGrads grads;
    batch_loss(model, batch, &grads);
    auto pviews = param_views(model);
    auto gviews = param_views(grads);

    const std::size_t per_role =
        std::max<std::size_t>(4, (200 + pviews.size() - 1) / pviews.size());
    Rng rng(12345);
    double worst = 0.0;
    for (std::size_t v = 0; v < pviews.size(); ++v) {
        for (std::size_t s = 0; s < per_role && s < pviews[v].count; ++s) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.below(pviews[v].count));
            const double analytic = gviews[v].data[idx];
            const double numeric = detail::central_diff(
                [&]() { return batch_loss(model, batch, nullptr); },
                pviews[v].data[idx], epsilon);
            const double mag = std::max(std::abs(analytic), std::abs(numeric));
            if (mag < 1e-7) continue;
            worst = std::max(worst, std::abs(analytic - numeric) / mag);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Perplexity

// exp(mean next-token cross-entropy) over consecutive windows of the token
// sequence.
inline double perplexity(ToyModel& model, const std::vector<int>& tokens) {
    if (tokens.size() < 2) throw config_error("perplexity: need at least 2 tokens");
    std::vector<std::vector<int>> windows;
    for (std::size_t start = 0; start + 1 < tokens.size();
         start += model.config.seq_len) {
        const std::size_t end =
            std::min(tokens.size(), start + model.config.seq_len);
        if (end - start < 2) break;
        windows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                             tokens.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return std::exp(batch_loss(model, windows, nullptr));
}

// ---------------------------------------------------------------------------
// Training runs

struct RunOptions {
    bool log_spectra = true;   // write checkpoints and metrics rows
    Dtype ckpt_dtype = Dtype::f32;
    EigenMode eigen_mode = EigenMode::SINGULAR;
};

struct RunResult {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double perplexity = 0.0;
    std::vector<long long> logged_steps;
    std::vector<std::string> checkpoint_paths;
    std::string metrics_path;
    std::string run_json_path;
};

namespace detail {

inline constexpr std::size_t kCorpusLength = 8192;
inline constexpr std::size_t kHoldoutLength = 1024;
// Separate stream for batch sampling so corpus generation and model init
// never interact with it.
inline constexpr std::uint64_t kSamplerSalt = 0xb5ad4eceda1ce2a9ULL;

inline TensorStore snapshot_model(const ToyModel& model, Dtype dtype) {
    TensorStore store;
    store.add_matrix("embed", model.embed, dtype);
    for (std::size_t l = 0; l < model.n_layers; ++l) {
        store.add("layers." + std::to_string(l) + ".gain", dtype,
                  {model.layers[l].gain.size()}, model.layers[l].gain);
        weights_to_store(store, l, model.layers[l].attn, dtype);
    }
    store.add_matrix("unembed", model.unembed, dtype);
    return store;
}

}  // namespace detail

// Full training run: every log_every steps (step 0 always included) a
// checkpoint is written and analyzed layer-by-layer, metrics rows are
// appended, and the run finishes with held-out perplexity plus a run.json
// config echo. Spectral analysis reads the checkpoint snapshot — not the
// live weights — so offline re-analysis of the written file reproduces the
// metrics rows exactly.
inline RunResult run_training(const TrainConfig& config, const std::string& out_dir,
                              const RunOptions& options = {}) {
    config.validate(options.log_spectra);
    std::filesystem::create_directories(out_dir);

    const std::vector<int> corpus =
        synth_corpus(config.seed, config.vocab_size, detail::kCorpusLength,
                     config.corpus_sharpness);
    const std::size_t train_len = detail::kCorpusLength - detail::kHoldoutLength;
    if (config.model.seq_len + 1 > train_len) {
        throw config_error("train: seq_len too large for the training corpus");
    }
    const std::vector<int> holdout(corpus.begin() + static_cast<std::ptrdiff_t>(train_len),
                                   corpus.end());

    ToyModel model = init_model(config);
    Rng sampler(config.seed ^ detail::kSamplerSalt);
    const Matrix probe = entropy_probe_inputs(config.model, config.seed);

    RunResult result;
    result.metrics_path = out_dir + "/metrics.csv";
    result.run_json_path = out_dir + "/run.json";
    if (options.log_spectra) {
        std::ofstream truncate(result.metrics_path, std::ios::trunc);
        if (!truncate) {
            throw io_error("cannot open '" + result.metrics_path + "' for writing");
        }
    }

    auto log_step = [&](long long step) {
        const TensorStore store = detail::snapshot_model(model, options.ckpt_dtype);
        const std::string ckpt_path =
            out_dir + "/ckpt_" + std::to_string(step) + ".nt";
        write_tensors(store, ckpt_path);
        const auto analyses =
            analyze_store(store, config.model, options.eigen_mode, probe);
        for (const auto& a : analyses) {
            append_metrics_row(result.metrics_path, metrics_row_from(a, step));
        }
        result.logged_steps.push_back(step);
        result.checkpoint_paths.push_back(ckpt_path);
    };

    if (options.log_spectra) log_step(0);

    auto sample_batch = [&]() {
        std::vector<std::vector<int>> batch(config.batch_size);
        for (auto& window : batch) {
            const std::size_t offset = static_cast<std::size_t>(
                sampler.below(train_len - config.model.seq_len));
            window.assign(corpus.begin() + static_cast<std::ptrdiff_t>(offset),
                          corpus.begin() +
                              static_cast<std::ptrdiff_t>(offset + config.model.seq_len));
        }
        return batch;
    };

    double loss = 0.0;
    for (std::size_t step = 1; step <= config.steps; ++step) {
        const auto batch = sample_batch();
        try {
            loss = train_step(model, batch, config.learning_rate);
        } catch (const numeric_error& e) {
            throw numeric_error("step " + std::to_string(step) + ": " + e.what());
        }
        if (step == 1) result.initial_loss = loss;
        if (options.log_spectra && step % config.log_every == 0) {
            log_step(static_cast<long long>(step));
        }
    }
    result.final_loss = loss;
    result.perplexity = perplexity(model, holdout);

    nlohmann::ordered_json run;
    run["config"] = {
        {"variant", variant_name(config.model.variant)},
        {"d_model", config.model.d_model},
        {"n_heads", config.model.n_heads},
        {"d_k", config.model.d_k},
        {"d_latent", config.model.d_latent},
        {"rope_frac", config.model.rope_frac},
        {"rope_base", config.model.rope_base},
        {"seq_len", config.model.seq_len},
        {"causal", config.model.causal},
        {"n_layers", config.n_layers},
        {"vocab_size", config.vocab_size},
        {"steps", config.steps},
        {"batch_size", config.batch_size},
        {"learning_rate", config.learning_rate},
        {"seed", config.seed},
        {"log_every", config.log_every},
        {"corpus_sharpness", config.corpus_sharpness},
        {"ckpt_dtype", dtype_name(options.ckpt_dtype)},
        {"eigen_mode", eigen_mode_name(options.eigen_mode)},
        {"log_spectra", options.log_spectra},
    };
    run["results"] = {
        {"initial_loss", result.initial_loss},
        {"final_loss", result.final_loss},
        {"perplexity", result.perplexity},
        {"logged_steps", result.logged_steps},
        {"checkpoints", result.checkpoint_paths},
    };
    std::ofstream rj(result.run_json_path, std::ios::trunc);
    if (!rj) throw io_error("cannot open '" + result.run_json_path + "' for writing");
    rj << run.dump(2) << '\n';
    rj.flush();
    if (!rj) throw io_error("write failed for '" + result.run_json_path + "'");
    return result;
}

}  // namespace mpscope
