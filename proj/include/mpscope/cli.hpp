#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpscope/attention.hpp"
#include "mpscope/errors.hpp"
#include "mpscope/gram.hpp"
#include "mpscope/io.hpp"
#include "mpscope/mpstats.hpp"
#include "mpscope/parallel.hpp"
#include "mpscope/pipeline.hpp"
#include "mpscope/synth.hpp"
#include "mpscope/train.hpp"

namespace mpscope {

// Fixed default seed for every randomized command, so runs are reproducible
// without any flags.
inline constexpr std::uint64_t kDefaultSeed = 1729;

namespace detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// Every command prints its fully resolved configuration on one line before
// doing any work.
inline void echo_config(const nlohmann::ordered_json& j) {
    std::cout << "config " << j.dump() << "\n";
}

inline std::string describe_metrics(const SpectralMetrics& m) {
    return "lambda1=" + fmt6(m.lambda1) + " mp_gap=" + fmt6(m.mp_gap) +
           " outliers=" + std::to_string(m.outlier_count) +
           " energy=" + fmt6(m.outlier_energy) +
           " soft_rank=" + fmt6(m.mp_soft_rank) +
           " stable_rank=" + fmt6(m.stable_rank);
}

}  // namespace detail

// Model-shape flags shared by the commands that construct attention configs.
struct ModelFlags {
    std::string variant = "mha";
    double rope_frac = 0.5;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_k = 16;
    std::size_t d_latent = 8;
    std::size_t seq_len = 32;
    double rope_base = 10000.0;

    AttentionConfig to_config() const {
        AttentionConfig c;
        c.variant = variant_from_name(variant);
        c.d_model = d_model;
        c.n_heads = n_heads;
        c.d_k = d_k;
        c.d_latent = d_latent;
        c.rope_frac = rope_frac;
        c.rope_base = rope_base;
        c.seq_len = seq_len;
        c.validate();
        return c;
    }

    void echo_into(nlohmann::ordered_json& j) const {
        j["variant"] = variant;
        j["rope_frac"] = rope_frac;
        j["d_model"] = d_model;
        j["n_heads"] = n_heads;
        j["d_k"] = d_k;
        j["d_latent"] = d_latent;
        j["seq_len"] = seq_len;
        j["rope_base"] = rope_base;
    }
};

// Training step a checkpoint file was written at, recovered from the
// `ckpt_{step}.nt` naming convention; 0 for files named otherwise.
inline long long step_from_ckpt_path(const std::string& path) {
    const std::string base = std::filesystem::path(path).filename().string();
    constexpr const char* prefix = "ckpt_";
    constexpr const char* suffix = ".nt";
    if (base.size() > 5 + 3 && base.rfind(prefix, 0) == 0 &&
        base.size() >= 3 && base.compare(base.size() - 3, 3, suffix) == 0) {
        const std::string digits = base.substr(5, base.size() - 8);
        if (!digits.empty() &&
            digits.find_first_not_of("0123456789") == std::string::npos) {
            try {
                return std::stoll(digits);
            } catch (const std::exception&) {
                return 0;
            }
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
    std::string ckpt;
    std::string out;
    ModelFlags model;
    std::string eigen_mode = "singular";
    std::uint64_t seed = kDefaultSeed;  // entropy probe seed
    long long step = -1;                // < 0: recover from the filename
};

inline std::vector<MetricsRow> cmd_analyze(const AnalyzeOptions& opts) {
    const AttentionConfig config = opts.model.to_config();
    const EigenMode mode = eigen_mode_from_name(opts.eigen_mode);
    const long long step =
        opts.step >= 0 ? opts.step : step_from_ckpt_path(opts.ckpt);

    nlohmann::ordered_json echo;
    echo["command"] = "analyze";
    echo["ckpt"] = opts.ckpt;
    echo["out"] = opts.out;
    opts.model.echo_into(echo);
    echo["eigen_mode"] = opts.eigen_mode;
    echo["seed"] = opts.seed;
    echo["step"] = step;
    detail::echo_config(echo);

    const TensorStore store = read_tensors(opts.ckpt);
    const Matrix probe = entropy_probe_inputs(config, opts.seed);
    const auto analyses = analyze_store(store, config, mode, probe);

    std::vector<MetricsRow> rows;
    rows.reserve(analyses.size());
    for (const auto& a : analyses) {
        MetricsRow row = metrics_row_from(a, step);
        append_metrics_row(opts.out, row);
        std::cout << "layer " << a.spec.layer_index << ": "
                  << detail::describe_metrics(a.metrics)
                  << " entropy_bits=" << detail::fmt6(a.entropy_bits) << "\n";
        rows.push_back(std::move(row));
    }
    std::cout << "wrote " << rows.size() << " rows to " << opts.out << "\n";
    return rows;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string out;
    ModelFlags model;
    std::size_t n_layers = 2;
    std::size_t vocab_size = 64;
    std::size_t steps = 1000;
    std::size_t batch_size = 8;
    double learning_rate = 0.5;
    std::uint64_t seed = kDefaultSeed;
    std::size_t log_every = 50;
    double corpus_sharpness = 0.9;
    std::string eigen_mode = "singular";
    bool store_f64 = false;

    TrainConfig to_train_config() const {
        TrainConfig c;
        c.model = model.to_config();
        c.n_layers = n_layers;
        c.vocab_size = vocab_size;
        c.steps = steps;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.seed = seed;
        c.log_every = log_every;
        c.corpus_sharpness = corpus_sharpness;
        return c;
    }

    RunOptions to_run_options() const {
        RunOptions o;
        o.ckpt_dtype = store_f64 ? Dtype::f64 : Dtype::f32;
        o.eigen_mode = eigen_mode_from_name(eigen_mode);
        return o;
    }

    void echo_into(nlohmann::ordered_json& j) const {
        j["out"] = out;
        model.echo_into(j);
        j["n_layers"] = n_layers;
        j["vocab_size"] = vocab_size;
        j["steps"] = steps;
        j["batch_size"] = batch_size;
        j["learning_rate"] = learning_rate;
        j["seed"] = seed;
        j["log_every"] = log_every;
        j["corpus_sharpness"] = corpus_sharpness;
        j["eigen_mode"] = eigen_mode;
        j["store_f64"] = store_f64;
    }
};

inline RunResult cmd_train(const TrainOptions& opts) {
    const TrainConfig config = opts.to_train_config();
    config.validate();

    nlohmann::ordered_json echo;
    echo["command"] = "train";
    opts.echo_into(echo);
    detail::echo_config(echo);

    const RunResult result = run_training(config, opts.out, opts.to_run_options());
    std::cout << "initial_loss " << format_double(result.initial_loss) << "\n"
              << "final_loss " << format_double(result.final_loss) << "\n"
              << "perplexity " << format_double(result.perplexity) << "\n"
              << "metrics " << result.metrics_path << "\n"
              << "run_json " << result.run_json_path << "\n";
    for (const auto& p : result.checkpoint_paths) {
        std::cout << "checkpoint " << p << "\n";
    }
    return result;
}

// ---------------------------------------------------------------------------
// null-sim / spike-sim

struct TrialStats {
    MetricStats lambda1, mp_gap, outlier_count, outlier_energy, mp_soft_rank,
        stable_rank;
};

inline TrialStats summarize_trials(const std::vector<SpectralMetrics>& trials) {
    auto collect = [&](auto field) {
        std::vector<double> xs;
        xs.reserve(trials.size());
        for (const auto& t : trials) xs.push_back(field(t));
        return detail::mean_std(xs);
    };
    TrialStats s;
    s.lambda1 = collect([](const SpectralMetrics& m) { return m.lambda1; });
    s.mp_gap = collect([](const SpectralMetrics& m) { return m.mp_gap; });
    s.outlier_count = collect(
        [](const SpectralMetrics& m) { return static_cast<double>(m.outlier_count); });
    s.outlier_energy = collect([](const SpectralMetrics& m) { return m.outlier_energy; });
    s.mp_soft_rank = collect([](const SpectralMetrics& m) { return m.mp_soft_rank; });
    s.stable_rank = collect([](const SpectralMetrics& m) { return m.stable_rank; });
    return s;
}

inline void print_trial_summary(const std::string& label, const TrialStats& s) {
    auto line = [&](const char* name, const MetricStats& st) {
        std::cout << label << " " << name << " mean=" << detail::fmt6(st.mean)
                  << " std=" << detail::fmt6(st.stddev) << "\n";
    };
    line("lambda1", s.lambda1);
    line("mp_gap", s.mp_gap);
    line("outlier_count", s.outlier_count);
    line("outlier_energy", s.outlier_energy);
    line("mp_soft_rank", s.mp_soft_rank);
    line("stable_rank", s.stable_rank);
}

struct NullSimOptions {
    std::size_t m = 256;
    std::size_t d_in = 256;
    std::size_t trials = 20;
    std::uint64_t seed = kDefaultSeed;
    bool cross = false;  // also report the (non-gated) cross-product null
};

struct NullSimResult {
    std::vector<SpectralMetrics> trials;
    TrialStats stats;
    std::vector<SpectralMetrics> cross_trials;  // empty unless requested
    TrialStats cross_stats;
};

inline NullSimResult cmd_null_sim(const NullSimOptions& opts) {
    if (opts.trials == 0) throw config_error("null-sim: trials must be >= 1");
    nlohmann::ordered_json echo;
    echo["command"] = "null-sim";
    echo["m"] = opts.m;
    echo["d_in"] = opts.d_in;
    echo["trials"] = opts.trials;
    echo["seed"] = opts.seed;
    echo["cross"] = opts.cross;
    detail::echo_config(echo);

    const MpEdges edges = mp_edges(opts.m, opts.d_in);
    NullSimResult result;
    result.trials.resize(opts.trials);
    parallel_for(opts.trials, [&](std::size_t t) {
        const Spectrum s =
            wishart_null_spectrum(opts.m, opts.d_in, opts.seed + t);
        result.trials[t] = spectral_metrics(s.values, edges);
    });
    for (std::size_t t = 0; t < opts.trials; ++t) {
        std::cout << "trial " << t << ": "
                  << detail::describe_metrics(result.trials[t]) << "\n";
    }
    result.stats = summarize_trials(result.trials);
    print_trial_summary("summary", result.stats);

    if (opts.cross) {
        // Cross-product null: independent Gaussian factors through the same
        // metric pipeline. Its bulk edge differs from the symmetric
        // reference ensemble's; reported for documentation, never gated.
        result.cross_trials.resize(opts.trials);
        GramSpec spec;
        spec.m = opts.m;
        spec.d_in = opts.d_in;
        parallel_for(opts.trials, [&](std::size_t t) {
            auto [wq, wk] = spiked_pair(opts.m, opts.d_in, 0.0, 1, opts.seed + t);
            const Spectrum s = gram_spectrum(wq, wk, spec);
            result.cross_trials[t] = spectral_metrics(s.values, edges);
        });
        result.cross_stats = summarize_trials(result.cross_trials);
        print_trial_summary("cross_null", result.cross_stats);
    }
    return result;
}

struct SpikeSimOptions {
    std::size_t m = 256;
    std::size_t d_in = 256;
    double theta = 10.0;
    std::size_t rank = 1;
    std::size_t trials = 20;
    std::uint64_t seed = kDefaultSeed;
    std::string eigen_mode = "singular";
};

struct SpikeSimResult {
    std::vector<SpectralMetrics> trials;
    TrialStats stats;
    double detection_rate = 0.0;  // fraction of trials with outlier_count >= 1
};

inline SpikeSimResult cmd_spike_sim(const SpikeSimOptions& opts) {
    if (opts.trials == 0) throw config_error("spike-sim: trials must be >= 1");
    const EigenMode mode = eigen_mode_from_name(opts.eigen_mode);
    nlohmann::ordered_json echo;
    echo["command"] = "spike-sim";
    echo["m"] = opts.m;
    echo["d_in"] = opts.d_in;
    echo["theta"] = opts.theta;
    echo["rank"] = opts.rank;
    echo["trials"] = opts.trials;
    echo["seed"] = opts.seed;
    echo["eigen_mode"] = opts.eigen_mode;
    detail::echo_config(echo);

    const MpEdges edges = mp_edges(opts.m, opts.d_in);
    SpikeSimResult result;
    result.trials.resize(opts.trials);
    GramSpec spec;
    spec.m = opts.m;
    spec.d_in = opts.d_in;
    spec.eigen_mode = mode;
    parallel_for(opts.trials, [&](std::size_t t) {
        auto [wq, wk] =
            spiked_pair(opts.m, opts.d_in, opts.theta, opts.rank, opts.seed + t);
        const Spectrum s = gram_spectrum(wq, wk, spec);
        result.trials[t] = spectral_metrics(s.values, edges);
    });
    std::size_t detected = 0;
    for (std::size_t t = 0; t < opts.trials; ++t) {
        if (result.trials[t].outlier_count >= 1) ++detected;
        std::cout << "trial " << t << ": "
                  << detail::describe_metrics(result.trials[t]) << "\n";
    }
    result.stats = summarize_trials(result.trials);
    result.detection_rate =
        static_cast<double>(detected) / static_cast<double>(opts.trials);
    print_trial_summary("summary", result.stats);
    std::cout << "detection_rate " << detail::fmt6(result.detection_rate) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// entropy

struct EntropyOptions {
    std::string ckpt;
    ModelFlags model;
    std::uint64_t seed = kDefaultSeed;
    std::string out;  // optional: append full metrics rows here
    long long step = -1;
};

inline std::vector<double> cmd_entropy(const EntropyOptions& opts) {
    const AttentionConfig config = opts.model.to_config();
    nlohmann::ordered_json echo;
    echo["command"] = "entropy";
    echo["ckpt"] = opts.ckpt;
    opts.model.echo_into(echo);
    echo["seed"] = opts.seed;
    echo["out"] = opts.out;
    detail::echo_config(echo);

    const TensorStore store = read_tensors(opts.ckpt);
    const std::size_t n = count_layers(store);
    const Matrix probe = entropy_probe_inputs(config, opts.seed);
    std::vector<double> bits(n);
    parallel_for(n, [&](std::size_t layer) {
        const AttentionWeights w = weights_from_store(store, layer, config);
        AttentionTrace trace;
        attention_forward(w, probe, config, &trace);
        bits[layer] = attention_entropy(trace.probs);
    });
    double mean = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        std::cout << "layer " << l << ": entropy_bits=" << detail::fmt6(bits[l])
                  << "\n";
        mean += bits[l];
    }
    std::cout << "mean entropy_bits=" << detail::fmt6(mean / static_cast<double>(n))
              << "\n";

    if (!opts.out.empty()) {
        const long long step =
            opts.step >= 0 ? opts.step : step_from_ckpt_path(opts.ckpt);
        const auto analyses =
            analyze_store(store, config, EigenMode::SINGULAR, probe);
        for (const auto& a : analyses) {
            append_metrics_row(opts.out, metrics_row_from(a, step));
        }
        std::cout << "wrote " << analyses.size() << " rows to " << opts.out << "\n";
    }
    return bits;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::string metrics;
    std::string out_dir;
};

struct ReportResult {
    std::vector<std::string> heatmap_paths;
    std::string aggregate_path;
    std::size_t n_steps = 0;
};

// Metrics that get a heatmap and aggregate columns. Gamma is deliberately
// absent (a shape constant, not a dynamic quantity); the entropy column joins
// when the rows carry it.
inline const std::vector<std::string>& report_metrics() {
    static const std::vector<std::string> names = {
        "lambda1",        "mp_gap",       "outlier_count",
        "outlier_energy", "mp_soft_rank", "stable_rank"};
    return names;
}

inline ReportResult cmd_report(const ReportOptions& opts) {
    nlohmann::ordered_json echo;
    echo["command"] = "report";
    echo["metrics"] = opts.metrics;
    echo["out_dir"] = opts.out_dir;
    detail::echo_config(echo);

    const std::vector<MetricsRow> rows = read_metrics_csv(opts.metrics);
    if (rows.empty()) {
        throw io_error("'" + opts.metrics + "' contains no metrics rows");
    }
    std::filesystem::create_directories(opts.out_dir);

    bool has_entropy = false;
    for (const auto& r : rows) {
        if (r.attention_entropy_bits) has_entropy = true;
    }
    std::vector<std::string> metrics = report_metrics();
    if (has_entropy) metrics.push_back("attention_entropy_bits");

    ReportResult result;
    for (const auto& metric : metrics) {
        const std::string path = opts.out_dir + "/heatmap_" + metric + ".csv";
        export_heatmap(rows, metric, path);
        result.heatmap_paths.push_back(path);
        std::cout << "heatmap " << path << "\n";
    }

    // Aggregate curves: one row per distinct step, mean and population std
    // across layers for each metric.
    std::vector<LayerSeriesPoint> points;
    points.reserve(rows.size());
    for (const auto& r : rows) {
        LayerSeriesPoint p;
        p.step = r.step;
        p.layer = r.layer;
        p.metrics.lambda1 = r.lambda1;
        p.metrics.mp_gap = r.mp_gap;
        p.metrics.outlier_count = r.outlier_count;
        p.metrics.outlier_energy = r.outlier_energy;
        p.metrics.mp_soft_rank = r.mp_soft_rank;
        p.metrics.stable_rank = r.stable_rank;
        p.metrics.gamma = r.gamma;
        p.metrics.n_eigs = 0;  // not carried by the CSV
        points.push_back(p);
    }
    std::set<long long> steps;
    for (const auto& r : rows) steps.insert(r.step);

    result.aggregate_path = opts.out_dir + "/aggregate.csv";
    std::ofstream f(result.aggregate_path, std::ios::trunc);
    if (!f) throw io_error("cannot open '" + result.aggregate_path + "' for writing");
    f << "step,n_layers";
    for (const auto& metric : report_metrics()) {
        f << ',' << metric << "_mean," << metric << "_std";
    }
    if (has_entropy) {
        f << ",attention_entropy_bits_mean,attention_entropy_bits_std";
    }
    f << '\n';
    for (long long step : steps) {
        const StepAggregate agg = aggregate_layers(points, step);
        f << step << ',' << agg.n_layers;
        for (const MetricStats* s :
             {&agg.lambda1, &agg.mp_gap, &agg.outlier_count, &agg.outlier_energy,
              &agg.mp_soft_rank, &agg.stable_rank}) {
            f << ',' << format_double(s->mean) << ',' << format_double(s->stddev);
        }
        if (has_entropy) {
            std::vector<double> ent;
            for (const auto& r : rows) {
                if (r.step == step && r.attention_entropy_bits) {
                    ent.push_back(*r.attention_entropy_bits);
                }
            }
            if (ent.empty()) {
                f << ",,";
            } else {
                const MetricStats s = detail::mean_std(ent);
                f << ',' << format_double(s.mean) << ',' << format_double(s.stddev);
            }
        }
        f << '\n';
    }
    f.flush();
    if (!f) throw io_error("write failed for '" + result.aggregate_path + "'");
    result.n_steps = steps.size();
    std::cout << "aggregate " << result.aggregate_path << " (" << steps.size()
              << " steps)\n";
    return result;
}

// ---------------------------------------------------------------------------
// overhead

struct OverheadOptions {
    TrainOptions train;  // out is used as the parent directory for both legs
};

struct OverheadResult {
    double seconds_with = 0.0;
    double seconds_without = 0.0;
    double overhead_pct = 0.0;
    double svd_seconds = 0.0;
    std::size_t svd_dim = 768;
};

// Times the identical training run with spectral logging on and off, and a
// single reference decomposition at transformer scale. Wall-clock numbers;
// informational by design.
inline OverheadResult cmd_overhead(const OverheadOptions& opts) {
    TrainConfig config = opts.train.to_train_config();
    config.validate(false);  // log_every may exceed steps to mute logging

    nlohmann::ordered_json echo;
    echo["command"] = "overhead";
    opts.train.echo_into(echo);
    detail::echo_config(echo);

    using clock = std::chrono::steady_clock;
    OverheadResult result;

    RunOptions with_logging = opts.train.to_run_options();
    with_logging.log_spectra = true;
    const auto t0 = clock::now();
    run_training(config, opts.train.out + "/with_logging", with_logging);
    const auto t1 = clock::now();

    RunOptions no_logging = opts.train.to_run_options();
    no_logging.log_spectra = false;
    const auto t2 = clock::now();
    run_training(config, opts.train.out + "/no_logging", no_logging);
    const auto t3 = clock::now();

    result.seconds_with = std::chrono::duration<double>(t1 - t0).count();
    result.seconds_without = std::chrono::duration<double>(t3 - t2).count();
    result.overhead_pct =
        (result.seconds_with - result.seconds_without) /
        std::max(result.seconds_without, 1e-9) * 100.0;

    const Matrix probe = gaussian_matrix(result.svd_dim, result.svd_dim,
                                         opts.train.seed);
    const auto t4 = clock::now();
    svd(probe, "timing probe");
    const auto t5 = clock::now();
    result.svd_seconds = std::chrono::duration<double>(t5 - t4).count();

    std::cout << "seconds_with_logging " << detail::fmt6(result.seconds_with) << "\n"
              << "seconds_without_logging " << detail::fmt6(result.seconds_without)
              << "\n"
              << "overhead_pct " << detail::fmt6(result.overhead_pct) << "\n"
              << "svd_768_seconds " << detail::fmt6(result.svd_seconds) << "\n";
    return result;
}

}  // namespace mpscope
