// Command-line front end: subcommand and flag parsing only; all behavior
// lives in the library headers.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mpscope/cli.hpp"

namespace {

void add_model_flags(CLI::App* cmd, mpscope::ModelFlags& m) {
    cmd->add_option("--variant", m.variant,
                    "Attention variant: mha|mla-pre|mla-dec|mla-nope")
        ->capture_default_str();
    cmd->add_option("--rope-frac", m.rope_frac,
                    "Rotary fraction of each head (mla-dec only)")
        ->capture_default_str();
    cmd->add_option("--d-model", m.d_model, "Model width")->capture_default_str();
    cmd->add_option("--heads", m.n_heads, "Number of attention heads")
        ->capture_default_str();
    cmd->add_option("--d-k", m.d_k, "Per-head dimension")->capture_default_str();
    cmd->add_option("--d-latent", m.d_latent, "Shared latent dimension (MLA)")
        ->capture_default_str();
    cmd->add_option("--seq-len", m.seq_len, "Sequence length")->capture_default_str();
    cmd->add_option("--rope-base", m.rope_base, "Rotary frequency base")
        ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, mpscope::TrainOptions& t) {
    add_model_flags(cmd, t.model);
    cmd->add_option("--out", t.out, "Output directory")->required();
    cmd->add_option("--layers", t.n_layers, "Number of attention layers")
        ->capture_default_str();
    cmd->add_option("--vocab", t.vocab_size, "Vocabulary size")->capture_default_str();
    cmd->add_option("--steps", t.steps, "Training steps")->capture_default_str();
    cmd->add_option("--batch", t.batch_size, "Windows per step")->capture_default_str();
    cmd->add_option("--lr", t.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--seed", t.seed, "Run seed")->capture_default_str();
    cmd->add_option("--log-every", t.log_every, "Steps between spectral logs")
        ->capture_default_str();
    cmd->add_option("--sharpness", t.corpus_sharpness,
                    "Markov corpus sharpness in (0,1)")
        ->capture_default_str();
    cmd->add_option("--eigen-mode", t.eigen_mode, "Spectrum mode: singular|squared")
        ->capture_default_str();
    cmd->add_flag("--store-f64", t.store_f64,
                  "Store checkpoints as 64-bit floats (bit-exact re-analysis)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Marchenko-Pastur spectral diagnostics for attention weights"};
    app.require_subcommand(1);

    mpscope::AnalyzeOptions analyze;
    auto* c_analyze =
        app.add_subcommand("analyze", "Per-layer spectral metrics of a checkpoint");
    c_analyze->add_option("--ckpt", analyze.ckpt, "Checkpoint file")->required();
    c_analyze->add_option("--out", analyze.out, "Metrics CSV to append to")->required();
    add_model_flags(c_analyze, analyze.model);
    c_analyze->add_option("--eigen-mode", analyze.eigen_mode,
                          "Spectrum mode: singular|squared")
        ->capture_default_str();
    c_analyze->add_option("--seed", analyze.seed, "Entropy probe seed")
        ->capture_default_str();
    c_analyze->add_option("--step", analyze.step,
                          "Step column value (default: from filename)");

    mpscope::TrainOptions train;
    auto* c_train = app.add_subcommand(
        "train", "Train the toy model, logging checkpoints and spectra");
    add_train_flags(c_train, train);

    mpscope::NullSimOptions null_sim;
    auto* c_null = app.add_subcommand(
        "null-sim", "Spectral metrics of the i.i.d. null ensemble");
    c_null->add_option("--m", null_sim.m, "Rows")->capture_default_str();
    c_null->add_option("--d-in", null_sim.d_in, "Columns")->capture_default_str();
    c_null->add_option("--trials", null_sim.trials, "Number of seeds")
        ->capture_default_str();
    c_null->add_option("--seed", null_sim.seed, "Base seed")->capture_default_str();
    c_null->add_flag("--cross", null_sim.cross,
                     "Also report the cross-product null (informational)");

    mpscope::SpikeSimOptions spike;
    auto* c_spike = app.add_subcommand(
        "spike-sim", "Detection rate for planted spectral spikes");
    c_spike->add_option("--m", spike.m, "Rows")->capture_default_str();
    c_spike->add_option("--d-in", spike.d_in, "Columns")->capture_default_str();
    c_spike->add_option("--theta", spike.theta, "Spike strength")->capture_default_str();
    c_spike->add_option("--rank", spike.rank, "Planted rank")->capture_default_str();
    c_spike->add_option("--trials", spike.trials, "Number of seeds")
        ->capture_default_str();
    c_spike->add_option("--seed", spike.seed, "Base seed")->capture_default_str();
    c_spike->add_option("--eigen-mode", spike.eigen_mode,
                        "Spectrum mode: singular|squared")
        ->capture_default_str();

    mpscope::EntropyOptions entropy;
    auto* c_entropy = app.add_subcommand(
        "entropy", "Attention entropy of a checkpoint on a seeded probe");
    c_entropy->add_option("--ckpt", entropy.ckpt, "Checkpoint file")->required();
    add_model_flags(c_entropy, entropy.model);
    c_entropy->add_option("--seed", entropy.seed, "Probe seed")->capture_default_str();
    c_entropy->add_option("--out", entropy.out,
                          "Optional metrics CSV to append full rows to");
    c_entropy->add_option("--step", entropy.step,
                          "Step column value (default: from filename)");

    mpscope::ReportOptions report;
    auto* c_report = app.add_subcommand(
        "report", "Heatmap and aggregate-curve CSVs from a metrics file");
    c_report->add_option("--metrics", report.metrics, "Metrics CSV")->required();
    c_report->add_option("--out-dir", report.out_dir, "Output directory")->required();

    mpscope::OverheadOptions overhead;
    auto* c_overhead = app.add_subcommand(
        "overhead", "Wall-time cost of spectral logging during training");
    add_train_flags(c_overhead, overhead.train);

    try {
        app.parse(argc, argv);
        if (c_analyze->parsed()) mpscope::cmd_analyze(analyze);
        if (c_train->parsed()) mpscope::cmd_train(train);
        if (c_null->parsed()) mpscope::cmd_null_sim(null_sim);
        if (c_spike->parsed()) mpscope::cmd_spike_sim(spike);
        if (c_entropy->parsed()) mpscope::cmd_entropy(entropy);
        if (c_report->parsed()) mpscope::cmd_report(report);
        if (c_overhead->parsed()) mpscope::cmd_overhead(overhead);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 3;
    } catch (const mpscope::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mpscope::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const mpscope::numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
