// End-to-end checks of the installed command-line binary: exit codes, config
// echo, and agreement between online and offline analysis of a checkpoint.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mpscope/io.hpp"

using namespace mpscope;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

CmdResult run_cli(const std::string& args, const testutil::TempDir& dir,
                  const std::string& log_name) {
    const std::string log = dir.file(log_name);
    const std::string cmd =
        std::string(MPSCOPE_BIN_PATH) + " " + args + " >" + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    CmdResult r;
    if (rc != -1 && WIFEXITED(rc)) r.exit_code = WEXITSTATUS(rc);
    r.output = slurp(log);
    return r;
}

const std::string kTinyModel =
    "--variant mha --d-model 16 --heads 2 --d-k 8 --seq-len 8";

}  // namespace

TEST_CASE("help succeeds and bad invocations exit with the config code") {
    testutil::TempDir dir;
    REQUIRE(run_cli("--help", dir, "help.log").exit_code == 0);
    REQUIRE(run_cli("", dir, "none.log").exit_code == 3);  // subcommand required
    REQUIRE(run_cli("frobnicate", dir, "unk.log").exit_code == 3);
    REQUIRE(run_cli("train " + kTinyModel, dir, "noout.log").exit_code == 3);
}

TEST_CASE("train, analyze, entropy, and report round trip through the binary") {
    testutil::TempDir dir;
    const std::string run_dir = dir.file("run");

    const CmdResult train = run_cli(
        "train --out " + run_dir + " " + kTinyModel +
            " --layers 1 --vocab 12 --steps 4 --batch 2 --lr 0.1 --log-every 2"
            " --seed 7 --sharpness 0.9",
        dir, "train.log");
    INFO(train.output);
    REQUIRE(train.exit_code == 0);
    REQUIRE(train.output.rfind("config {", 0) == 0);  // echo leads the output
    REQUIRE(std::filesystem::exists(run_dir + "/metrics.csv"));
    REQUIRE(std::filesystem::exists(run_dir + "/run.json"));
    REQUIRE(std::filesystem::exists(run_dir + "/ckpt_4.nt"));

    // Offline analysis of the final checkpoint with the run seed reproduces
    // the training-time rows exactly, field for field.
    const std::string fresh = dir.file("fresh.csv");
    const CmdResult analyze = run_cli(
        "analyze --ckpt " + run_dir + "/ckpt_4.nt --out " + fresh + " " +
            kTinyModel + " --seed 7",
        dir, "analyze.log");
    INFO(analyze.output);
    REQUIRE(analyze.exit_code == 0);

    const auto online = read_metrics_csv(run_dir + "/metrics.csv");
    const auto offline = read_metrics_csv(fresh);
    REQUIRE(offline.size() == 1);
    REQUIRE(offline[0].step == 4);  // recovered from the filename
    bool matched = false;
    for (const auto& row : online) {
        if (row.step != 4 || row.layer != offline[0].layer) continue;
        matched = true;
        REQUIRE(metrics_row_csv(row) == metrics_row_csv(offline[0]));
    }
    REQUIRE(matched);

    const CmdResult entropy = run_cli(
        "entropy --ckpt " + run_dir + "/ckpt_4.nt " + kTinyModel + " --seed 7",
        dir, "entropy.log");
    REQUIRE(entropy.exit_code == 0);
    REQUIRE(entropy.output.find("layer 0") != std::string::npos);

    const std::string rep = dir.file("rep");
    const CmdResult report = run_cli(
        "report --metrics " + run_dir + "/metrics.csv --out-dir " + rep, dir,
        "report.log");
    INFO(report.output);
    REQUIRE(report.exit_code == 0);
    REQUIRE(std::filesystem::exists(rep + "/heatmap_lambda1.csv"));
    REQUIRE(std::filesystem::exists(rep + "/heatmap_mp_gap.csv"));
    REQUIRE(std::filesystem::exists(rep + "/aggregate.csv"));
    const std::string agg = slurp(rep + "/aggregate.csv");
    // Header plus one row per logged step (0, 2, 4).
    REQUIRE(std::count(agg.begin(), agg.end(), '\n') == 4);
}

TEST_CASE("exit codes distinguish missing files from bad configuration") {
    testutil::TempDir dir;
    REQUIRE(run_cli("analyze --ckpt " + dir.file("nope.nt") + " --out " +
                        dir.file("x.csv") + " " + kTinyModel,
                    dir, "missing.log")
                .exit_code == 2);
    REQUIRE(run_cli("null-sim --m 32 --d-in 32 --trials 2 --variant bogus", dir,
                    "badflag.log")
                .exit_code == 3);  // unrecognized flag for this subcommand
    REQUIRE(run_cli("spike-sim --m 32 --d-in 32 --trials 2 --eigen-mode cubed",
                    dir, "badmode.log")
                .exit_code == 3);
}

TEST_CASE("analyzing a checkpoint under mismatched shape flags fails cleanly") {
    testutil::TempDir dir;
    const std::string run_dir = dir.file("run");
    REQUIRE(run_cli("train --out " + run_dir + " " + kTinyModel +
                        " --layers 1 --vocab 12 --steps 2 --batch 2 --lr 0.1"
                        " --log-every 2 --seed 7",
                    dir, "train.log")
                .exit_code == 0);
    const CmdResult bad = run_cli(
        "analyze --ckpt " + run_dir +
            "/ckpt_2.nt --out " + dir.file("bad.csv") +
            " --variant mha --d-model 32 --heads 4 --d-k 8 --seq-len 8",
        dir, "badshape.log");
    REQUIRE(bad.exit_code == 3);
    REQUIRE(bad.output.find("error:") != std::string::npos);
}

TEST_CASE("simulation subcommands run at small sizes") {
    testutil::TempDir dir;
    const CmdResult null_sim = run_cli(
        "null-sim --m 32 --d-in 32 --trials 2 --seed 5 --cross", dir, "null.log");
    INFO(null_sim.output);
    REQUIRE(null_sim.exit_code == 0);
    REQUIRE(null_sim.output.find("mp_gap") != std::string::npos);

    const CmdResult spike = run_cli(
        "spike-sim --m 32 --d-in 32 --theta 10 --rank 1 --trials 2 --seed 5", dir,
        "spike.log");
    INFO(spike.output);
    REQUIRE(spike.exit_code == 0);
    REQUIRE(spike.output.find("detection_rate") != std::string::npos);
}

TEST_CASE("overhead subcommand compares logging against no logging") {
    testutil::TempDir dir;
    const std::string out = dir.file("oh");
    const CmdResult r = run_cli(
        "overhead --out " + out + " " + kTinyModel +
            " --layers 1 --vocab 12 --steps 4 --batch 2 --lr 0.1 --log-every 2"
            " --seed 7",
        dir, "overhead.log");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::filesystem::exists(out + "/with_logging/metrics.csv"));
    REQUIRE(std::filesystem::exists(out + "/no_logging/run.json"));
    REQUIRE_FALSE(std::filesystem::exists(out + "/no_logging/metrics.csv"));
    REQUIRE(r.output.find("overhead") != std::string::npos);
}
