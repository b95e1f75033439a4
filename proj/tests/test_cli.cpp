#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "stvad/cli.hpp"
#include "stvad/config.hpp"

using namespace stvad;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    std::vector<const char*> argv;
    argv.push_back("stvad");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("stvad_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kTinyModel = {
    "--set", "input_h=32",         "--set", "input_w=32",       "--set", "levels=2",
    "--set", "channels=8,16",      "--set", "memory_items=4",   "--set", "reduction_ratio=4",
    "--set", "batch_size=4",       "--set", "epochs=1",         "--set", "synth_train_videos=2",
    "--set", "synth_test_videos=2", "--set", "synth_train_frames=10",
    "--set", "synth_test_frames=12"};

std::vector<std::string> with_tiny(std::vector<std::string> head) {
    head.insert(head.end(), kTinyModel.begin(), kTinyModel.end());
    return head;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({"foo"}) == 2);
    CHECK(run({}) == 2);
    CHECK(run({"train", "--nope"}) == 2);
    CHECK(run({"train"}) == 2);  // missing required paths
    CHECK(run({"eval", "--checkpoint", "/nonexistent.ckpt", "--data", "/tmp", "--out",
               "/tmp/x"}) == 2);
}

TEST_CASE("unknown config keys are rejected by name") {
    config::RunConfig cfg;
    try {
        config::set_key(cfg, "alpha_x", "0.3");
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("alpha_x") != std::string::npos);
    }

    const fs::path dir = fresh_dir("badkey");
    std::ofstream(dir / "cfg.txt") << "alpha_x = 0.3\n";
    CHECK(run({"synth", "--out", (dir / "ds").string(), "--config",
               (dir / "cfg.txt").string()}) == 2);
}

TEST_CASE("flags override config files; env seed is only a fallback") {
    const fs::path dir = fresh_dir("prec");
    std::ofstream(dir / "cfg.txt") << "seed = 5\nsynth_train_videos = 1\n"
                                   << "synth_test_videos = 1\nsynth_train_frames = 8\n"
                                   << "synth_test_frames = 8\n";

    setenv("STVAD_SEED", "99", 1);
    CHECK(run({"synth", "--out", (dir / "a").string(), "--config", (dir / "cfg.txt").string()}) ==
          0);
    CHECK(slurp(dir / "a" / "effective_config.txt").find("seed = 5") != std::string::npos);

    CHECK(run({"synth", "--out", (dir / "b").string(), "--config", (dir / "cfg.txt").string(),
               "--seed", "7"}) == 0);
    CHECK(slurp(dir / "b" / "effective_config.txt").find("seed = 7") != std::string::npos);

    // no file/flag seed: the environment fallback applies
    CHECK(run({"synth", "--out", (dir / "c").string(), "--set", "synth_train_videos=1", "--set",
               "synth_test_videos=1", "--set", "synth_train_frames=8", "--set",
               "synth_test_frames=8"}) == 0);
    CHECK(slurp(dir / "c" / "effective_config.txt").find("seed = 99") != std::string::npos);
    unsetenv("STVAD_SEED");
}

TEST_CASE("synth -> train -> eval -> score end to end") {
    const fs::path dir = fresh_dir("e2e");
    const std::string ds = (dir / "ds").string();
    const std::string run_dir = (dir / "run").string();
    const std::string eval_dir = (dir / "eval").string();

    CHECK(run(with_tiny({"synth", "--out", ds, "--seed", "0"})) == 0);
    CHECK(run(with_tiny({"train", "--data", ds, "--out", run_dir, "--seed", "0"})) == 0);
    CHECK(fs::exists(fs::path(run_dir) / "model.ckpt"));
    CHECK(fs::exists(fs::path(run_dir) / "loss_log.csv"));
    const std::string log = slurp(fs::path(run_dir) / "loss_log.csv");
    CHECK(log.rfind("step,lp1,ls1,lp2,ls2,total,lr\n", 0) == 0);

    CHECK(run({"eval", "--checkpoint", run_dir + "/model.ckpt", "--data", ds, "--out",
               eval_dir}) == 0);
    const std::string report = slurp(fs::path(eval_dir) / "report.txt");
    CHECK(report.find("frame_auc=") != std::string::npos);
    CHECK(fs::exists(fs::path(eval_dir) / "scores_v000.csv"));

    CHECK(run({"score", "--checkpoint", run_dir + "/model.ckpt", "--frames",
               ds + "/test/v000"}) == 0);

    // identical invocation reproduces identical outputs
    const fs::path run2 = dir / "run2";
    CHECK(run(with_tiny({"train", "--data", ds, "--out", run2.string(), "--seed", "0"})) == 0);
    CHECK(slurp(fs::path(run_dir) / "loss_log.csv") == slurp(run2 / "loss_log.csv"));

    // architecture overrides at eval time are refused
    CHECK(run({"eval", "--checkpoint", run_dir + "/model.ckpt", "--data", ds, "--out", eval_dir,
               "--set", "levels=3"}) == 2);
}
