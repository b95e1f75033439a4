#include "stvad/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stvad/config.hpp"
#include "stvad/data.hpp"
#include "stvad/pipeline.hpp"

namespace fs = std::filesystem;

namespace stvad::cli {

namespace {

struct CliArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string data, out, checkpoint, frames;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void apply_set(config::RunConfig& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    config::set_key(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

// defaults -> STVAD_SEED fallback -> config file -> --set -> flags
config::RunConfig build_config(const CliArgs& args, bool env_seed_fallback) {
    config::RunConfig cfg;
    if (env_seed_fallback) {
        if (const char* env = std::getenv("STVAD_SEED"))
            config::set_key(cfg, "seed", env);
    }
    if (!args.config_file.empty()) config::apply_file(cfg, args.config_file);
    for (const auto& kv : args.sets) apply_set(cfg, kv);
    if (!args.data.empty()) cfg.data_root = args.data;
    if (!args.out.empty()) cfg.out_dir = args.out;
    if (!args.checkpoint.empty()) cfg.checkpoint = args.checkpoint;
    if (!args.frames.empty()) cfg.frames_dir = args.frames;
    if (args.seed_given) cfg.seed = args.seed;
    return cfg;
}

// Re-applies the eval-time overrides on top of a checkpoint's stored config.
config::RunConfig overlay_config(config::RunConfig cfg, const CliArgs& args) {
    if (!args.config_file.empty()) config::apply_file(cfg, args.config_file);
    for (const auto& kv : args.sets) apply_set(cfg, kv);
    if (!args.data.empty()) cfg.data_root = args.data;
    if (!args.out.empty()) cfg.out_dir = args.out;
    if (!args.checkpoint.empty()) cfg.checkpoint = args.checkpoint;
    if (!args.frames.empty()) cfg.frames_dir = args.frames;
    if (args.seed_given) cfg.seed = args.seed;
    return cfg;
}

bool same_architecture(const config::RunConfig& a, const config::RunConfig& b) {
    return a.input_h == b.input_h && a.input_w == b.input_w &&
           a.image_channels == b.image_channels && a.clip_len == b.clip_len &&
           a.levels == b.levels && a.channels == b.channels &&
           a.memory_items == b.memory_items && a.shift_fraction == b.shift_fraction &&
           a.shift_bidirectional == b.shift_bidirectional && a.leaky_slope == b.leaky_slope &&
           a.reduction_ratio == b.reduction_ratio &&
           a.batchnorm_enabled == b.batchnorm_enabled && a.memory_enabled == b.memory_enabled &&
           a.grayscale == b.grayscale;
}

void echo_config(const config::RunConfig& cfg) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "effective_config.txt");
    out << config::echo(cfg);
}

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

int do_synth(const CliArgs& args) {
    config::RunConfig cfg = build_config(args, true);
    require(!cfg.out_dir.empty(), "synth: --out <dir> is required");
    config::validate(cfg);
    echo_config(cfg);
    data::SynthConfig sc;
    sc.train_videos = cfg.synth_train_videos;
    sc.test_videos = cfg.synth_test_videos;
    sc.train_frames = cfg.synth_train_frames;
    sc.test_frames = cfg.synth_test_frames;
    sc.height = cfg.input_h;
    sc.width = cfg.input_w;
    sc.sprites = cfg.synth_sprites;
    data::synth_generate(cfg.out_dir, sc, cfg.seed);
    std::cout << "synthetic dataset written to " << cfg.out_dir << "\n";
    return 0;
}

int do_train(const CliArgs& args) {
    config::RunConfig cfg = build_config(args, true);
    require(!cfg.data_root.empty(), "train: --data <dir> is required");
    require(!cfg.out_dir.empty(), "train: --out <dir> is required");
    require(fs::is_directory(cfg.data_root), "train: data directory missing: " + cfg.data_root);
    config::validate(cfg);
    echo_config(cfg);
    const pipeline::TrainOutput out = pipeline::train(cfg);
    if (!out.log.empty()) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "final step %ld: total loss %.6g\n", out.log.back().step,
                      out.log.back().total);
        std::cout << buf;
    }
    std::cout << "checkpoint written to " << out.checkpoint_path << "\n";
    return 0;
}

int do_eval(const CliArgs& args) {
    CliArgs probe = args;
    require(!probe.checkpoint.empty(), "eval: --checkpoint <file> is required");
    require(fs::is_regular_file(probe.checkpoint),
            "eval: checkpoint file missing: " + probe.checkpoint);
    pipeline::Checkpoint ck = pipeline::load_checkpoint(probe.checkpoint);
    config::RunConfig cfg = overlay_config(ck.cfg, args);
    require(!cfg.data_root.empty(), "eval: --data <dir> is required");
    require(fs::is_directory(cfg.data_root), "eval: data directory missing: " + cfg.data_root);
    require(!cfg.out_dir.empty(), "eval: --out <dir> is required");
    require(same_architecture(ck.cfg, cfg),
            "eval: architecture keys cannot be overridden at evaluation time");
    config::validate(cfg);
    echo_config(cfg);
    const pipeline::EvalReport report = pipeline::evaluate(ck.model, cfg);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "frame_auc=%.6f\n", report.frame_auc);
    std::cout << buf;
    return 0;
}

int do_score(const CliArgs& args) {
    CliArgs probe = args;
    require(!probe.checkpoint.empty(), "score: --checkpoint <file> is required");
    require(fs::is_regular_file(probe.checkpoint),
            "score: checkpoint file missing: " + probe.checkpoint);
    pipeline::Checkpoint ck = pipeline::load_checkpoint(probe.checkpoint);
    config::RunConfig cfg = overlay_config(ck.cfg, args);
    require(!cfg.frames_dir.empty(), "score: --frames <dir> is required");
    require(same_architecture(ck.cfg, cfg),
            "score: architecture keys cannot be overridden at scoring time");
    const scoring::ScoreSeries series = pipeline::score_video(ck.model, cfg, cfg.frames_dir);
    pipeline::write_series_csv(std::cout, series);
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"dual-stream memory-augmented predictive autoencoder for video anomaly "
                 "detection"};
    app.require_subcommand(1);

    CliArgs args;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_file, "key = value config file");
        sub->add_option("--set", args.sets, "override one config key (key=value)")
            ->take_all();
        sub->add_option("--seed", args.seed, "random seed")
            ->each([&](const std::string&) { args.seed_given = true; });
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    synth->add_option("--out", args.out, "output dataset directory");
    add_common(synth);

    CLI::App* train = app.add_subcommand("train", "train a model");
    train->add_option("--data", args.data, "dataset root directory");
    train->add_option("--out", args.out, "output directory for logs + checkpoints");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--checkpoint", args.checkpoint, "trained checkpoint file");
    eval->add_option("--data", args.data, "dataset root directory");
    eval->add_option("--out", args.out, "output directory for score CSVs + report");
    add_common(eval);

    CLI::App* score = app.add_subcommand("score", "score one video directory to stdout");
    score->add_option("--checkpoint", args.checkpoint, "trained checkpoint file");
    score->add_option("--frames", args.frames, "directory of PNG frames");
    add_common(score);

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) return do_synth(args);
        if (train->parsed()) return do_train(args);
        if (eval->parsed()) return do_eval(args);
        if (score->parsed()) return do_score(args);
        std::cerr << app.help();
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace stvad::cli
