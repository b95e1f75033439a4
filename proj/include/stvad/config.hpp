#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stvad/losses.hpp"
#include "stvad/network.hpp"

// Flat key = value run configuration. One home for every hyperparameter;
// unknown keys are rejected by name.
namespace stvad::config {

struct RunConfig {
    // model
    int input_h = 64;
    int input_w = 64;
    int image_channels = 1;
    int clip_len = 5;
    int levels = 4;
    std::vector<int> channels = {32, 64, 128, 256};
    int memory_items = 20;
    double shift_fraction = 0.125;
    bool shift_bidirectional = true;
    double leaky_slope = 0.2;
    int reduction_ratio = 16;
    bool batchnorm_enabled = true;
    bool memory_enabled = true;
    std::string fusion_mode = "mean_motion_compensated";

    // objective
    double alpha_s = 0.1;
    double beta_s = 0.1;
    double gamma_i = 0.5;
    double margin_a = 2.0;
    double margin_b = 1.0;
    bool loss_hinge = true;
    bool loss_square_second = false;
    std::string prediction_loss_mode = "mean";

    // training
    double learning_rate = 2e-4;  // paper uses 2e-5 at full scale
    double adam_rho1 = 0.9;
    double adam_rho2 = 0.999;
    int batch_size = 8;
    int epochs = 5;
    std::uint64_t seed = 0;

    // scoring
    double lambda = 0.8;
    std::string psnr_convention = "paper";
    std::string normalization_scope = "per_video";

    // data + synthetic generator
    bool grayscale = true;
    int synth_train_videos = 8;
    int synth_test_videos = 4;
    int synth_train_frames = 32;
    int synth_test_frames = 48;
    int synth_sprites = 3;

    // eval extras
    bool dump_error_maps = false;

    // paths
    std::string data_root;
    std::string out_dir;
    std::string checkpoint;
    std::string frames_dir;
};

// Assigns one key; throws std::invalid_argument naming an unknown key or a
// malformed value.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Applies a key = value file ('#' comments, blank lines allowed).
void apply_file(RunConfig& cfg, const std::string& path);

// All keys with their current values, sorted, one per line.
std::string echo(const RunConfig& cfg);

void validate(const RunConfig& cfg);

network::ModelConfig model_config(const RunConfig& cfg);

template <typename T>
losses::LossWeights<T> loss_weights(const RunConfig& cfg) {
    losses::LossWeights<T> w;
    w.alpha_s = static_cast<T>(cfg.alpha_s);
    w.beta_s = static_cast<T>(cfg.beta_s);
    w.gamma_i = static_cast<T>(cfg.gamma_i);
    w.margin_a = static_cast<T>(cfg.margin_a);
    w.margin_b = static_cast<T>(cfg.margin_b);
    return w;
}

losses::DiscretizationOptions discretization_options(const RunConfig& cfg);
losses::PredictionLossMode prediction_mode(const RunConfig& cfg);

}  // namespace stvad::config
