#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stvad/config.hpp"
#include "stvad/data.hpp"
#include "stvad/network.hpp"
#include "stvad/scoring.hpp"

// Training and evaluation drivers. Training is single threaded and fully
// deterministic for a given seed + config; evaluation is a pure function of
// (checkpoint, dataset).
namespace stvad::pipeline {

using Real = float;

// Cosine annealing from the initial rate down to zero across the run.
double cosine_lr(double initial, long step, long total_steps);

struct LossRow {
    long step = 0;
    double lp1 = 0, ls1 = 0, lp2 = 0, ls2 = 0, total = 0, lr = 0;
};

struct TrainOutput {
    network::Model<Real> model;
    std::vector<LossRow> log;
    std::string checkpoint_path;  // final checkpoint (empty when out_dir empty)
};

// Trains on cfg.data_root's train split; writes loss_log.csv, per-epoch and
// final checkpoints under cfg.out_dir (when set).
TrainOutput train(const config::RunConfig& cfg);

struct EvalReport {
    std::vector<scoring::ScoreSeries> series;  // one per test video
    double frame_auc = -1.0;  // -1 when no labeled frames were available
    long labeled_frames = 0;
    long scored_frames = 0;
    double eval_fps = 0.0;
    std::vector<std::string> warnings;
};

// Scores every test video, writes per-video CSVs + report.txt under
// cfg.out_dir (when set), and computes the frame-level AUC over all labeled
// videos.
EvalReport evaluate(network::Model<Real>& model, const config::RunConfig& cfg);

// One unlabeled video (directory of frames) -> ScoreSeries.
scoring::ScoreSeries score_video(network::Model<Real>& model, const config::RunConfig& cfg,
                                 const std::string& frames_dir);

void write_series_csv(std::ostream& out, const scoring::ScoreSeries& series);

// Frame-level ROC area via the rank (Mann-Whitney) statistic; ties count 1/2.
double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Checkpoint {
    network::Model<Real> model;
    config::RunConfig cfg;
    std::vector<Tensor<Real>> adam_m, adam_v;  // parallel to trainable visit order
    long adam_step = 0;
    long step = 0;
    int epoch = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, network::Model<Real>& model,
                     const config::RunConfig& cfg, const std::vector<Tensor<Real>>& adam_m,
                     const std::vector<Tensor<Real>>& adam_v, long adam_step, long step,
                     int epoch);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace stvad::pipeline
