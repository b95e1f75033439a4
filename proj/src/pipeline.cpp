#include "stvad/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "stvad/losses.hpp"

namespace fs = std::filesystem;

namespace stvad::pipeline {

double cosine_lr(double initial, long step, long total_steps) {
    if (total_steps <= 1) return initial;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return initial * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, frac)));
}

namespace {

struct ParamRef {
    std::string name;
    Tensor<Real>* value = nullptr;
    int* node = nullptr;
};

std::vector<ParamRef> trainables(network::Model<Real>& model) {
    std::vector<ParamRef> out;
    model.visit([&](const std::string& name, Tensor<Real>& t, int* node, network::ParamKind kind) {
        if (kind == network::ParamKind::trainable) out.push_back({name, &t, node});
    });
    return out;
}

void check_finite(double v, const std::string& what, long step) {
    if (!std::isfinite(v))
        throw std::runtime_error(what + " became non-finite at step " + std::to_string(step));
}

// Per-module feature rows queued across a batch, concatenated in sample order.
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    const int cols = parts[0].dim(1);
    int rows = 0;
    for (const auto& p : parts) rows += p.dim(0);
    Tensor<Real> out({rows, cols});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.size(), out.data() + off);
        off += p.size();
    }
    return out;
}

std::vector<data::ClipBatch> load_split_clips(const config::RunConfig& cfg,
                                              const std::string& split,
                                              std::vector<std::string>* warnings) {
    const data::DatasetManifest manifest = data::load_dataset(cfg.data_root, split);
    std::vector<data::ClipBatch> clips;
    for (const auto& video : manifest.videos) {
        std::vector<Tensor<float>> frames;
        frames.reserve(video.frame_paths.size());
        for (const auto& path : video.frame_paths)
            frames.push_back(
                data::normalize_frame(data::read_png(path), cfg.input_h, cfg.input_w,
                                      cfg.grayscale));
        auto v = data::make_clips(frames, cfg.clip_len, video.id);
        if (v.empty()) {
            const std::string msg = "video '" + video.id + "' shorter than clip_len+1, skipped";
            if (warnings)
                warnings->push_back(msg);
            else
                std::cerr << "warning: " << msg << "\n";
            continue;
        }
        for (auto& c : v) clips.push_back(std::move(c));
    }
    return clips;
}

}  // namespace

TrainOutput train(const config::RunConfig& cfg) {
    config::validate(cfg);
    const network::ModelConfig mc = config::model_config(cfg);
    const losses::LossWeights<Real> weights = config::loss_weights<Real>(cfg);
    const losses::DiscretizationOptions disc_opts = config::discretization_options(cfg);
    const losses::PredictionLossMode pred_mode = config::prediction_mode(cfg);

    std::vector<data::ClipBatch> clips = load_split_clips(cfg, "train", nullptr);
    if (clips.empty()) throw std::runtime_error("train split produced no usable clips");

    network::Model<Real> model = network::build_model<Real>(mc, cfg.seed);
    std::vector<ParamRef> params = trainables(model);

    std::vector<Tensor<Real>> adam_m, adam_v, grad_acc;
    for (const auto& p : params) {
        adam_m.emplace_back(p.value->shape());
        adam_v.emplace_back(p.value->shape());
        grad_acc.emplace_back(p.value->shape());
    }
    long adam_step = 0;

    const long batches_per_epoch =
        (static_cast<long>(clips.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = batches_per_epoch * cfg.epochs;

    const int module_count = model.spatial.memory_module_count();

    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    std::ofstream log_csv;
    if (!cfg.out_dir.empty()) {
        log_csv.open(fs::path(cfg.out_dir) / "loss_log.csv");
        log_csv << "step,lp1,ls1,lp2,ls2,total,lr\n";
    }

    TrainOutput out;
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // deterministic per-epoch shuffle
        Rng shuffle_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

        for (long b = 0; b < batches_per_epoch; ++b, ++step) {
            const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch_size;
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const int batch_n = static_cast<int>(end - begin);

            for (auto& g : grad_acc) g.fill(Real(0));
            std::vector<std::vector<Tensor<Real>>> queued_spatial(module_count);
            std::vector<std::vector<Tensor<Real>>> queued_temporal(module_count);
            double m_lp1 = 0, m_ls1 = 0, m_lp2 = 0, m_ls2 = 0, m_total = 0;

            for (std::size_t s = begin; s < end; ++s) {
                const data::ClipBatch& clip = clips[order[s]];
                Graph<Real> g(true);
                model.bind(g);
                const int frames = g.constant(clip.input_frames);
                const int diffs = g.constant(clip.input_diffs);
                network::DualForwardNodes fwd =
                    network::dual_forward(g, model, frames, diffs, true);

                const int lp1 = losses::prediction_loss(
                    g, fwd.spatial.prediction, g.constant(clip.target_frame), pred_mode);
                const int lp2 = losses::prediction_loss(
                    g, fwd.temporal.prediction, g.constant(clip.target_diff), pred_mode);

                int ls1, ls2;
                if (cfg.memory_enabled) {
                    auto stream_disc = [&](network::SubnetForwardNodes& nodes,
                                           network::Subnet<Real>& subnet) {
                        int acc = -1;
                        for (int mod = 0; mod < module_count; ++mod) {
                            const int l = losses::discretization_loss(
                                g, nodes.module_features[static_cast<std::size_t>(mod)],
                                subnet.banks()[static_cast<std::size_t>(mod)], weights.margin_a,
                                weights.margin_b, disc_opts);
                            acc = acc < 0 ? l : g.add(acc, l);
                        }
                        return g.scale(acc, Real(1) / static_cast<Real>(module_count));
                    };
                    ls1 = stream_disc(fwd.spatial, model.spatial);
                    ls2 = stream_disc(fwd.temporal, model.temporal);
                } else {
                    ls1 = g.constant(Tensor<Real>({1}));
                    ls2 = g.constant(Tensor<Real>({1}));
                }

                const int total = losses::total_loss(g, lp1, ls1, lp2, ls2, weights);

                const double v_lp1 = g.value(lp1)[0], v_ls1 = g.value(ls1)[0];
                const double v_lp2 = g.value(lp2)[0], v_ls2 = g.value(ls2)[0];
                const double v_total = g.value(total)[0];
                check_finite(v_lp1, "prediction loss (spatial stream)", step);
                check_finite(v_ls1, "discretization loss (spatial stream)", step);
                check_finite(v_lp2, "prediction loss (temporal stream)", step);
                check_finite(v_ls2, "discretization loss (temporal stream)", step);
                check_finite(v_total, "total loss", step);
                m_lp1 += v_lp1;
                m_ls1 += v_ls1;
                m_lp2 += v_lp2;
                m_ls2 += v_ls2;
                m_total += v_total;

                g.backward(total);
                for (std::size_t p = 0; p < params.size(); ++p) {
                    const int id = *params[p].node;
                    if (!g.has_grad(id)) continue;
                    const Tensor<Real>& grad = g.grad(id);
                    Tensor<Real>& acc = grad_acc[p];
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
                }

                if (cfg.memory_enabled) {
                    for (int mod = 0; mod < module_count; ++mod) {
                        queued_spatial[static_cast<std::size_t>(mod)].push_back(
                            g.value(fwd.spatial.module_features[static_cast<std::size_t>(mod)]));
                        queued_temporal[static_cast<std::size_t>(mod)].push_back(
                            g.value(fwd.temporal.module_features[static_cast<std::size_t>(mod)]));
                    }
                }
            }

            const double lr = cosine_lr(cfg.learning_rate, step, total_steps);
            const double inv_n = 1.0 / batch_n;
            ++adam_step;
            const double bc1 = 1.0 - std::pow(cfg.adam_rho1, static_cast<double>(adam_step));
            const double bc2 = 1.0 - std::pow(cfg.adam_rho2, static_cast<double>(adam_step));
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor<Real>& value = *params[p].value;
                Tensor<Real>& m = adam_m[p];
                Tensor<Real>& v = adam_v[p];
                const Tensor<Real>& acc = grad_acc[p];
                for (std::size_t i = 0; i < value.size(); ++i) {
                    const double grad = acc[i] * inv_n;
                    const double mi = cfg.adam_rho1 * m[i] + (1.0 - cfg.adam_rho1) * grad;
                    const double vi = cfg.adam_rho2 * v[i] + (1.0 - cfg.adam_rho2) * grad * grad;
                    m[i] = static_cast<Real>(mi);
                    v[i] = static_cast<Real>(vi);
                    value[i] -= static_cast<Real>(lr * (mi / bc1) /
                                                  (std::sqrt(vi / bc2) + 1e-8));
                }
            }

            if (cfg.memory_enabled) {
                for (int mod = 0; mod < module_count; ++mod) {
                    auto& sb = model.spatial.banks()[static_cast<std::size_t>(mod)];
                    sb = memory::update(concat_rows(queued_spatial[static_cast<std::size_t>(mod)]),
                                        sb);
                    auto& tb = model.temporal.banks()[static_cast<std::size_t>(mod)];
                    tb = memory::update(
                        concat_rows(queued_temporal[static_cast<std::size_t>(mod)]), tb);
                }
            }

            LossRow row{step,        m_lp1 * inv_n, m_ls1 * inv_n, m_lp2 * inv_n,
                        m_ls2 * inv_n, m_total * inv_n, lr};
            out.log.push_back(row);
            if (log_csv.is_open()) {
                char line[256];
                std::snprintf(line, sizeof(line), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.step,
                              row.lp1, row.ls1, row.lp2, row.ls2, row.total, row.lr);
                log_csv << line;
            }
        }

        if (!cfg.out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "model_epoch%03d.ckpt", epoch + 1);
            save_checkpoint((fs::path(cfg.out_dir) / name).string(), model, cfg, adam_m, adam_v,
                            adam_step, step, epoch + 1);
        }
    }

    if (!cfg.out_dir.empty()) {
        out.checkpoint_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
        save_checkpoint(out.checkpoint_path, model, cfg, adam_m, adam_v, adam_step, step,
                        cfg.epochs);
    }
    out.model = std::move(model);
    return out;
}

namespace {

struct VideoScores {
    std::string id;
    int frame_count = 0;
    int first_scored = 0;  // first frame index with a full window
    std::vector<double> psnr, d_spatial, d_temporal;
    std::vector<int> labels;  // full length; empty when unlabeled
};

VideoScores score_frames(network::Model<Real>& model, const config::RunConfig& cfg,
                         const std::string& video_id, const std::vector<Tensor<float>>& frames,
                         const std::vector<int>& labels) {
    const auto clips = data::make_clips(frames, cfg.clip_len, video_id);
    VideoScores vs;
    vs.id = video_id;
    vs.frame_count = static_cast<int>(frames.size());
    vs.first_scored = cfg.clip_len;
    vs.labels = labels;
    const auto convention = cfg.psnr_convention == "standard"
                                ? scoring::PsnrConvention::standard
                                : scoring::PsnrConvention::paper;
    for (const auto& clip : clips) {
        Graph<Real> g(false);
        model.bind(g);
        const network::DualForwardNodes fwd = network::dual_forward(
            g, model, g.constant(clip.input_frames), g.constant(clip.input_diffs), false);
        const Tensor<Real> fused = network::fuse_frames(
            g.value(fwd.spatial.prediction), g.value(fwd.temporal.prediction),
            network::last_frame(clip.input_frames), model.config.fusion);
        vs.psnr.push_back(scoring::psnr(scoring::to_unit_range(fused),
                                        scoring::to_unit_range(clip.target_frame), convention));
        if (cfg.memory_enabled) {
            vs.d_spatial.push_back(scoring::memory_distance(
                g.value(fwd.spatial.bottleneck_features), model.spatial.banks().back()));
            vs.d_temporal.push_back(scoring::memory_distance(
                g.value(fwd.temporal.bottleneck_features), model.temporal.banks().back()));
        } else {
            vs.d_spatial.push_back(0.0);
            vs.d_temporal.push_back(0.0);
        }
    }
    return vs;
}

scoring::ScoreSeries assemble_series(const VideoScores& vs, const std::vector<double>& fused) {
    scoring::ScoreSeries series;
    series.video_id = vs.id;
    const double min_fused =
        fused.empty() ? 0.0 : *std::min_element(fused.begin(), fused.end());
    const double max_psnr =
        vs.psnr.empty() ? scoring::kPsnrCap : *std::max_element(vs.psnr.begin(), vs.psnr.end());
    const double min_di = vs.d_spatial.empty()
                              ? 0.0
                              : *std::min_element(vs.d_spatial.begin(), vs.d_spatial.end());
    const double min_dx = vs.d_temporal.empty()
                              ? 0.0
                              : *std::min_element(vs.d_temporal.begin(), vs.d_temporal.end());
    for (int i = 0; i < vs.frame_count; ++i) {
        scoring::FrameScore f;
        f.frame_index = i;
        const int k = i - vs.first_scored;
        if (k >= 0 && k < static_cast<int>(fused.size())) {
            f.psnr = vs.psnr[static_cast<std::size_t>(k)];
            f.d_spatial = vs.d_spatial[static_cast<std::size_t>(k)];
            f.d_temporal = vs.d_temporal[static_cast<std::size_t>(k)];
            f.fused = fused[static_cast<std::size_t>(k)];
        } else {
            // warm-up frames without a full window score as maximally normal
            f.psnr = max_psnr;
            f.d_spatial = min_di;
            f.d_temporal = min_dx;
            f.fused = min_fused;
        }
        if (!vs.labels.empty()) f.label = vs.labels[static_cast<std::size_t>(i)];
        series.frames.push_back(f);
    }
    return series;
}

void dump_error_maps(network::Model<Real>& model, const config::RunConfig& cfg,
                     const std::string& video_id, const std::vector<Tensor<float>>& frames) {
    const auto clips = data::make_clips(frames, cfg.clip_len, video_id);
    const fs::path dir = fs::path(cfg.out_dir) / "error_maps" / video_id;
    fs::create_directories(dir);
    for (const auto& clip : clips) {
        Graph<Real> g(false);
        model.bind(g);
        const network::DualForwardNodes fwd = network::dual_forward(
            g, model, g.constant(clip.input_frames), g.constant(clip.input_diffs), false);
        const Tensor<Real> fused = network::fuse_frames(
            g.value(fwd.spatial.prediction), g.value(fwd.temporal.prediction),
            network::last_frame(clip.input_frames), model.config.fusion);
        std::vector<unsigned char> map(static_cast<std::size_t>(cfg.input_h) * cfg.input_w);
        for (std::size_t i = 0; i < map.size(); ++i) {
            double err = 0.0;
            for (int c = 0; c < cfg.image_channels; ++c)
                err = std::max(err, std::fabs(static_cast<double>(
                                        fused[i * cfg.image_channels + c] -
                                        clip.target_frame[i * cfg.image_channels + c])));
            map[i] = static_cast<unsigned char>(std::clamp(err * 0.5, 0.0, 1.0) * 255.0);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", clip.end_frame_index);
        data::write_png_gray((dir / name).string(), cfg.input_h, cfg.input_w, map.data());
    }
}

}  // namespace

double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("compute_auc: score/label lengths differ");
    long npos = 0, nneg = 0;
    for (int l : labels) (l == 1 ? npos : nneg)++;
    if (npos == 0 || nneg == 0)
        throw std::invalid_argument("compute_auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // rank sum of positives, average ranks over ties
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum += avg_rank;
        i = j + 1;
    }
    return (rank_sum - 0.5 * static_cast<double>(npos) * (static_cast<double>(npos) + 1.0)) /
           (static_cast<double>(npos) * static_cast<double>(nneg));
}

void write_series_csv(std::ostream& out, const scoring::ScoreSeries& series) {
    out << "frame,psnr,d_spatial,d_temporal,score,label\n";
    char line[256];
    for (const auto& f : series.frames) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,", f.frame_index, f.psnr,
                      f.d_spatial, f.d_temporal, f.fused);
        out << line;
        if (f.label >= 0) out << f.label;
        out << "\n";
    }
}

EvalReport evaluate(network::Model<Real>& model, const config::RunConfig& cfg) {
    const data::DatasetManifest manifest = data::load_dataset(cfg.data_root, "test");
    EvalReport report;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<VideoScores> all;
    for (const auto& video : manifest.videos) {
        std::vector<Tensor<float>> frames;
        for (const auto& path : video.frame_paths)
            frames.push_back(data::normalize_frame(data::read_png(path), cfg.input_h, cfg.input_w,
                                                   cfg.grayscale));
        if (static_cast<int>(frames.size()) < cfg.clip_len + 1) {
            report.warnings.push_back("video '" + video.id +
                                      "' shorter than clip_len+1, skipped");
            continue;
        }
        all.push_back(score_frames(model, cfg, video.id, frames, video.labels));
        report.scored_frames += static_cast<long>(frames.size());
        if (cfg.dump_error_maps && !cfg.out_dir.empty())
            dump_error_maps(model, cfg, video.id, frames);
    }

    // fused scores; normalization per video or over the pooled test set
    std::vector<std::vector<double>> fused(all.size());
    if (cfg.normalization_scope == "global") {
        std::vector<double> p, di, dx;
        for (const auto& vs : all) {
            p.insert(p.end(), vs.psnr.begin(), vs.psnr.end());
            di.insert(di.end(), vs.d_spatial.begin(), vs.d_spatial.end());
            dx.insert(dx.end(), vs.d_temporal.begin(), vs.d_temporal.end());
        }
        const std::vector<double> pooled = scoring::fuse_scores(p, di, dx, cfg.lambda);
        std::size_t off = 0;
        for (std::size_t v = 0; v < all.size(); ++v) {
            fused[v].assign(pooled.begin() + static_cast<long>(off),
                            pooled.begin() + static_cast<long>(off + all[v].psnr.size()));
            off += all[v].psnr.size();
        }
    } else {
        for (std::size_t v = 0; v < all.size(); ++v)
            fused[v] = scoring::fuse_scores(all[v].psnr, all[v].d_spatial, all[v].d_temporal,
                                            cfg.lambda);
    }

    std::vector<double> auc_scores;
    std::vector<int> auc_labels;
    for (std::size_t v = 0; v < all.size(); ++v) {
        scoring::ScoreSeries series = assemble_series(all[v], fused[v]);
        if (all[v].labels.empty()) {
            report.warnings.push_back("video '" + all[v].id +
                                      "' has no labels; excluded from AUC");
        } else {
            for (const auto& f : series.frames) {
                auc_scores.push_back(f.fused);
                auc_labels.push_back(f.label);
            }
            report.labeled_frames += static_cast<long>(series.frames.size());
        }
        report.series.push_back(std::move(series));
    }

    if (!auc_labels.empty()) report.frame_auc = compute_auc(auc_scores, auc_labels);

    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    report.eval_fps = secs > 0 ? static_cast<double>(report.scored_frames) / secs : 0.0;

    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        for (const auto& series : report.series) {
            std::ofstream csv(fs::path(cfg.out_dir) / ("scores_" + series.video_id + ".csv"));
            write_series_csv(csv, series);
        }
        std::ofstream rep(fs::path(cfg.out_dir) / "report.txt");
        char buf[128];
        std::snprintf(buf, sizeof(buf), "frame_auc=%.6f\n", report.frame_auc);
        rep << buf;
        std::snprintf(buf, sizeof(buf), "labeled_frames=%ld\n", report.labeled_frames);
        rep << buf;
        std::snprintf(buf, sizeof(buf), "scored_frames=%ld\n", report.scored_frames);
        rep << buf;
        std::snprintf(buf, sizeof(buf), "eval_fps=%.3f\n", report.eval_fps);
        rep << buf;
        for (const auto& w : report.warnings) rep << "warning=" << w << "\n";
    }
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    return report;
}

scoring::ScoreSeries score_video(network::Model<Real>& model, const config::RunConfig& cfg,
                                 const std::string& frames_dir) {
    if (!fs::is_directory(frames_dir))
        throw std::invalid_argument("frames directory missing: " + frames_dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(frames_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::invalid_argument("no .png frames in " + frames_dir);

    std::vector<Tensor<float>> frames;
    for (const auto& p : paths)
        frames.push_back(
            data::normalize_frame(data::read_png(p), cfg.input_h, cfg.input_w, cfg.grayscale));
    if (static_cast<int>(frames.size()) < cfg.clip_len + 1)
        throw std::invalid_argument("video has fewer than clip_len+1 frames");

    const std::string id = fs::path(frames_dir).filename().string();
    const VideoScores vs = score_frames(model, cfg, id, frames, {});
    const std::vector<double> fused =
        scoring::fuse_scores(vs.psnr, vs.d_spatial, vs.d_temporal, cfg.lambda);
    return assemble_series(vs, fused);
}

// ---- checkpoint io ----

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_named_tensor(std::ostream& out, const std::string& name, const Tensor<Real>& t) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    write_u64(out, t.size());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(Real)));
}

struct NamedTensor {
    std::string name;
    Tensor<Real> tensor;
};

NamedTensor read_named_tensor(std::istream& in) {
    NamedTensor nt;
    const std::uint32_t name_len = read_u32(in);
    nt.name.resize(name_len);
    in.read(nt.name.data(), name_len);
    const std::uint32_t rank = read_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(in));
    const std::uint64_t count = read_u64(in);
    nt.tensor = Tensor<Real>(shape);
    if (nt.tensor.size() != count) throw std::runtime_error("checkpoint: corrupt tensor header");
    in.read(reinterpret_cast<char*>(nt.tensor.data()),
            static_cast<std::streamsize>(count * sizeof(Real)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    return nt;
}

}  // namespace

void save_checkpoint(const std::string& path, network::Model<Real>& model,
                     const config::RunConfig& cfg, const std::vector<Tensor<Real>>& adam_m,
                     const std::vector<Tensor<Real>>& adam_v, long adam_step, long step,
                     int epoch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("STVD", 4);
    write_u32(out, kCheckpointVersion);

    const std::string cfg_text = config::echo(cfg);
    write_u64(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    write_u64(out, static_cast<std::uint64_t>(adam_step));
    write_u64(out, static_cast<std::uint64_t>(step));
    write_u32(out, static_cast<std::uint32_t>(epoch));

    std::vector<std::pair<std::string, Tensor<Real>*>> entries;
    std::vector<std::string> trainable_names;
    model.visit([&](const std::string& name, Tensor<Real>& t, int*, network::ParamKind kind) {
        entries.emplace_back(name, &t);
        if (kind == network::ParamKind::trainable) trainable_names.push_back(name);
    });
    const std::uint32_t moment_count =
        adam_m.empty() ? 0 : static_cast<std::uint32_t>(trainable_names.size());
    write_u32(out, static_cast<std::uint32_t>(entries.size()) + 2 * moment_count);
    for (const auto& [name, tensor] : entries) write_named_tensor(out, name, *tensor);
    if (moment_count) {
        for (std::size_t i = 0; i < trainable_names.size(); ++i)
            write_named_tensor(out, "adam.m." + trainable_names[i], adam_m[i]);
        for (std::size_t i = 0; i < trainable_names.size(); ++i)
            write_named_tensor(out, "adam.v." + trainable_names[i], adam_v[i]);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "STVD")
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint format version " +
                                 std::to_string(version));

    Checkpoint ck;
    const std::uint64_t cfg_len = read_u64(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    {
        std::istringstream ss(cfg_text);
        std::string line;
        while (std::getline(ss, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            config::set_key(ck.cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    ck.adam_step = static_cast<long>(read_u64(in));
    ck.step = static_cast<long>(read_u64(in));
    ck.epoch = static_cast<int>(read_u32(in));

    ck.model = network::build_model<Real>(config::model_config(ck.cfg), ck.cfg.seed);

    std::map<std::string, Tensor<Real>*> slots;
    std::vector<std::string> trainable_names;
    ck.model.visit([&](const std::string& name, Tensor<Real>& t, int*, network::ParamKind kind) {
        slots[name] = &t;
        if (kind == network::ParamKind::trainable) trainable_names.push_back(name);
    });
    ck.adam_m.resize(trainable_names.size());
    ck.adam_v.resize(trainable_names.size());
    for (std::size_t i = 0; i < trainable_names.size(); ++i) {
        slots["adam.m." + trainable_names[i]] = &ck.adam_m[i];
        slots["adam.v." + trainable_names[i]] = &ck.adam_v[i];
    }

    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt = read_named_tensor(in);
        const auto it = slots.find(nt.name);
        if (it == slots.end())
            throw std::runtime_error("checkpoint: unexpected tensor '" + nt.name + "'");
        if (it->second->defined() && it->second->size() > 0 &&
            it->second->shape() != nt.tensor.shape() && !nt.name.starts_with("adam."))
            throw std::runtime_error("checkpoint: shape mismatch for '" + nt.name + "'");
        *it->second = std::move(nt.tensor);
    }
    return ck;
}

}  // namespace stvad::pipeline
