#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stvad/blocks.hpp"
#include "stvad/graph.hpp"
#include "stvad/memory.hpp"
#include "stvad/rng.hpp"
#include "stvad/tensor.hpp"

// Dual-stream predictive autoencoder. Each subnetwork is an encoder of
// stride-2 conv + RTSM stages (time axis intact), a memory module on the
// time-merged bottleneck, and a decoder of deconv + RCAM stages. Every skip
// passes through its own memory module; the read output is concatenated with
// the decoder features at equal resolution. At the bottleneck level the time
// steps are already merged onto channels, so the deepest skip reads merged
// features; shallower skips read the last time step.
namespace stvad::network {

enum class FusionMode {
    mean_motion_compensated,  // 0.5 * (I_hat + (I_last + X_hat))
    literal_sum,              // I_hat + X_hat
};

struct ModelConfig {
    int input_h = 64;
    int input_w = 64;
    int image_channels = 1;
    int clip_len = 5;  // t; the network consumes t-1 frames
    std::vector<int> channels = {32, 64, 128, 256};
    int levels = 4;
    int memory_items = 20;
    double shift_fraction = 0.125;
    double leaky_slope = 0.2;
    int reduction_ratio = 16;
    bool shift_bidirectional = true;
    bool batchnorm_enabled = true;
    bool memory_enabled = true;
    FusionMode fusion = FusionMode::mean_motion_compensated;

    int time_steps() const { return clip_len - 1; }

    // Channel count seen by the RCAM at decoder stage s (deepest = levels).
    int decoder_stage_channels(int stage) const {
        return stage >= 2 ? channels[static_cast<std::size_t>(stage) - 2] : channels[0];
    }

    void validate() const {
        if (levels < 1) throw std::invalid_argument("config: levels must be >= 1");
        if (static_cast<int>(channels.size()) != levels)
            throw std::invalid_argument("config: channel list length " +
                                        std::to_string(channels.size()) + " != levels " +
                                        std::to_string(levels));
        for (int c : channels)
            if (c < 1) throw std::invalid_argument("config: channel counts must be positive");
        const int div = 1 << levels;
        if (input_h % div != 0 || input_w % div != 0)
            throw std::invalid_argument("config: input size " + std::to_string(input_h) + "x" +
                                        std::to_string(input_w) + " not divisible by 2^levels = " +
                                        std::to_string(div));
        if (clip_len < 2) throw std::invalid_argument("config: clip_len must be >= 2");
        if (memory_items < 3) throw std::invalid_argument("config: memory_items must be >= 3");
        if (shift_fraction < 0.0 || shift_fraction > 0.5)
            throw std::invalid_argument("config: shift_fraction must lie in [0, 0.5]");
        if (leaky_slope <= 0.0 || leaky_slope >= 1.0)
            throw std::invalid_argument("config: leaky_slope must lie in (0, 1)");
        for (int s = levels; s >= 1; --s) {
            const int c = decoder_stage_channels(s);
            if (c % reduction_ratio != 0)
                throw std::invalid_argument(
                    "config: reduction_ratio " + std::to_string(reduction_ratio) +
                    " does not divide decoder channel count " + std::to_string(c));
        }
    }
};

enum class ParamKind { trainable, state };

// Name, tensor, graph binding slot (null for non-trainable state), kind.
template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&, int*, ParamKind)>;

// Node ids of one subnetwork forward pass.
struct SubnetForwardNodes {
    int prediction = -1;
    std::vector<int> module_features;          // skips 1..L, then bottleneck
    std::vector<memory::ReadNodes> module_reads;
    int bottleneck_features = -1;
    std::vector<std::pair<int, int>> concat_trace;  // (decoder ch, skip ch) per stage
};

// Value-level mirror of a forward pass.
template <typename T>
struct SubnetOutput {
    Tensor<T> prediction;                         // {1,H,W,ch}, tanh range
    std::vector<Tensor<T>> module_features;       // K x C per memory module
    std::vector<memory::ReadResult<T>> module_reads;
    Tensor<T> bottleneck_features;
};

template <typename T>
class Subnet {
public:
    Subnet() = default;

    Subnet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        const T slope = static_cast<T>(cfg.leaky_slope);
        const auto mode = cfg.shift_bidirectional ? blocks::ShiftMode::bidirectional
                                                  : blocks::ShiftMode::forward_only;
        int cin = cfg.image_channels;
        for (int l = 1; l <= cfg.levels; ++l) {
            const int cout = cfg.channels[static_cast<std::size_t>(l) - 1];
            enc_convs_.push_back(blocks::make_conv<T>(cin, cout, rng, 3, 2, 1));
            enc_rtsms_.push_back(blocks::make_rtsm<T>(cout, rng, cfg.shift_fraction, slope, mode));
            cin = cout;
        }
        for (int s = cfg.levels; s >= 1; --s) {
            const int in_ch = 2 * skip_dim(s);
            const int out_ch = cfg.decoder_stage_channels(s);
            dec_deconvs_.push_back(blocks::make_deconv<T>(in_ch, out_ch, rng));
            dec_rcams_.push_back(blocks::make_rcam<T>(out_ch, cfg.reduction_ratio, rng, slope,
                                                      cfg.batchnorm_enabled));
        }
        head_ = blocks::make_conv<T>(cfg.channels[0], cfg.image_channels, rng, 3, 1, 1);
        for (int l = 1; l <= cfg.levels; ++l)
            banks_.push_back(
                memory::init_bank<T>(cfg.memory_items, skip_dim(l), rng.next_u64()));
        banks_.push_back(
            memory::init_bank<T>(cfg.memory_items, bottleneck_dim(), rng.next_u64()));
    }

    int memory_module_count() const { return static_cast<int>(banks_.size()); }
    std::vector<memory::MemoryBank<T>>& banks() { return banks_; }
    const std::vector<memory::MemoryBank<T>>& banks() const { return banks_; }

    // Feature dim read by the memory module at skip level l (1-based).
    int skip_dim(int l) const {
        return l == cfg_.levels ? cfg_.time_steps() * cfg_.channels.back()
                                : cfg_.channels[static_cast<std::size_t>(l) - 1];
    }
    int bottleneck_dim() const { return cfg_.time_steps() * cfg_.channels.back(); }

    void bind(Graph<T>& g) {
        for (auto& c : enc_convs_) c.bind(g);
        for (auto& r : enc_rtsms_) r.bind(g);
        for (auto& d : dec_deconvs_) d.bind(g);
        for (auto& r : dec_rcams_) r.bind(g);
        head_.bind(g);
    }

    SubnetForwardNodes forward(Graph<T>& g, int input, bool training) {
        const Tensor<T>& in = g.value(input);
        if (in.rank() != 4 || in.dim(0) != cfg_.time_steps() || in.dim(1) != cfg_.input_h ||
            in.dim(2) != cfg_.input_w || in.dim(3) != cfg_.image_channels)
            throw std::invalid_argument("subnet: input shape " + shape_str(in.shape()) +
                                        " does not match config");

        SubnetForwardNodes out;
        out.module_features.resize(banks_.size(), -1);
        out.module_reads.resize(banks_.size());

        std::vector<int> enc;
        int x = input;
        for (int l = 1; l <= cfg_.levels; ++l) {
            x = enc_convs_[static_cast<std::size_t>(l) - 1].apply(g, x);
            x = blocks::rtsm(g, x, enc_rtsms_[static_cast<std::size_t>(l) - 1]);
            enc.push_back(x);
        }

        const int hl = cfg_.input_h >> cfg_.levels;
        const int wl = cfg_.input_w >> cfg_.levels;
        const int merged = g.merge_time(enc.back());
        const int bq = g.reshape(merged, {hl * wl, bottleneck_dim()});
        out.module_features.back() = bq;
        out.bottleneck_features = bq;

        int d;
        if (cfg_.memory_enabled) {
            const memory::ReadNodes rn = memory::read_nodes(g, bq, banks_.back());
            out.module_reads.back() = rn;
            d = g.reshape(rn.q_hat, {1, hl, wl, bottleneck_dim()});
        } else {
            d = merged;
        }

        for (int l = cfg_.levels; l >= 1; --l) {
            const int h = cfg_.input_h >> l;
            const int w = cfg_.input_w >> l;
            const int dim = skip_dim(l);
            const int skip_map = l == cfg_.levels ? merged : g.slice_time_last(enc[static_cast<std::size_t>(l) - 1]);
            const int q = g.reshape(skip_map, {h * w, dim});
            out.module_features[static_cast<std::size_t>(l) - 1] = q;

            int skip_feat;
            if (cfg_.memory_enabled) {
                const memory::ReadNodes rn = memory::read_nodes(g, q, banks_[static_cast<std::size_t>(l) - 1]);
                out.module_reads[static_cast<std::size_t>(l) - 1] = rn;
                skip_feat = g.reshape(rn.q_hat, {1, h, w, dim});
            } else {
                skip_feat = skip_map;
            }

            out.concat_trace.emplace_back(g.value(d).dim(3), g.value(skip_feat).dim(3));
            d = g.concat_channels({d, skip_feat});
            const std::size_t stage_idx = static_cast<std::size_t>(cfg_.levels - l);
            d = dec_deconvs_[stage_idx].apply(g, d);
            d = blocks::rcam(g, d, dec_rcams_[stage_idx], training);
        }

        out.prediction = g.tanh_(head_.apply(g, d));
        return out;
    }

    SubnetOutput<T> forward_values(const Tensor<T>& input, bool training = false) {
        Graph<T> g(false);
        bind(g);
        const SubnetForwardNodes n = forward(g, g.leaf(input), training);
        SubnetOutput<T> out;
        out.prediction = g.value(n.prediction);
        for (int id : n.module_features) out.module_features.push_back(g.value(id));
        if (cfg_.memory_enabled)
            for (const auto& rn : n.module_reads)
                out.module_reads.push_back(memory::ReadResult<T>{
                    g.value(rn.q_hat), g.value(rn.weights), g.value(rn.similarity)});
        out.bottleneck_features = g.value(n.bottleneck_features);
        return out;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
            visit_conv(prefix + ".enc" + std::to_string(i + 1) + ".conv", enc_convs_[i], fn);
            auto& r = enc_rtsms_[i];
            visit_conv(prefix + ".enc" + std::to_string(i + 1) + ".rtsm.conv1", r.conv1, fn);
            visit_conv(prefix + ".enc" + std::to_string(i + 1) + ".rtsm.conv2", r.conv2, fn);
        }
        for (std::size_t i = 0; i < dec_deconvs_.size(); ++i) {
            const std::string stage =
                prefix + ".dec" + std::to_string(cfg_.levels - static_cast<int>(i));
            auto& dc = dec_deconvs_[i];
            fn(stage + ".deconv.w", dc.w, &dc.wid, ParamKind::trainable);
            fn(stage + ".deconv.b", dc.b, &dc.bid, ParamKind::trainable);
            auto& rc = dec_rcams_[i];
            visit_conv(stage + ".rcam.cb.conv1", rc.conv_block.conv1, fn);
            visit_conv(stage + ".rcam.cb.conv2", rc.conv_block.conv2, fn);
            auto& bn = rc.conv_block.bn;
            fn(stage + ".rcam.cb.bn.gamma", bn.gamma, &bn.gid, ParamKind::trainable);
            fn(stage + ".rcam.cb.bn.beta", bn.beta, &bn.bid, ParamKind::trainable);
            fn(stage + ".rcam.cb.bn.running_mean", bn.running_mean, nullptr, ParamKind::state);
            fn(stage + ".rcam.cb.bn.running_var", bn.running_var, nullptr, ParamKind::state);
            auto& cab = rc.cab;
            fn(stage + ".rcam.cab.w3", cab.w3, &cab.w3id, ParamKind::trainable);
            fn(stage + ".rcam.cab.b3", cab.b3, &cab.b3id, ParamKind::trainable);
            fn(stage + ".rcam.cab.w4", cab.w4, &cab.w4id, ParamKind::trainable);
            fn(stage + ".rcam.cab.b4", cab.b4, &cab.b4id, ParamKind::trainable);
        }
        visit_conv(prefix + ".head", head_, fn);
        for (std::size_t i = 0; i < banks_.size(); ++i) {
            const std::string name = i + 1 == banks_.size()
                                         ? prefix + ".bank.bottleneck"
                                         : prefix + ".bank.skip" + std::to_string(i + 1);
            fn(name, banks_[i].items, nullptr, ParamKind::state);
        }
    }

private:
    static void visit_conv(const std::string& name, blocks::Conv2dLayer<T>& c,
                           const ParamVisitor<T>& fn) {
        fn(name + ".w", c.w, &c.wid, ParamKind::trainable);
        fn(name + ".b", c.b, &c.bid, ParamKind::trainable);
    }

    ModelConfig cfg_;
    std::vector<blocks::Conv2dLayer<T>> enc_convs_;
    std::vector<blocks::RtsmParams<T>> enc_rtsms_;
    std::vector<blocks::Deconv2dLayer<T>> dec_deconvs_;  // index 0 = deepest stage
    std::vector<blocks::RcamParams<T>> dec_rcams_;
    blocks::Conv2dLayer<T> head_;
    std::vector<memory::MemoryBank<T>> banks_;  // skips 1..L, then bottleneck
};

// Spatial stream predicts the next frame from frames; temporal stream
// predicts the next frame difference from differences.
template <typename T>
struct Model {
    ModelConfig config;
    Subnet<T> spatial;
    Subnet<T> temporal;

    void bind(Graph<T>& g) {
        spatial.bind(g);
        temporal.bind(g);
    }

    void visit(const ParamVisitor<T>& fn) {
        spatial.visit("spatial", fn);
        temporal.visit("temporal", fn);
    }
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model<T> m;
    m.config = cfg;
    m.spatial = Subnet<T>(cfg, rng);
    m.temporal = Subnet<T>(cfg, rng);
    return m;
}

// Y_hat from the two stream outputs, clamped to the tanh range.
template <typename T>
Tensor<T> fuse_frames(const Tensor<T>& i_hat, const Tensor<T>& x_hat, const Tensor<T>& i_last,
                      FusionMode mode) {
    if (!same_shape(i_hat, x_hat) || !same_shape(i_hat, i_last))
        throw std::invalid_argument("fuse_frames: frame shapes differ");
    Tensor<T> y(i_hat.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const T v = mode == FusionMode::mean_motion_compensated
                        ? static_cast<T>(0.5) * (i_hat[i] + (i_last[i] + x_hat[i]))
                        : i_hat[i] + x_hat[i];
        y[i] = std::clamp(v, T(-1), T(1));
    }
    return y;
}

struct DualForwardNodes {
    SubnetForwardNodes spatial;
    SubnetForwardNodes temporal;
};

template <typename T>
DualForwardNodes dual_forward(Graph<T>& g, Model<T>& model, int frames, int diffs, bool training) {
    DualForwardNodes out;
    out.spatial = model.spatial.forward(g, frames, training);
    out.temporal = model.temporal.forward(g, diffs, training);
    return out;
}

// Slice {T,H,W,C} -> {1,H,W,C} at the last time step (value level).
template <typename T>
Tensor<T> last_frame(const Tensor<T>& frames) {
    const int tdim = frames.dim(0);
    const std::size_t plane = frames.size() / static_cast<std::size_t>(tdim);
    Tensor<T> out({1, frames.dim(1), frames.dim(2), frames.dim(3)});
    std::copy(frames.data() + (tdim - 1) * plane, frames.data() + tdim * plane, out.data());
    return out;
}

}  // namespace stvad::network
