#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stvad/tensor.hpp"

// Dataset ingestion and the synthetic desk-scale generator. Layout contract:
//   root/train/<video_id>/<zero-padded index>.png
//   root/test/<video_id>/<index>.png
//   root/test_labels/<video_id>.csv   (one 0/1 line per frame)
// PNG files are 8-bit; frames are normalized to [-1, 1] tensors.
namespace stvad::data {

struct Image8 {
    int h = 0, w = 0, ch = 1;
    std::vector<unsigned char> pixels;  // row-major h*w*ch
};

Image8 read_png(const std::string& path);
void write_png_gray(const std::string& path, int h, int w, const unsigned char* pixels);

// Bilinear resize to the target size, optional luminance conversion, then
// x / 127.5 - 1.
Tensor<float> normalize_frame(const Image8& img, int target_h, int target_w, bool grayscale);

struct VideoEntry {
    std::string id;
    std::vector<std::string> frame_paths;  // lexicographic order
    std::vector<int> labels;               // empty when unlabeled
};

struct DatasetManifest {
    std::string root;
    std::string split;
    std::vector<VideoEntry> videos;  // ordered by id

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (const auto& v : videos) n += v.frame_paths.size();
        return n;
    }
};

DatasetManifest load_dataset(const std::string& root, const std::string& split);

struct ClipBatch {
    Tensor<float> input_frames;  // {t-1, H, W, ch}
    Tensor<float> input_diffs;   // {t-1, H, W, ch}
    Tensor<float> target_frame;  // {1, H, W, ch}
    Tensor<float> target_diff;   // {1, H, W, ch}
    std::string video_id;
    int end_frame_index = 0;  // index of the target frame within the video
};

// Sliding windows of t+1 raw frames (one leading frame so every input
// difference exists); yields F - t clips for F >= t + 1, none otherwise.
std::vector<ClipBatch> make_clips(const std::vector<Tensor<float>>& frames, int t,
                                  const std::string& video_id);

enum class AnomalyType { none, overspeed, oversize, reversal };

struct AnomalySpec {
    AnomalyType type = AnomalyType::none;
    int start = 0;  // inclusive frame range
    int end = -1;
};

// Per-frame 0/1 labels implied by an anomaly interval.
std::vector<int> synth_labels(int frame_count, const AnomalySpec& anomaly);

struct SynthConfig {
    int train_videos = 8;
    int test_videos = 4;
    int train_frames = 32;
    int test_frames = 48;
    int height = 64;
    int width = 64;
    int sprites = 3;
};

// Renders moving bright rectangles on a dark background. Train videos hold
// only bounded-speed sprites; test videos add one sprite that misbehaves
// (speed, size or direction) inside a labeled interval. Deterministic per
// seed, byte-for-byte.
void synth_generate(const std::string& out_root, const SynthConfig& cfg, std::uint64_t seed);

}  // namespace stvad::data
