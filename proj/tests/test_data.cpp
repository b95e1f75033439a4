#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stvad/data.hpp"
#include "stvad/rng.hpp"

using namespace stvad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("stvad_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor<float> const_frame(int h, int w, float v) {
    return Tensor<float>::full({1, h, w, 1}, v);
}

}  // namespace

TEST_CASE("png: write/read round trip preserves bytes") {
    Rng rng(71);
    const fs::path dir = fresh_dir("png");
    std::vector<unsigned char> px(32 * 24);
    for (auto& p : px) p = static_cast<unsigned char>(rng.uniform_int(0, 255));
    data::write_png_gray((dir / "a.png").string(), 24, 32, px.data());
    const data::Image8 img = data::read_png((dir / "a.png").string());
    CHECK(img.h == 24);
    CHECK(img.w == 32);
    CHECK(img.ch == 1);
    REQUIRE(img.pixels.size() == px.size());
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(img.pixels[i] == px[i]);

    CHECK_THROWS(data::read_png((dir / "missing.png").string()));
}

TEST_CASE("normalize_frame: endpoint mapping and constant resize") {
    data::Image8 img;
    img.h = 4;
    img.w = 4;
    img.ch = 1;
    img.pixels.assign(16, 255);
    img.pixels[5] = 0;
    Tensor<float> t = data::normalize_frame(img, 4, 4, true);
    CHECK(t[0] == 1.0f);
    CHECK(t[5] == -1.0f);

    // midpoint: 128 -> ~0.0039, 127 -> ~-0.0039; check the exact formula
    img.pixels.assign(16, 128);
    t = data::normalize_frame(img, 4, 4, true);
    CHECK(t[3] == doctest::Approx(128.0 / 127.5 - 1.0).epsilon(1e-6));

    // constant image stays constant under resize
    img.pixels.assign(16, 77);
    t = data::normalize_frame(img, 9, 7, true);
    CHECK(t.shape() == std::vector<int>{1, 9, 7, 1});
    for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(t[i] == doctest::Approx(77.0 / 127.5 - 1.0).epsilon(1e-6));
}

TEST_CASE("manifest: fixture tree, ordering, label validation") {
    const fs::path root = fresh_dir("manifest");
    std::vector<unsigned char> px(8 * 8, 100);
    for (const std::string vid : {"vb", "va"}) {
        fs::create_directories(root / "train" / vid);
        fs::create_directories(root / "test" / vid);
        for (int f = 0; f < 8; ++f) {
            char name[16];
            std::snprintf(name, sizeof(name), "%06d.png", f);
            data::write_png_gray((root / "train" / vid / name).string(), 8, 8, px.data());
            data::write_png_gray((root / "test" / vid / name).string(), 8, 8, px.data());
        }
    }
    fs::create_directories(root / "test_labels");

    // train split: labels are not consulted
    const data::DatasetManifest train = data::load_dataset(root.string(), "train");
    CHECK(train.videos.size() == 2);
    CHECK(train.videos[0].id == "va");
    CHECK(train.videos[1].id == "vb");
    CHECK(train.total_frames() == 16);
    for (const auto& v : train.videos) {
        CHECK(v.labels.empty());
        CHECK(std::is_sorted(v.frame_paths.begin(), v.frame_paths.end()));
    }

    // unlabeled test video is fine (warns downstream)
    data::DatasetManifest test = data::load_dataset(root.string(), "test");
    CHECK(test.videos[0].labels.empty());

    // label/frame count mismatch is an error naming the video
    {
        std::ofstream out(root / "test_labels" / "va.csv");
        for (int i = 0; i < 7; ++i) out << 0 << "\n";
    }
    try {
        data::load_dataset(root.string(), "test");
        FAIL("expected mismatch error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("va") != std::string::npos);
    }

    CHECK_THROWS_AS(data::load_dataset(root.string(), "nope"), std::invalid_argument);
}

TEST_CASE("make_clips: window layout, counts, and exact diffs") {
    const int t = 5;
    std::vector<Tensor<float>> frames;
    for (int f = 0; f < 10; ++f) frames.push_back(const_frame(4, 4, 0.1f * static_cast<float>(f)));
    const auto clips = data::make_clips(frames, t, "vid");
    CHECK(clips.size() == 5);  // F - t

    // first clip: inputs f1..f4, diffs use f0..f4, target f5
    const auto& c = clips[0];
    CHECK(c.end_frame_index == 5);
    CHECK(c.input_frames.shape() == std::vector<int>{4, 4, 4, 1});
    for (int i = 0; i < 4; ++i) {
        const float want = 0.1f * static_cast<float>(i + 1);
        CHECK(c.input_frames[static_cast<std::size_t>(i) * 16] == want);
        const float dwant = 0.1f * static_cast<float>(i + 1) - 0.1f * static_cast<float>(i);
        CHECK(c.input_diffs[static_cast<std::size_t>(i) * 16] == dwant);
    }
    CHECK(c.target_frame[0] == 0.5f);
    CHECK(c.target_diff[0] == 0.5f - 0.4f);

    // constant 0.2 then 0.5: diff map is constant 0.3
    std::vector<Tensor<float>> two;
    for (int f = 0; f < 6; ++f) two.push_back(const_frame(4, 4, f < 3 ? 0.2f : 0.5f));
    const auto clips2 = data::make_clips(two, t, "vid");
    REQUIRE(clips2.size() == 1);
    CHECK(clips2[0].input_diffs[2 * 16] == 0.5f - 0.2f);  // step at input index 2 (frame 3)

    // too short -> no clips
    std::vector<Tensor<float>> five(frames.begin(), frames.begin() + 5);
    CHECK(data::make_clips(five, t, "vid").empty());
}

TEST_CASE("make_clips: diffs reproduced by an independent loop over raw frames") {
    Rng rng(72);
    std::vector<Tensor<float>> frames;
    for (int f = 0; f < 12; ++f) {
        Tensor<float> fr({1, 4, 4, 1});
        for (std::size_t i = 0; i < fr.size(); ++i)
            fr[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
        frames.push_back(fr);
    }
    const int t = 5;
    const auto clips = data::make_clips(frames, t, "vid");
    CHECK(clips.size() == 7);
    for (std::size_t j = 0; j < clips.size(); ++j) {
        for (int i = 0; i < t - 1; ++i) {
            const auto& cur = frames[j + 1 + static_cast<std::size_t>(i)];
            const auto& prev = frames[j + static_cast<std::size_t>(i)];
            for (std::size_t p = 0; p < 16; ++p) {
                CHECK(clips[j].input_frames[static_cast<std::size_t>(i) * 16 + p] == cur[p]);
                CHECK(clips[j].input_diffs[static_cast<std::size_t>(i) * 16 + p] ==
                      cur[p] - prev[p]);
            }
        }
        for (std::size_t p = 0; p < 16; ++p) {
            CHECK(clips[j].target_frame[p] == frames[j + t][p]);
            CHECK(clips[j].target_diff[p] == frames[j + t][p] - frames[j + t - 1][p]);
        }
    }
}

TEST_CASE("synth labels: anomaly-free zeros and exact intervals") {
    const auto zeros = data::synth_labels(40, data::AnomalySpec{});
    CHECK(std::count(zeros.begin(), zeros.end(), 0) == 40);

    data::AnomalySpec spec;
    spec.type = data::AnomalyType::overspeed;
    spec.start = 20;
    spec.end = 35;
    const auto labels = data::synth_labels(50, spec);
    for (int i = 0; i < 50; ++i) CHECK(labels[static_cast<std::size_t>(i)] == (i >= 20 && i <= 35 ? 1 : 0));
}

TEST_CASE("synth_generate: layout, determinism, labels") {
    const fs::path a = fresh_dir("syn_a");
    const fs::path b = fresh_dir("syn_b");
    data::SynthConfig cfg;
    cfg.train_videos = 2;
    cfg.test_videos = 2;
    cfg.train_frames = 10;
    cfg.test_frames = 12;
    cfg.height = 32;
    cfg.width = 32;
    data::synth_generate(a.string(), cfg, 7);
    data::synth_generate(b.string(), cfg, 7);

    const data::DatasetManifest train = data::load_dataset(a.string(), "train");
    CHECK(train.videos.size() == 2);
    CHECK(train.videos[0].frame_paths.size() == 10);
    const data::DatasetManifest test = data::load_dataset(a.string(), "test");
    CHECK(test.videos.size() == 2);
    for (const auto& v : test.videos) {
        CHECK(v.labels.size() == 12);
        CHECK(std::count(v.labels.begin(), v.labels.end(), 1) > 0);
    }

    for (const auto& v : train.videos)
        for (const auto& path : v.frame_paths) {
            const fs::path rel = fs::relative(path, a);
            CHECK(slurp(path) == slurp(b / rel));
        }

    // different seed changes at least one frame
    const fs::path c = fresh_dir("syn_c");
    data::synth_generate(c.string(), cfg, 8);
    bool any_diff = false;
    for (const auto& v : train.videos)
        for (const auto& path : v.frame_paths) {
            const fs::path rel = fs::relative(path, a);
            any_diff = any_diff || slurp(path) != slurp(c / rel);
        }
    CHECK(any_diff);
}
