#include "stvad/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "stvad/rng.hpp"

namespace fs = std::filesystem;

namespace stvad::data {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unreadable image file: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    Image8 img;
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.ch = static_cast<int>(png_get_channels(png, info));
    if (img.ch != 1 && img.ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count in " + path);
    }
    img.pixels.resize(static_cast<std::size_t>(img.h) * img.w * img.ch);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<std::size_t>(y)] =
            img.pixels.data() + static_cast<std::size_t>(y) * img.w * img.ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_gray(const std::string& path, int h, int w, const unsigned char* pixels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot write image file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed writing image: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * w);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor<float> normalize_frame(const Image8& img, int target_h, int target_w, bool grayscale) {
    if (img.h < 1 || img.w < 1) throw std::invalid_argument("normalize_frame: empty image");
    const int src_ch = img.ch;
    const int out_ch = grayscale ? 1 : src_ch;

    // luminance conversion first, on the source grid
    std::vector<float> gray;
    const float* src = nullptr;
    std::vector<float> srcf(static_cast<std::size_t>(img.h) * img.w * src_ch);
    for (std::size_t i = 0; i < srcf.size(); ++i) srcf[i] = static_cast<float>(img.pixels[i]);
    if (grayscale && src_ch == 3) {
        gray.resize(static_cast<std::size_t>(img.h) * img.w);
        for (std::size_t p = 0; p < gray.size(); ++p)
            gray[p] = 0.299f * srcf[p * 3] + 0.587f * srcf[p * 3 + 1] + 0.114f * srcf[p * 3 + 2];
        src = gray.data();
    } else {
        src = srcf.data();
    }
    const int ch = grayscale ? 1 : src_ch;

    Tensor<float> out({1, target_h, target_w, out_ch});
    const float sy = static_cast<float>(img.h) / static_cast<float>(target_h);
    const float sx = static_cast<float>(img.w) / static_cast<float>(target_w);
    for (int y = 0; y < target_h; ++y) {
        const float fy = std::max(0.0f, (static_cast<float>(y) + 0.5f) * sy - 0.5f);
        const int y0 = std::min(static_cast<int>(fy), img.h - 1);
        const int y1 = std::min(y0 + 1, img.h - 1);
        const float wy = fy - static_cast<float>(y0);
        for (int x = 0; x < target_w; ++x) {
            const float fx = std::max(0.0f, (static_cast<float>(x) + 0.5f) * sx - 0.5f);
            const int x0 = std::min(static_cast<int>(fx), img.w - 1);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const float wx = fx - static_cast<float>(x0);
            for (int c = 0; c < ch; ++c) {
                auto at = [&](int yy, int xx) {
                    return src[(static_cast<std::size_t>(yy) * img.w + xx) * ch + c];
                };
                const float top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
                const float bot = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
                const float v = top * (1 - wy) + bot * wy;
                out[(static_cast<std::size_t>(y) * target_w + x) * out_ch + c] =
                    v / 127.5f - 1.0f;
            }
        }
    }
    return out;
}

DatasetManifest load_dataset(const std::string& root, const std::string& split) {
    const fs::path split_dir = fs::path(root) / split;
    if (!fs::is_directory(split_dir))
        throw std::invalid_argument("dataset split directory missing: " + split_dir.string());

    DatasetManifest m;
    m.root = root;
    m.split = split;
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(split_dir))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());

    for (const std::string& id : ids) {
        VideoEntry v;
        v.id = id;
        for (const auto& e : fs::directory_iterator(split_dir / id))
            if (e.is_regular_file() && e.path().extension() == ".png")
                v.frame_paths.push_back(e.path().string());
        std::sort(v.frame_paths.begin(), v.frame_paths.end());

        const fs::path label_file = fs::path(root) / "test_labels" / (id + ".csv");
        if (split == "test" && fs::is_regular_file(label_file)) {
            std::ifstream in(label_file);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                v.labels.push_back(std::stoi(line));
            }
            if (v.labels.size() != v.frame_paths.size())
                throw std::invalid_argument("label/frame count mismatch for video '" + id +
                                            "': " + std::to_string(v.labels.size()) +
                                            " labels vs " + std::to_string(v.frame_paths.size()) +
                                            " frames");
        }
        m.videos.push_back(std::move(v));
    }
    return m;
}

std::vector<ClipBatch> make_clips(const std::vector<Tensor<float>>& frames, int t,
                                  const std::string& video_id) {
    std::vector<ClipBatch> clips;
    const int f = static_cast<int>(frames.size());
    if (f < t + 1) return clips;
    const auto& shape = frames[0].shape();
    const int h = shape[1], w = shape[2], ch = shape[3];
    const int steps = t - 1;

    for (int j = 0; j + t < f; ++j) {
        ClipBatch c;
        c.video_id = video_id;
        c.end_frame_index = j + t;
        c.input_frames = Tensor<float>({steps, h, w, ch});
        c.input_diffs = Tensor<float>({steps, h, w, ch});
        const std::size_t plane = static_cast<std::size_t>(h) * w * ch;
        for (int i = 0; i < steps; ++i) {
            const Tensor<float>& cur = frames[static_cast<std::size_t>(j + 1 + i)];
            const Tensor<float>& prev = frames[static_cast<std::size_t>(j + i)];
            std::copy(cur.data(), cur.data() + plane, c.input_frames.data() + i * plane);
            for (std::size_t p = 0; p < plane; ++p)
                c.input_diffs[i * plane + p] = cur[p] - prev[p];
        }
        c.target_frame = frames[static_cast<std::size_t>(j + t)].clone();
        c.target_diff = Tensor<float>({1, h, w, ch});
        const Tensor<float>& tgt = frames[static_cast<std::size_t>(j + t)];
        const Tensor<float>& last = frames[static_cast<std::size_t>(j + t - 1)];
        for (std::size_t p = 0; p < plane; ++p) c.target_diff[p] = tgt[p] - last[p];
        clips.push_back(std::move(c));
    }
    return clips;
}

std::vector<int> synth_labels(int frame_count, const AnomalySpec& anomaly) {
    std::vector<int> labels(static_cast<std::size_t>(frame_count), 0);
    if (anomaly.type == AnomalyType::none) return labels;
    for (int i = std::max(0, anomaly.start); i <= std::min(frame_count - 1, anomaly.end); ++i)
        labels[static_cast<std::size_t>(i)] = 1;
    return labels;
}

namespace {

struct Sprite {
    double x, y;    // center
    double vx, vy;  // px per frame
    double half;    // half side length
    unsigned char intensity;
};

void bounce(double& pos, double& vel, double half, double limit) {
    pos += vel;
    if (pos - half < 0) {
        pos = half;
        vel = -vel;
    }
    if (pos + half > limit - 1) {
        pos = limit - 1 - half;
        vel = -vel;
    }
}

void render(std::vector<unsigned char>& canvas, int h, int w, const Sprite& s, double half) {
    const int y0 = std::max(0, static_cast<int>(std::lround(s.y - half)));
    const int y1 = std::min(h - 1, static_cast<int>(std::lround(s.y + half)));
    const int x0 = std::max(0, static_cast<int>(std::lround(s.x - half)));
    const int x1 = std::min(w - 1, static_cast<int>(std::lround(s.x + half)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            unsigned char& px = canvas[static_cast<std::size_t>(y) * w + x];
            px = std::max(px, s.intensity);
        }
}

Sprite random_sprite(Rng& rng, int h, int w) {
    Sprite s;
    s.half = rng.uniform(3.0, 6.0);
    s.x = rng.uniform(s.half + 1, w - 2 - s.half);
    s.y = rng.uniform(s.half + 1, h - 2 - s.half);
    const double speed = rng.uniform(0.7, 1.6);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    s.intensity = static_cast<unsigned char>(rng.uniform_int(190, 255));
    return s;
}

void write_video(const fs::path& dir, int frames, int h, int w, std::vector<Sprite> sprites,
                 const AnomalySpec& anomaly) {
    fs::create_directories(dir);
    constexpr unsigned char kBackground = 16;
    std::vector<unsigned char> canvas;
    for (int f = 0; f < frames; ++f) {
        canvas.assign(static_cast<std::size_t>(h) * w, kBackground);
        const bool active = anomaly.type != AnomalyType::none && f >= anomaly.start &&
                            f <= anomaly.end;
        for (std::size_t i = 0; i < sprites.size(); ++i) {
            Sprite& s = sprites[i];
            const bool target = active && i + 1 == sprites.size();  // last sprite misbehaves
            double speed_mul = 1.0;
            double half = s.half;
            if (target) {
                switch (anomaly.type) {
                    case AnomalyType::overspeed: speed_mul = 5.0; break;
                    case AnomalyType::oversize: half = s.half * 3.0; break;
                    case AnomalyType::reversal:
                        // direction flips every frame inside the interval; the
                        // boost keeps the shuttling visible against 1px motion
                        s.vx = -s.vx;
                        s.vy = -s.vy;
                        speed_mul = 3.0;
                        break;
                    case AnomalyType::none: break;
                }
            }
            double vx = s.vx * speed_mul, vy = s.vy * speed_mul;
            bounce(s.x, vx, half, static_cast<double>(w));
            bounce(s.y, vy, half, static_cast<double>(h));
            s.vx = vx / speed_mul;
            s.vy = vy / speed_mul;
            render(canvas, h, w, s, half);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", f);
        write_png_gray((dir / name).string(), h, w, canvas.data());
    }
}

}  // namespace

void synth_generate(const std::string& out_root, const SynthConfig& cfg, std::uint64_t seed) {
    const fs::path root(out_root);
    std::error_code ec;
    fs::create_directories(root / "train", ec);
    fs::create_directories(root / "test", ec);
    fs::create_directories(root / "test_labels", ec);
    if (ec) throw std::runtime_error("cannot create dataset directories under " + out_root);

    for (int v = 0; v < cfg.train_videos; ++v) {
        Rng rng(seed * 1000003 + static_cast<std::uint64_t>(v));
        std::vector<Sprite> sprites;
        for (int s = 0; s < cfg.sprites; ++s)
            sprites.push_back(random_sprite(rng, cfg.height, cfg.width));
        char name[16];
        std::snprintf(name, sizeof(name), "v%03d", v);
        write_video(root / "train" / name, cfg.train_frames, cfg.height, cfg.width, sprites,
                    AnomalySpec{});
    }

    const AnomalyType kinds[3] = {AnomalyType::overspeed, AnomalyType::oversize,
                                  AnomalyType::reversal};
    for (int v = 0; v < cfg.test_videos; ++v) {
        Rng rng(seed * 2000003 + static_cast<std::uint64_t>(v) + 500);
        std::vector<Sprite> sprites;
        for (int s = 0; s < cfg.sprites; ++s)
            sprites.push_back(random_sprite(rng, cfg.height, cfg.width));
        AnomalySpec anomaly;
        anomaly.type = kinds[v % 3];
        anomaly.start = cfg.test_frames / 3;
        anomaly.end = anomaly.start + cfg.test_frames / 4;
        char name[16];
        std::snprintf(name, sizeof(name), "v%03d", v);
        write_video(root / "test" / name, cfg.test_frames, cfg.height, cfg.width, sprites,
                    anomaly);
        const std::vector<int> labels = synth_labels(cfg.test_frames, anomaly);
        std::ofstream out(root / "test_labels" / (std::string(name) + ".csv"));
        for (int l : labels) out << l << "\n";
    }
}

}  // namespace stvad::data
