#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "stvad/memory.hpp"
#include "stvad/tensor.hpp"

// Per-frame anomaly scoring: PSNR between fused and true frames, mean
// distance of bottleneck features to their nearest memory item, min-max
// normalization per test video, and the three-way fused score.
namespace stvad::scoring {

inline constexpr double kPsnrCap = 100.0;  // dB, used when the MSE vanishes

enum class PsnrConvention {
    paper,     // numerator max(pred), as printed
    standard,  // numerator max(pred)^2
};

struct FrameScore {
    int frame_index = 0;
    double psnr = 0.0;
    double d_spatial = 0.0;
    double d_temporal = 0.0;
    double fused = 0.0;
    int label = -1;  // -1 = unlabeled
};

struct ScoreSeries {
    std::string video_id;
    std::vector<FrameScore> frames;
};

// Maps [-1,1] pixels onto [0,1] so the PSNR numerator is sign-definite.
template <typename T>
Tensor<double> to_unit_range(const Tensor<T>& frame) {
    Tensor<double> out(frame.shape());
    for (std::size_t i = 0; i < frame.size(); ++i)
        out[i] = (static_cast<double>(frame[i]) + 1.0) * 0.5;
    return out;
}

// Eq. 14 on [0,1] frames. MSE below 1e-10 hits the cap; a nonpositive peak
// (all-black prediction) substitutes numerator 1.
inline double psnr(const Tensor<double>& pred, const Tensor<double>& target,
                   PsnrConvention convention = PsnrConvention::paper) {
    if (!same_shape(pred, target))
        throw std::invalid_argument("psnr: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    double mse = 0.0;
    double peak = pred[0];
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        mse += d * d;
        peak = std::max(peak, pred[i]);
    }
    mse /= static_cast<double>(pred.size());
    if (mse < 1e-10) return kPsnrCap;
    double num = peak <= 0.0 ? 1.0 : peak;
    if (convention == PsnrConvention::standard) num *= num;
    return std::min(kPsnrCap, 10.0 * std::log10(num / mse));
}

// Eq. 15: mean unsquared L2 distance between each feature row and its top
// cosine-similarity item.
template <typename T>
double memory_distance(const Tensor<T>& features, const memory::MemoryBank<T>& bank) {
    const int k = features.dim(0), c = features.dim(1);
    if (c != bank.feature_dim())
        throw std::invalid_argument("memory_distance: feature dim mismatch");
    const std::vector<int> near = memory::nearest_items(features, bank, 1);
    double total = 0.0;
    for (int f = 0; f < k; ++f) {
        const T* q = features.data() + static_cast<std::size_t>(f) * c;
        const T* p = bank.items.data() + static_cast<std::size_t>(near[f]) * c;
        double d2 = 0.0;
        for (int i = 0; i < c; ++i) {
            const double d = static_cast<double>(q[i]) - static_cast<double>(p[i]);
            d2 += d * d;
        }
        total += std::sqrt(d2);
    }
    return total / static_cast<double>(k);
}

// (x - min) / (max - min); a constant series maps to all zeros.
inline std::vector<double> minmax_normalize(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("minmax_normalize: empty series");
    const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(xs.size(), 0.0);
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - lo) * inv;
    }
    return out;
}

// Eq. 16: S = lambda*(1-g(P)) + (1-lambda)/2 * g(D_i) + (1-lambda)/2 * g(D_x).
inline std::vector<double> fuse_scores(const std::vector<double>& psnr_series,
                                       const std::vector<double>& d_spatial,
                                       const std::vector<double>& d_temporal, double lambda) {
    if (psnr_series.size() != d_spatial.size() || psnr_series.size() != d_temporal.size())
        throw std::invalid_argument("fuse_scores: series lengths differ");
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("fuse_scores: lambda must lie in [0, 1]");
    const std::vector<double> gp = minmax_normalize(psnr_series);
    const std::vector<double> gi = minmax_normalize(d_spatial);
    const std::vector<double> gx = minmax_normalize(d_temporal);
    std::vector<double> s(psnr_series.size());
    const double half = 0.5 * (1.0 - lambda);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = lambda * (1.0 - gp[i]) + half * gi[i] + half * gx[i];
    return s;
}

}  // namespace stvad::scoring
