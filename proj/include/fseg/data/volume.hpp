#pragma once

#include "fseg/metrics/mask.hpp"
#include "fseg/modality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fseg::data {

/// One patient's scan: a stack of 2D slices with per-pixel liver masks.
struct Volume {
    int patient_id = 0;
    Modality modality = Modality::CT;
    int variant = 0;  // MRI sequence variant; 0 for CT
    int H = 0, W = 0;
    std::vector<std::vector<double>> slices;  // row-major H x W each
    std::vector<metrics::Mask> masks;
    std::uint64_t seed = 0;  // generator seed this volume came from
};

/// Single scalar mean/std describing a dataset.
struct NormStats {
    double mean = 0.0;
    double std = 0.0;
};

namespace detail {

inline std::vector<double> resize_bilinear(const std::vector<double>& src, int H, int W,
                                           int th, int tw) {
    std::vector<double> out(static_cast<std::size_t>(th) * tw);
    const double sy = static_cast<double>(H) / th, sx = static_cast<double>(W) / tw;
    for (int i = 0; i < th; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int j = 0; j < tw; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            const double top = src[static_cast<std::size_t>(y0) * W + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y0) * W + x1] * wx;
            const double bot = src[static_cast<std::size_t>(y1) * W + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y1) * W + x1] * wx;
            out[static_cast<std::size_t>(i) * tw + j] = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

inline metrics::Mask resize_nearest(const metrics::Mask& src, int th, int tw) {
    metrics::Mask out(th, tw);
    const double sy = static_cast<double>(src.H) / th, sx = static_cast<double>(src.W) / tw;
    for (int i = 0; i < th; ++i) {
        const int y = std::min(static_cast<int>((i + 0.5) * sy), src.H - 1);
        for (int j = 0; j < tw; ++j) {
            const int x = std::min(static_cast<int>((j + 0.5) * sx), src.W - 1);
            out.at(i, j) = src.at(y, x) != 0 ? 1 : 0;
        }
    }
    return out;
}

}  // namespace detail

/// Two-point Dixon reconstruction: water = (in + out)/2, fat = (in - out)/2.
/// Masks are copied from the in-phase volume.
inline std::pair<Volume, Volume> dixon_water_fat(const Volume& in_phase,
                                                 const Volume& out_phase) {
    if (in_phase.H != out_phase.H || in_phase.W != out_phase.W ||
        in_phase.slices.size() != out_phase.slices.size())
        throw std::invalid_argument("dixon_water_fat: volume shapes differ");
    Volume water = in_phase, fat = in_phase;
    for (std::size_t s = 0; s < in_phase.slices.size(); ++s) {
        for (std::size_t i = 0; i < in_phase.slices[s].size(); ++i) {
            const double a = in_phase.slices[s][i], b = out_phase.slices[s][i];
            water.slices[s][i] = (a + b) / 2.0;
            fat.slices[s][i] = (a - b) / 2.0;
        }
    }
    return {std::move(water), std::move(fat)};
}

/// Scalar statistics over a dataset: the mean of per-slice means and the mean
/// of per-slice standard deviations, over all slices of all volumes.
inline NormStats dataset_norm_stats(const std::vector<Volume>& volumes) {
    double mean_acc = 0.0, std_acc = 0.0;
    std::int64_t slices = 0;
    for (const auto& v : volumes)
        for (const auto& sl : v.slices) {
            double s1 = 0.0, s2 = 0.0;
            for (double x : sl) {
                s1 += x;
                s2 += x * x;
            }
            const double n = static_cast<double>(sl.size());
            const double mu = s1 / n;
            mean_acc += mu;
            std_acc += std::sqrt(std::max(s2 / n - mu * mu, 0.0));
            ++slices;
        }
    if (slices == 0) throw std::invalid_argument("dataset_norm_stats: no slices");
    NormStats st{mean_acc / slices, std_acc / slices};
    if (st.std == 0.0)
        std::cerr << "warning: dataset has zero intensity spread; normalization will fail\n";
    return st;
}

/// Standard preprocessing: bilinear resize to the target resolution, normalize
/// by the dataset scalar stats, clip to [-3, 3]. Masks use nearest-neighbour.
inline Volume preprocess(const Volume& v, const NormStats& stats, int th, int tw) {
    if (stats.std <= 0.0)
        throw std::domain_error("preprocess: std must be positive, got " +
                                std::to_string(stats.std));
    Volume out = v;
    out.H = th;
    out.W = tw;
    for (std::size_t s = 0; s < v.slices.size(); ++s) {
        out.slices[s] = detail::resize_bilinear(v.slices[s], v.H, v.W, th, tw);
        for (double& x : out.slices[s])
            x = std::clamp((x - stats.mean) / stats.std, -3.0, 3.0);
        out.masks[s] = detail::resize_nearest(v.masks[s], th, tw);
    }
    return out;
}

}  // namespace fseg::data
