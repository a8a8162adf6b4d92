#pragma once

#include "fseg/data/volume.hpp"
#include "fseg/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace fseg::data {

/// Knobs of the synthetic multi-modal generator. CT-like volumes have a
/// bright liver on a dark background; MRI-like volumes invert the contrast
/// and add a smooth multiplicative bias field. Band centers are drawn once
/// per patient, so intensity profiles vary across patients.
struct SyntheticConfig {
    int height = 32;
    int width = 32;
    int slices_per_volume = 8;
    double noise = 0.03;  // additive Gaussian sigma

    double ct_liver_lo = 0.52, ct_liver_hi = 0.80;
    double ct_bg_lo = 0.15, ct_bg_hi = 0.37;
    double mri_liver_lo = 0.20, mri_liver_hi = 0.42;
    double mri_bg_lo = 0.57, mri_bg_hi = 0.85;

    double bias_strength = 0.06;    // MRI bias field amplitude
    double variant_shift = -0.04;   // liver band offset per MRI sequence variant
    double slice_jitter = 0.02;     // per-slice wander of the band centers
};

/// Deterministic smooth random blob ("liver") per slice with a
/// modality-dependent intensity profile. The geometry depends only on
/// patient_seed, so different MRI sequence variants of the same patient share
/// shapes; intensities depend on (modality, variant, patient_seed).
inline Volume generate_synthetic_volume(Modality modality, int variant,
                                        std::uint64_t patient_seed,
                                        const SyntheticConfig& cfg) {
    const int H = cfg.height, W = cfg.width, n = cfg.slices_per_volume;
    rng::Stream shape_rs(rng::mix({patient_seed, rng::kVolume}));
    rng::Stream intensity_rs(rng::mix({patient_seed, rng::kVolume,
                                       modality == Modality::CT ? 1ull : 2ull,
                                       static_cast<std::uint64_t>(variant), 0x9D}));

    // patient-level geometry
    const double cx0 = shape_rs.uniform(0.38, 0.62) * W;
    const double cy0 = shape_rs.uniform(0.38, 0.62) * H;
    const double r0 = shape_rs.uniform(0.26, 0.36) * std::min(H, W);
    const double aspect = shape_rs.uniform(0.80, 1.25);
    const double a1 = shape_rs.uniform(0.0, 0.22), p1 = shape_rs.uniform(0, 2 * std::numbers::pi);
    const double a2 = shape_rs.uniform(0.0, 0.10), p2 = shape_rs.uniform(0, 2 * std::numbers::pi);
    const double a3 = shape_rs.uniform(0.0, 0.06), p3 = shape_rs.uniform(0, 2 * std::numbers::pi);
    const double drift_x = shape_rs.uniform(-1.0, 1.0) * 0.08 * W;
    const double drift_y = shape_rs.uniform(-1.0, 1.0) * 0.08 * H;
    const double rx = r0 * aspect, ry = r0 / aspect;

    // distractor organs: smaller blobs outside the liver sharing its intensity
    // band, so they can only be told apart by shape and position
    const int n_distract = static_cast<int>(shape_rs.uniform_int(3));  // 0..2
    double d_r[2], d_cx[2], d_cy[2];
    for (int d = 0; d < 2; ++d) {
        d_r[d] = shape_rs.uniform(0.25, 0.45) * r0;
        const double ang = shape_rs.uniform(0, 2 * std::numbers::pi);
        const double dist = r0 * 1.35 + d_r[d] + 2.0 + shape_rs.uniform(0.0, 3.0);
        d_cx[d] = std::clamp(cx0 + dist * std::cos(ang), 1.0, W - 2.0);
        d_cy[d] = std::clamp(cy0 + dist * std::sin(ang), 1.0, H - 2.0);
    }

    // patient-level intensity profile
    const bool ct = modality == Modality::CT;
    double liver0 = ct ? intensity_rs.uniform(cfg.ct_liver_lo, cfg.ct_liver_hi)
                       : intensity_rs.uniform(cfg.mri_liver_lo, cfg.mri_liver_hi) +
                             cfg.variant_shift * variant;
    const double bg0 = ct ? intensity_rs.uniform(cfg.ct_bg_lo, cfg.ct_bg_hi)
                          : intensity_rs.uniform(cfg.mri_bg_lo, cfg.mri_bg_hi);
    const double bias_amp = ct ? 0.0 : intensity_rs.uniform(0.5, 1.0) * cfg.bias_strength;
    const double bias_px = intensity_rs.uniform(0.0, 1.0);
    const double bias_py = intensity_rs.uniform(0.0, 1.0);
    const double d_int[2] = {liver0 + intensity_rs.uniform(-0.08, 0.08),
                             liver0 + intensity_rs.uniform(-0.08, 0.08)};

    Volume vol;
    vol.modality = modality;
    vol.variant = ct ? 0 : variant;
    vol.H = H;
    vol.W = W;
    vol.seed = patient_seed;

    for (int s = 0; s < n; ++s) {
        const double z = (s + 0.5) / n;
        const double scale = 0.85 + 0.15 * std::sin(std::numbers::pi * z);
        const double cx = cx0 + drift_x * (z - 0.5) + shape_rs.uniform(-0.5, 0.5);
        const double cy = cy0 + drift_y * (z - 0.5) + shape_rs.uniform(-0.5, 0.5);
        const double liver = liver0 + intensity_rs.uniform(-1.0, 1.0) * cfg.slice_jitter;
        const double bg = bg0 + intensity_rs.uniform(-1.0, 1.0) * cfg.slice_jitter;

        std::vector<double> img(static_cast<std::size_t>(H) * W);
        metrics::Mask mask(H, W);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double dx = j - cx, dy = i - cy;
                const double r = std::hypot(dx, dy);
                const double th = std::atan2(dy, dx);
                // wobbled ellipse radius in direction th
                const double re = rx * ry /
                                  std::sqrt(ry * std::cos(th) * ry * std::cos(th) +
                                            rx * std::sin(th) * rx * std::sin(th));
                const double R = scale * re *
                                 (1.0 + a1 * std::sin(th + p1) + a2 * std::sin(2 * th + p2) +
                                  a3 * std::sin(3 * th + p3));
                // half-contrast ramp centered on the mask boundary
                const double soft = std::clamp((R - r) / 0.8 + 0.5, 0.0, 1.0);
                double val = bg + (liver - bg) * soft;
                for (int d = 0; d < n_distract; ++d) {
                    const double rd = std::hypot(j - d_cx[d], i - d_cy[d]);
                    const double soft_d =
                        std::clamp((scale * d_r[d] - rd) / 0.8 + 0.5, 0.0, 1.0);
                    val += (d_int[d] - bg) * soft_d * (1.0 - soft);
                }
                if (!ct)
                    val *= 1.0 + bias_amp *
                                     std::sin(std::numbers::pi * (static_cast<double>(j) / W +
                                                                  bias_px)) *
                                     std::sin(std::numbers::pi * (static_cast<double>(i) / H +
                                                                  bias_py));
                val += intensity_rs.normal() * cfg.noise;
                img[static_cast<std::size_t>(i) * W + j] = std::clamp(val, 0.0, 1.0);
                mask.at(i, j) = r < R ? 1 : 0;
            }
        vol.slices.push_back(std::move(img));
        vol.masks.push_back(std::move(mask));
    }
    return vol;
}

enum class ModalityMix { CTOnly, MRIOnly, Mixed };

inline std::string to_string(ModalityMix m) {
    switch (m) {
        case ModalityMix::CTOnly: return "CT";
        case ModalityMix::MRIOnly: return "MRI";
        case ModalityMix::Mixed: return "Mixed";
    }
    return "?";
}

/// One client's data source description.
struct ClientSpec {
    std::string name;
    ModalityMix mix = ModalityMix::CTOnly;
    int patients = 0;
    int variant = 0;      // MRI sequence variant of this client's scanner
    int seed_group = -1;  // clients sharing a group >= 0 get the same patient
                          // geometry (same shapes, different sequences)
};

struct ClientDataset {
    int client_id = 0;
    std::string name;
    ModalityMix mix = ModalityMix::CTOnly;
    std::vector<Volume> train, val, test;
};

/// Generates every client's volumes and splits patients 40/20/40
/// (floor(0.4n) train, floor(0.2n) val, remainder test) after a deterministic
/// shuffle. Mixed clients alternate CT and MRI patients, keeping the
/// per-volume modality label.
inline std::vector<ClientDataset> split_clients(const std::vector<ClientSpec>& specs,
                                                const SyntheticConfig& cfg,
                                                std::uint64_t seed) {
    std::vector<ClientDataset> out;
    for (std::size_t ci = 0; ci < specs.size(); ++ci) {
        const auto& spec = specs[ci];
        if (spec.patients < 3)
            throw std::invalid_argument("split_clients: client '" + spec.name + "' has " +
                                        std::to_string(spec.patients) +
                                        " patients; at least 3 are needed for a 40/20/40 split");
        const std::uint64_t source =
            spec.seed_group >= 0 ? 0x6000u + static_cast<std::uint64_t>(spec.seed_group)
                                 : 0x1000u + static_cast<std::uint64_t>(ci);

        std::vector<Volume> vols;
        for (int k = 0; k < spec.patients; ++k) {
            Modality mod = spec.mix == ModalityMix::CTOnly    ? Modality::CT
                           : spec.mix == ModalityMix::MRIOnly ? Modality::MRI
                           : (k % 2 == 0 ? Modality::CT : Modality::MRI);
            const std::uint64_t pseed =
                rng::mix({seed, rng::kVolume, source, static_cast<std::uint64_t>(k)});
            auto v = generate_synthetic_volume(mod, spec.variant, pseed, cfg);
            v.patient_id = static_cast<int>(source) * 1000 + k;
            vols.push_back(std::move(v));
        }

        // deterministic patient-level shuffle (shared across a seed group, so
        // sequence variants of the same anatomy land in the same split)
        std::vector<int> order(vols.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng::Stream shuffle_rs(rng::mix({seed, rng::kShuffle, source}));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rs.uniform_int(i)]);

        const int n = spec.patients;
        const int n_train = static_cast<int>(0.4 * n);
        const int n_val = static_cast<int>(0.2 * n);

        ClientDataset ds;
        ds.client_id = static_cast<int>(ci);
        ds.name = spec.name.empty() ? "client" + std::to_string(ci) : spec.name;
        ds.mix = spec.mix;
        for (int i = 0; i < n; ++i) {
            auto& v = vols[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
            if (i < n_train)
                ds.train.push_back(std::move(v));
            else if (i < n_train + n_val)
                ds.val.push_back(std::move(v));
            else
                ds.test.push_back(std::move(v));
        }
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace fseg::data
