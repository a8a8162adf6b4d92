#pragma once

#include "fseg/metrics/mask.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace fseg::metrics {

struct PatientScore {
    int patient_id = 0;
    int client_id = 0;
    double dice = 0.0;
};

/// 2|A∩B| / (|A| + |B|); two empty masks score 1 by convention.
inline double dice_coefficient(const Mask& pred, const Mask& gt) {
    if (pred.H != gt.H || pred.W != gt.W)
        throw std::invalid_argument("dice_coefficient: mask sizes differ");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool pa = pred.v[i] != 0, pb = gt.v[i] != 0;
        inter += pa && pb;
        a += pa;
        b += pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Stacks all slices of one volume into a single voxel set and computes one
/// Dice over it.
inline double dice_per_patient(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("dice_per_patient: " + std::to_string(pred.size()) +
                                    " predicted slices vs " + std::to_string(gt.size()) +
                                    " ground-truth slices");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].H != gt[s].H || pred[s].W != gt[s].W)
            throw std::invalid_argument("dice_per_patient: slice " + std::to_string(s) +
                                        " sizes differ");
        for (std::size_t i = 0; i < pred[s].v.size(); ++i) {
            const bool pa = pred[s].v[i] != 0, pb = gt[s].v[i] != 0;
            inter += pa && pb;
            a += pa;
            b += pb;
        }
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Relative improvement of x2 over x1 in percent: (x2 - x1) / x1 * 100.
inline double relative_improvement(double x1, double x2) {
    if (x1 <= 0.0)
        throw std::domain_error("relative_improvement: baseline must be positive, got " +
                                std::to_string(x1));
    return (x2 - x1) / x1 * 100.0;
}

}  // namespace fseg::metrics
