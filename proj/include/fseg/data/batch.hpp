#pragma once

#include <vector>

#include "fseg/data/volume.hpp"
#include "fseg/tensor/tensor.hpp"

namespace fseg::data {

/// A view onto one slice of a volume; the volume must outlive the sample.
struct SliceSample {
    const Volume* vol = nullptr;
    int slice = 0;

    const std::vector<double>& pixels() const { return vol->slices[slice]; }
    const metrics::Mask& mask() const { return vol->masks[slice]; }
    Modality modality() const { return vol->modality; }
};

inline std::vector<SliceSample> flatten_slices(const std::vector<Volume>& vols) {
    std::vector<SliceSample> out;
    for (const auto& v : vols)
        for (int s = 0; s < static_cast<int>(v.slices.size()); ++s)
            out.push_back({&v, s});
    return out;
}

/// Stacks the indexed slices into a [n,1,H,W] input tensor.
template <class S>
Tensor<S> batch_inputs(const std::vector<SliceSample>& samples,
                       const std::vector<int>& idx) {
    if (idx.empty()) throw std::invalid_argument("batch_inputs: empty batch");
    const Volume& first = *samples[idx[0]].vol;
    const int H = first.H, W = first.W;
    auto x = Tensor<S>::zeros({static_cast<int>(idx.size()), 1, H, W});
    auto& v = x.values();
    std::int64_t pos = 0;
    for (int i : idx) {
        const auto& px = samples[i].pixels();
        for (double p : px) v[pos++] = static_cast<S>(p);
    }
    return x;
}

/// Stacks the indexed slices' ground-truth masks into a [n,1,H,W] target.
template <class S>
Tensor<S> batch_targets(const std::vector<SliceSample>& samples,
                        const std::vector<int>& idx) {
    if (idx.empty()) throw std::invalid_argument("batch_targets: empty batch");
    const Volume& first = *samples[idx[0]].vol;
    const int H = first.H, W = first.W;
    auto y = Tensor<S>::zeros({static_cast<int>(idx.size()), 1, H, W});
    auto& v = y.values();
    std::int64_t pos = 0;
    for (int i : idx)
        for (auto b : samples[i].mask().v) v[pos++] = b ? S(1) : S(0);
    return y;
}

inline std::vector<Modality> batch_modalities(const std::vector<SliceSample>& samples,
                                              const std::vector<int>& idx) {
    std::vector<Modality> mods;
    mods.reserve(idx.size());
    for (int i : idx) mods.push_back(samples[i].modality());
    return mods;
}

/// Whole volume as one [n_slices,1,H,W] tensor (evaluation batches).
template <class S>
Tensor<S> volume_inputs(const Volume& vol) {
    const int n = static_cast<int>(vol.slices.size());
    auto x = Tensor<S>::zeros({n, 1, vol.H, vol.W});
    auto& v = x.values();
    std::int64_t pos = 0;
    for (const auto& sl : vol.slices)
        for (double p : sl) v[pos++] = static_cast<S>(p);
    return x;
}

}  // namespace fseg::data
