#pragma once

#include <cstdint>
#include <vector>

namespace fseg::metrics {

/// Binary segmentation mask, row-major H x W.
struct Mask {
    int H = 0;
    int W = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int h, int w) : H(h), W(w), v(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int i, int j) { return v[static_cast<std::size_t>(i) * W + j]; }
    std::uint8_t at(int i, int j) const { return v[static_cast<std::size_t>(i) * W + j]; }
    std::int64_t area() const {
        std::int64_t n = 0;
        for (auto b : v) n += b != 0;
        return n;
    }
};

}  // namespace fseg::metrics
