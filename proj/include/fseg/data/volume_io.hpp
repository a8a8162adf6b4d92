#pragma once

#include "fseg/data/volume.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fseg::data {

/// File layout: u32 little-endian header length, JSON header
/// {id, modality, variant, shape: [slices, H, W], seed}, then the slice data
/// as little-endian float32 and the masks as uint8, slice-major.
inline void save_volume(const Volume& v, const std::filesystem::path& path) {
    nlohmann::ordered_json header = {
        {"id", v.patient_id},
        {"modality", to_string(v.modality)},
        {"variant", v.variant},
        {"shape", {static_cast<int>(v.slices.size()), v.H, v.W}},
        {"seed", v.seed},
    };
    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_volume: cannot open " + path.string());
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& sl : v.slices) {
        std::vector<float> f32(sl.begin(), sl.end());
        f.write(reinterpret_cast<const char*>(f32.data()),
                static_cast<std::streamsize>(f32.size() * 4));
    }
    for (const auto& m : v.masks)
        f.write(reinterpret_cast<const char*>(m.v.data()),
                static_cast<std::streamsize>(m.v.size()));
    if (!f) throw std::runtime_error("save_volume: write failed for " + path.string());
}

inline Volume load_volume(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_volume: cannot open " + path.string());
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    if (!f) throw std::runtime_error("load_volume: truncated header length");
    std::string hs(len, '\0');
    f.read(hs.data(), len);
    if (!f) throw std::runtime_error("load_volume: truncated header");
    const auto header = nlohmann::json::parse(hs);

    Volume v;
    v.patient_id = header.at("id").get<int>();
    v.modality = modality_from_string(header.at("modality").get<std::string>());
    v.variant = header.at("variant").get<int>();
    const auto shape = header.at("shape");
    const int n = shape.at(0).get<int>();
    v.H = shape.at(1).get<int>();
    v.W = shape.at(2).get<int>();
    v.seed = header.at("seed").get<std::uint64_t>();

    const std::size_t plane = static_cast<std::size_t>(v.H) * v.W;
    for (int s = 0; s < n; ++s) {
        std::vector<float> f32(plane);
        f.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(plane * 4));
        if (!f) throw std::runtime_error("load_volume: truncated slice data");
        v.slices.emplace_back(f32.begin(), f32.end());
    }
    for (int s = 0; s < n; ++s) {
        metrics::Mask m(v.H, v.W);
        f.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(plane));
        if (!f) throw std::runtime_error("load_volume: truncated mask data");
        v.masks.push_back(std::move(m));
    }
    return v;
}

}  // namespace fseg::data
