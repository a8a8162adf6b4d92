#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fseg/fed/federation.hpp"
#include "fseg/nn/param.hpp"

namespace fseg::harness {

// Raw little-endian values on disk; big-endian hosts would need byte swaps.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

constexpr char kMagic[4] = {'F', 'S', 'E', 'G'};
constexpr std::uint16_t kVersion = 1;

template <class S>
constexpr std::uint8_t dtype_code() {
    if constexpr (sizeof(S) == 4)
        return 1;
    else
        return 2;
}

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

/// Layout: "FSEG" magic, version u16, entry count u32, then per entry:
/// name (u16 length + UTF-8 bytes), tag (kind, mod, role as one byte each),
/// dtype code u8 (1 = float32, 2 = float64), rank u8, dims u32 each, then the
/// raw little-endian values.
template <class S>
void save_checkpoint(const nn::ParamSet<S>& params, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
    os.write(detail::kMagic, 4);
    detail::put<std::uint16_t>(os, detail::kVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params) {
        detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(e.tag.kind));
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(e.tag.modality));
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(e.tag.role));
        detail::put<std::uint8_t>(os, detail::dtype_code<S>());
        const auto& shape = e.tensor.shape();
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
        for (int d : shape) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        const auto& v = e.tensor.values();
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(sizeof(S) * v.size()));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

template <class S>
nn::ParamSet<S> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: '" + path.string() + "' is not a checkpoint file");
    const auto version = detail::get<std::uint16_t>(is);
    if (version != detail::kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));
    const auto count = detail::get<std::uint32_t>(is);
    nn::ParamSet<S> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::get<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("checkpoint: truncated file");
        nn::ParamTag tag;
        tag.kind = static_cast<nn::ParamTag::Kind>(detail::get<std::uint8_t>(is));
        tag.modality = static_cast<nn::ParamTag::Mod>(detail::get<std::uint8_t>(is));
        tag.role = static_cast<nn::ParamTag::Role>(detail::get<std::uint8_t>(is));
        const auto dtype = detail::get<std::uint8_t>(is);
        if (dtype != detail::dtype_code<S>())
            throw std::runtime_error("checkpoint: entry '" + name + "' has dtype code " +
                                     std::to_string(dtype) + ", expected " +
                                     std::to_string(detail::dtype_code<S>()));
        const auto rank = detail::get<std::uint8_t>(is);
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(detail::get<std::uint32_t>(is)));
            numel *= shape.back();
        }
        auto t = Tensor<S>::zeros(shape);
        is.read(reinterpret_cast<char*>(t.values().data()),
                static_cast<std::streamsize>(sizeof(S) * numel));
        if (!is) throw std::runtime_error("checkpoint: truncated file");
        out.add(name, t, tag);
    }
    return out;
}

/// Packs a FedNorm server into one parameter set: shared tensors keep their
/// names, the CT and MRI normalization sets get a modality prefix and tag.
template <class S>
nn::ParamSet<S> fednorm_bundle(const fed::ServerState<S>& server) {
    nn::ParamSet<S> out;
    for (const auto& e : server.global_params) out.add(e.name, e.tensor, e.tag);
    for (const auto& e : server.ct_norm) {
        auto tag = e.tag;
        tag.modality = nn::ParamTag::Mod::CT;
        out.add("ct::" + e.name, e.tensor, tag);
    }
    for (const auto& e : server.mri_norm) {
        auto tag = e.tag;
        tag.modality = nn::ParamTag::Mod::MRI;
        out.add("mri::" + e.name, e.tensor, tag);
    }
    return out;
}

template <class S>
struct FedNormSets {
    nn::ParamSet<S> global, ct, mri;
};

template <class S>
FedNormSets<S> fednorm_unbundle(const nn::ParamSet<S>& bundle) {
    FedNormSets<S> out;
    for (const auto& e : bundle) {
        if (e.name.rfind("ct::", 0) == 0) {
            auto tag = e.tag;
            tag.modality = nn::ParamTag::Mod::Shared;
            out.ct.add(e.name.substr(4), e.tensor, tag);
        } else if (e.name.rfind("mri::", 0) == 0) {
            auto tag = e.tag;
            tag.modality = nn::ParamTag::Mod::Shared;
            out.mri.add(e.name.substr(5), e.tensor, tag);
        } else {
            out.global.add(e.name, e.tensor, e.tag);
        }
    }
    return out;
}

}  // namespace fseg::harness
