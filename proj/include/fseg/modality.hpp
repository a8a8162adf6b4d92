#pragma once

#include <stdexcept>
#include <string>

namespace fseg {

/// Imaging modality of a volume / slice.
enum class Modality { CT, MRI };

inline std::string to_string(Modality m) { return m == Modality::CT ? "CT" : "MRI"; }

inline Modality modality_from_string(const std::string& s) {
    if (s == "CT") return Modality::CT;
    if (s == "MRI") return Modality::MRI;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

}  // namespace fseg
