#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patrec/core.hpp"
#include "patrec/tensor_file.hpp"

namespace patrec {

/// Map values affinely from [lo, hi] to [0, 65535] with clamping.
inline std::vector<std::uint16_t> window_pixels(const Image& image, double lo, double hi)
{
    require(lo < hi, "export_pgm: window requires lo < hi");
    std::vector<std::uint16_t> out;
    out.reserve(image.grid().pixel_count());
    const int d = image.size();
    // top row of the file is the largest y
    for (int iy = d - 1; iy >= 0; --iy) {
        for (int ix = 0; ix < d; ++ix) {
            const double s = (image.at(iy, ix) - lo) / (hi - lo);
            const double c = std::clamp(s, 0.0, 1.0) * 65535.0;
            out.push_back(static_cast<std::uint16_t>(std::lround(c)));
        }
    }
    return out;
}

/// Binary 16-bit PGM (P5, maxval 65535, samples most-significant byte first).
inline void export_pgm(const Image& image, const std::filesystem::path& path, double lo, double hi)
{
    const auto px = window_pixels(image, lo, hi);
    const int d = image.size();
    std::string bytes = "P5\n" + std::to_string(d) + " " + std::to_string(d) + "\n65535\n";
    bytes.reserve(bytes.size() + 2 * px.size());
    for (auto v : px) {
        bytes.push_back(static_cast<char>(v >> 8));
        bytes.push_back(static_cast<char>(v & 0xFF));
    }
    detail::write_file(path, bytes);
}

}  // namespace patrec
