#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "domalign/errors.hpp"

namespace domalign {

/// Single-channel H x W raster, row-major.
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Plane() = default;
    Plane(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    std::size_t size() const { return values.size(); }
    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Interleaved RGB raster with channel values in [0, 1].
struct ImageRGB {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageRGB() = default;
    ImageRGB(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::span<double, 3> pixel(std::size_t i) { return std::span<double, 3>(data.data() + 3 * i, 3); }
    std::span<const double, 3> pixel(std::size_t i) const {
        return std::span<const double, 3>(data.data() + 3 * i, 3);
    }

    Plane channel(int c) const;
    void set_channel(int c, const Plane& p);
    /// Clamp every value into [0, 1].
    void clamp();
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class ids; kIgnoreLabel marks pixels excluded from every loss.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::size_t pixel_count() const { return labels.size(); }
    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    /// Throws if any non-ignore label is >= class_count.
    void validate(int class_count) const;
};

inline void require_same_shape(int h1, int w1, int h2, int w2, const char* what) {
    if (h1 != h2 || w1 != w2) {
        throw DimensionMismatchError(what);
    }
}

}  // namespace domalign
