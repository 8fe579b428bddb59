#pragma once

#include <array>

#include "domalign/image.hpp"

namespace domalign {

/// CIELAB image with all channels stored in [0, 1]:
/// L / 100, and (a + 128) / 255, (b + 128) / 255.
struct ImageLab {
    int height = 0;
    int width = 0;
    Plane L;
    Plane a;
    Plane b;
};

inline constexpr int kHistogramBins = 256;

struct Histogram {
    std::array<double, kHistogramBins> counts{};
    double total = 0.0;

    void add(int bin, double weight = 1.0) {
        counts[bin] += weight;
        total += weight;
    }
    Histogram& operator+=(const Histogram& other);
    /// counts / total.
    std::array<double, kHistogramBins> normalized() const;
    /// Cumulative normalized mass per bin.
    std::array<double, kHistogramBins> cdf() const;
};

/// Bin of a [0, 1] value: min(floor(v * 256), 255).
int unit_bin(double v);
/// Midpoint value of a bin, (b + 0.5) / 256.
constexpr double bin_center(int bin) { return (bin + 0.5) / kHistogramBins; }

/// sRGB (D65) to CIELAB for one pixel. Returns native (L, a, b).
std::array<double, 3> srgb_to_lab_native(double r, double g, double b);
std::array<double, 3> lab_native_to_srgb(double L, double a, double b);

ImageLab rgb_to_lab(const ImageRGB& img);
/// Out-of-gamut results are clamped to [0, 1].
ImageRGB lab_to_rgb(const ImageLab& img);

Histogram channel_histogram(const Plane& channel);

}  // namespace domalign
