#include "domalign/colorspace.hpp"

#include <algorithm>
#include <cmath>

namespace domalign {
namespace {

// Linear sRGB -> XYZ (D65). The white point is the image of (1, 1, 1) so
// neutral RGB maps to exactly zero chroma.
constexpr double kM[3][3] = {{0.412453, 0.357580, 0.180423},
                             {0.212671, 0.715160, 0.072169},
                             {0.019334, 0.119193, 0.950227}};
constexpr double kWhiteX = kM[0][0] + kM[0][1] + kM[0][2];
constexpr double kWhiteY = kM[1][0] + kM[1][1] + kM[1][2];
constexpr double kWhiteZ = kM[2][0] + kM[2][1] + kM[2][2];

// Inverse of kM.
constexpr double kMinv[3][3] = {{3.240479, -1.537150, -0.498535},
                                {-0.969256, 1.875992, 0.041556},
                                {0.055648, -0.204043, 1.057311}};

constexpr double kEpsilon = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double f) {
    const double f3 = f * f * f;
    return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}

}  // namespace

Histogram& Histogram::operator+=(const Histogram& other) {
    for (int i = 0; i < kHistogramBins; ++i) {
        counts[i] += other.counts[i];
    }
    total += other.total;
    return *this;
}

std::array<double, kHistogramBins> Histogram::normalized() const {
    std::array<double, kHistogramBins> p{};
    for (int i = 0; i < kHistogramBins; ++i) {
        p[i] = counts[i] / total;
    }
    return p;
}

std::array<double, kHistogramBins> Histogram::cdf() const {
    std::array<double, kHistogramBins> c{};
    double acc = 0.0;
    for (int i = 0; i < kHistogramBins; ++i) {
        acc += counts[i];
        c[i] = acc / total;
    }
    return c;
}

int unit_bin(double v) {
    if (!(v > 0.0)) {
        return 0;
    }
    return std::min(static_cast<int>(std::floor(v * kHistogramBins)), kHistogramBins - 1);
}

std::array<double, 3> srgb_to_lab_native(double r, double g, double b) {
    const double lr = srgb_to_linear(r);
    const double lg = srgb_to_linear(g);
    const double lb = srgb_to_linear(b);
    const double x = (kM[0][0] * lr + kM[0][1] * lg + kM[0][2] * lb) / kWhiteX;
    const double y = (kM[1][0] * lr + kM[1][1] * lg + kM[1][2] * lb) / kWhiteY;
    const double z = (kM[2][0] * lr + kM[2][1] * lg + kM[2][2] * lb) / kWhiteZ;
    const double fx = lab_f(x);
    const double fy = lab_f(y);
    const double fz = lab_f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> lab_native_to_srgb(double L, double a, double b) {
    const double fy = (L + 16.0) / 116.0;
    const double fx = fy + a / 500.0;
    const double fz = fy - b / 200.0;
    const double x = lab_f_inv(fx) * kWhiteX;
    const double y = (L > kKappa * kEpsilon ? fy * fy * fy : L / kKappa) * kWhiteY;
    const double z = lab_f_inv(fz) * kWhiteZ;
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
        const double lin = kMinv[c][0] * x + kMinv[c][1] * y + kMinv[c][2] * z;
        rgb[c] = std::clamp(linear_to_srgb(std::max(lin, 0.0)), 0.0, 1.0);
    }
    return rgb;
}

ImageLab rgb_to_lab(const ImageRGB& img) {
    ImageLab out{img.height, img.width, Plane(img.height, img.width), Plane(img.height, img.width),
                 Plane(img.height, img.width)};
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const auto px = img.pixel(i);
        const auto lab = srgb_to_lab_native(px[0], px[1], px[2]);
        out.L.values[i] = std::clamp(lab[0] / 100.0, 0.0, 1.0);
        out.a.values[i] = std::clamp((lab[1] + 128.0) / 255.0, 0.0, 1.0);
        out.b.values[i] = std::clamp((lab[2] + 128.0) / 255.0, 0.0, 1.0);
    }
    return out;
}

ImageRGB lab_to_rgb(const ImageLab& img) {
    ImageRGB out(img.height, img.width);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const auto rgb = lab_native_to_srgb(img.L.values[i] * 100.0, img.a.values[i] * 255.0 - 128.0,
                                            img.b.values[i] * 255.0 - 128.0);
        auto px = out.pixel(i);
        std::copy(rgb.begin(), rgb.end(), px.begin());
    }
    return out;
}

Histogram channel_histogram(const Plane& channel) {
    Histogram h;
    for (double v : channel.values) {
        h.add(unit_bin(v));
    }
    return h;
}

}  // namespace domalign
