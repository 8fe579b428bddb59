#pragma once

#include <tuple>
#include <vector>

#include "domalign/colorspace.hpp"
#include "domalign/image.hpp"
#include "domalign/rng.hpp"

namespace domalign {

struct BilateralParams {
    /// Neighborhood diameter; odd. d = 1 is the identity filter.
    int d = 5;
    /// Range sigma on the 0-255 intensity scale.
    double sigma_c = 75.0;
    /// Spatial sigma in pixels.
    double sigma_s = 25.0;

    static BilateralParams identity() { return {1, 1.0, 1.0}; }
    bool is_identity() const { return d == 1; }
    void validate() const;

    auto key() const { return std::tuple(d, sigma_s, sigma_c); }
    bool operator==(const BilateralParams&) const = default;
};

/// Bilateral filter applied to each RGB channel with a range weight on the
/// grayscale intensity difference. Borders are reflected (x[-1] = x[1]).
ImageRGB bilateral_filter(const ImageRGB& img, const BilateralParams& p);

/// Laplacian response range: responses are clamped to +-255 and binned into
/// 256 uniform bins.
inline constexpr double kLaplacianRange = 255.0;
int laplacian_bin(double response);

/// Histogram of 3x3 Laplacian responses of the grayscale image on the 0-255
/// scale, interior pixels only.
Histogram highfreq_histogram(const ImageRGB& img);

/// KL(p || q) after adding 1e-8 to every normalized bin and renormalizing.
double kl_divergence(const Histogram& p, const Histogram& q);

struct GridEvaluation {
    BilateralParams params;
    double kl = 0.0;
};

struct TextureAlignReport {
    BilateralParams params;
    double kl_before = 0.0;
    double kl_after = 0.0;
    int grid_evaluated = 0;
    /// KL for every grid point, in grid order.
    std::vector<GridEvaluation> table;
};

/// d in {3,5,7} x sigma_c in {10,25,50,75,100} x sigma_s in {10,25,50},
/// preceded by the identity entry.
std::vector<BilateralParams> default_filter_grid();

/// Grid argmin of KL(sum_s h(H^s) || sum_u h(H^u)) over filtered sources.
/// Ties go to the lexicographically smallest (d, sigma_s, sigma_c).
TextureAlignReport optimize_filter_params(const std::vector<ImageRGB>& src_imgs,
                                          const std::vector<ImageRGB>& ref_imgs,
                                          const std::vector<BilateralParams>& grid, int jobs = 1);

/// Filters with probability `prob`; always consumes exactly one uniform draw.
ImageRGB maybe_texture_align(const ImageRGB& img, const BilateralParams& p, double prob, Rng& rng);

}  // namespace domalign
