#pragma once

#include "domalign/colorspace.hpp"
#include "domalign/image.hpp"

namespace domalign {

struct GammaSolveConfig {
    double beta = 0.01;
    int max_iters = 100;
    /// Damping applied to each Gauss-Newton step before line search.
    double step_size = 1.0;
    double tolerance = 1e-10;
    double gamma_low = 0.2;
    double gamma_high = 5.0;

    void validate() const;
};

struct GammaResult {
    double gamma = 1.0;
    double objective = 0.0;
    int iterations = 0;
    /// Objective after each accepted iterate, starting at gamma = 1.
    std::vector<double> objective_trace;
    bool used_fallback = false;
};

/// Remaps `channel` so its histogram follows `reference`: a value in source
/// bin b becomes the center of the smallest bin k with refCDF[k] >= srcCDF[b].
Plane match_histogram(const Plane& channel, const Histogram& reference);

/// Lightness mean-matching objective on normalized histograms:
/// (sum_b p_s(b) L_b^g - sum_b p_u(b) L_b)^2 + beta (g - 1)^2.
double gamma_objective(const Histogram& src_L, const Histogram& ref_L, double beta, double gamma);

GammaResult solve_gamma(const Histogram& src_L, const Histogram& ref_L, const GammaSolveConfig& cfg = {});

/// Pixel-wise L^gamma.
Plane apply_gamma(const Plane& channel, double gamma);

struct PhotometricAlignment {
    ImageRGB image;
    GammaResult gamma;
};

/// Gamma-corrects lightness towards the reference mean and histogram-matches
/// the a/b chroma channels, working in Lab.
PhotometricAlignment align_photometric(const ImageRGB& src, const ImageRGB& ref, const GammaSolveConfig& cfg = {});

}  // namespace domalign
