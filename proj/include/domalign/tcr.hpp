#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "domalign/image.hpp"
#include "domalign/rng.hpp"

namespace domalign {

/// Per-pixel class distributions (or raw logits when used as a logit map);
/// one row per pixel in row-major pixel order.
struct ProbabilityMap {
    int height = 0;
    int width = 0;
    Eigen::MatrixXd probs;

    int class_count() const { return static_cast<int>(probs.cols()); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    /// Throws unless every row is a distribution within 1e-6.
    void validate() const;
};

/// Row-wise max-subtracted softmax of a logit map.
ProbabilityMap softmax_map(const ProbabilityMap& logits);

struct PseudoLabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;
    std::vector<double> confidence;
};

struct ThresholdConfig {
    double prob_cap = 0.9;   // P_h
    double percent = 10.0;   // p
    void validate() const;
};

struct CategoryThresholds {
    std::vector<double> threshold;   // t_c
    std::vector<double> percentile;  // P_{s,c}; equals prob_cap for empty classes
    std::vector<std::size_t> pixel_count;
    double prob_cap = 0.9;
};

/// Argmax per pixel (ties to the lowest class) and its probability.
PseudoLabelMap pseudo_labels(const ProbabilityMap& pm);

/// t_c = min(P_h, P_{s,c}) where P_{s,c} is the k-th largest class-c
/// confidence with k = ceil(p/100 * n_c), so at least p% of the class is at
/// or above it. Classes without pixels get t_c = P_h.
CategoryThresholds category_thresholds(const PseudoLabelMap& pl, const ThresholdConfig& cfg, int class_count);

/// Pixels whose confidence reaches their class threshold.
std::vector<bool> valid_mask(const PseudoLabelMap& pl, const CategoryThresholds& t);

/// Dense displacement: output pixel p samples the input at p + (dx, dy).
/// An empty field means no geometric change.
struct DisplacementField {
    int height = 0;
    int width = 0;
    Plane dx;
    Plane dy;

    bool empty() const { return height == 0 && width == 0; }
};

struct JitterConfig {
    bool enabled = true;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
};

struct BlurConfig {
    bool enabled = true;
    double sigma_min = 0.0;
    double sigma_max = 1.5;
};

struct ElasticConfig {
    bool enabled = true;
    int grid_spacing = 32;
    double sigma = 4.0;
};

struct PerturbConfig {
    JitterConfig jitter;
    ElasticConfig elastic;
    BlurConfig blur;

    /// Jitter only; used on the source side.
    static PerturbConfig jitter_only();
    static PerturbConfig none();
    void validate() const;
};

struct Perturbation {
    ImageRGB image;
    DisplacementField warp;
};

/// Color jitter, then elastic deformation, then Gaussian blur, each when
/// enabled. Output is clamped to [0, 1].
Perturbation perturb(const ImageRGB& img, const PerturbConfig& cfg, Rng& rng);

ImageRGB color_jitter(const ImageRGB& img, double brightness, double contrast, double saturation);
ImageRGB gaussian_blur(const ImageRGB& img, double sigma);
/// Random displacement on a coarse grid (node offsets clamped to the grid
/// spacing), bilinearly interpolated to every pixel.
DisplacementField random_displacement(int height, int width, const ElasticConfig& cfg, Rng& rng);
/// Bilinear resampling with clamped borders.
ImageRGB warp_image(const ImageRGB& img, const DisplacementField& field);
/// Nearest-neighbor resampling of labels and confidences with the same field.
PseudoLabelMap warp_pseudo_labels(const PseudoLabelMap& pl, const DisplacementField& field);

struct ConsistencyLoss {
    double loss = 0.0;  // sum over valid pixels
    std::size_t valid_count = 0;
};

/// sum_j 1(conf_j >= t_{y_j}) * -ln P~_j[y_j], with the pseudo-label grid
/// warped by `warp` into the perturbed frame first.
ConsistencyLoss consistency_loss(const PseudoLabelMap& pl, const CategoryThresholds& thresholds,
                                 const ProbabilityMap& perturbed_probs, const DisplacementField& warp = {});

struct ConsistencyGrad {
    double loss = 0.0;
    std::size_t valid_count = 0;
    Eigen::MatrixXd d_logits;
};

/// Same loss evaluated from logits; gradient softmax - onehot at valid pixels.
ConsistencyGrad consistency_loss_grad(const PseudoLabelMap& pl, const CategoryThresholds& thresholds,
                                      const ProbabilityMap& perturbed_logits, const DisplacementField& warp = {});

}  // namespace domalign
