#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "domalign/image.hpp"
#include "domalign/rng.hpp"

namespace domalign {

/// Generative recipe for a pair of synthetic domains. Both domains render the
/// same kind of scene (Voronoi regions, one class per region, smooth shading);
/// the source additionally passes through a photometric and texture shift.
struct SyntheticDomainSpec {
    int class_count = 4;
    int height = 32;
    int width = 32;
    int regions_per_image = 6;
    double region_color_jitter = 0.05;
    double shading = 0.2;
    double pixel_noise = 0.015;

    /// Source photometric shift: v -> v^gamma, then an additive RGB offset.
    double source_gamma = 0.5;
    std::array<double, 3> chroma_shift{0.0, 0.0, 0.0};
    /// Source texture shift: i.i.d. Gaussian noise of this sigma per pixel.
    double texture_noise = 0.0;

    int source_count = 24;
    int target_count = 24;
    int eval_count = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticDomains {
    std::vector<ImageRGB> source_images;
    std::vector<LabelMap> source_labels;
    /// Unlabeled target training pool.
    std::vector<ImageRGB> target_images;
    /// Held-out target pool; its labels are for evaluation only.
    std::vector<ImageRGB> eval_images;
    std::vector<LabelMap> eval_labels;
};

/// Base (target-domain) color of a class.
std::array<double, 3> class_color(int c);

struct Scene {
    ImageRGB image;
    LabelMap labels;
};

Scene render_scene(const SyntheticDomainSpec& spec, Rng& rng);
/// Photometric then texture shift of the source domain.
ImageRGB apply_source_shift(const ImageRGB& img, const SyntheticDomainSpec& spec, Rng& rng);

SyntheticDomains generate_synthetic_domains(const SyntheticDomainSpec& spec);

}  // namespace domalign
