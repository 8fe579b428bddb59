#include "domalign/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "domalign/errors.hpp"

namespace domalign {
namespace {

// Stream ids keep the three pools independent of each other's sizes.
constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kEvalStream = 3;

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.42, 0.42, 0.46},  // road
    {0.24, 0.48, 0.20},  // vegetation
    {0.55, 0.70, 0.92},  // sky
    {0.62, 0.32, 0.26},  // building
    {0.85, 0.74, 0.22},  // sign
    {0.46, 0.26, 0.56},  // person
    {0.20, 0.24, 0.40},  // car
    {0.80, 0.55, 0.65},  // sidewalk
}};

}  // namespace

void SyntheticDomainSpec::validate() const {
    if (class_count < 2 || class_count > static_cast<int>(kPalette.size()) || height < 3 || width < 3 ||
        regions_per_image < 1 || source_gamma <= 0.0 || texture_noise < 0.0 || pixel_noise < 0.0 ||
        source_count < 1 || target_count < 1 || eval_count < 1) {
        throw ConfigError("invalid synthetic domain spec");
    }
}

std::array<double, 3> class_color(int c) { return kPalette.at(static_cast<std::size_t>(c)); }

Scene render_scene(const SyntheticDomainSpec& spec, Rng& rng) {
    struct Site {
        double x, y;
        int cls;
        std::array<double, 3> color;
    };
    std::vector<Site> sites;
    for (int i = 0; i < spec.regions_per_image; ++i) {
        Site s{rng.uniform(0.0, spec.width), rng.uniform(0.0, spec.height),
               static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.class_count))), {}};
        const auto base = class_color(s.cls);
        for (int c = 0; c < 3; ++c) {
            s.color[c] = base[c] + rng.normal(0.0, spec.region_color_jitter);
        }
        sites.push_back(s);
    }
    const double ax = rng.uniform(-1.0, 1.0);
    const double ay = rng.uniform(-1.0, 1.0);

    Scene scene{ImageRGB(spec.height, spec.width), LabelMap(spec.height, spec.width)};
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sites.size(); ++k) {
                const double dx = x + 0.5 - sites[k].x;
                const double dy = y + 0.5 - sites[k].y;
                const double d = dx * dx + dy * dy;
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            const double shade = 1.0 + spec.shading * (ax * ((x + 0.5) / spec.width - 0.5) +
                                                       ay * ((y + 0.5) / spec.height - 0.5));
            for (int c = 0; c < 3; ++c) {
                scene.image.at(y, x, c) = sites[best].color[c] * shade + rng.normal(0.0, spec.pixel_noise);
            }
            scene.labels.at(y, x) = static_cast<std::uint8_t>(sites[best].cls);
        }
    }
    scene.image.clamp();
    return scene;
}

ImageRGB apply_source_shift(const ImageRGB& img, const SyntheticDomainSpec& spec, Rng& rng) {
    ImageRGB out = img;
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        auto px = out.pixel(i);
        for (int c = 0; c < 3; ++c) {
            px[c] = std::pow(std::clamp(px[c], 0.0, 1.0), spec.source_gamma) + spec.chroma_shift[c];
        }
    }
    out.clamp();
    if (spec.texture_noise > 0.0) {
        for (std::size_t i = 0; i < out.pixel_count(); ++i) {
            auto px = out.pixel(i);
            for (int c = 0; c < 3; ++c) {
                px[c] += rng.normal(0.0, spec.texture_noise);
            }
        }
        out.clamp();
    }
    return out;
}

SyntheticDomains generate_synthetic_domains(const SyntheticDomainSpec& spec) {
    spec.validate();
    SyntheticDomains d;
    const std::uint64_t base_src = derive_seed(spec.seed, kSourceStream);
    const std::uint64_t base_tgt = derive_seed(spec.seed, kTargetStream);
    const std::uint64_t base_eval = derive_seed(spec.seed, kEvalStream);
    for (int i = 0; i < spec.source_count; ++i) {
        Rng rng(derive_seed(base_src, static_cast<std::uint64_t>(i)));
        Scene s = render_scene(spec, rng);
        d.source_images.push_back(apply_source_shift(s.image, spec, rng));
        d.source_labels.push_back(std::move(s.labels));
    }
    for (int i = 0; i < spec.target_count; ++i) {
        Rng rng(derive_seed(base_tgt, static_cast<std::uint64_t>(i)));
        d.target_images.push_back(render_scene(spec, rng).image);
    }
    for (int i = 0; i < spec.eval_count; ++i) {
        Rng rng(derive_seed(base_eval, static_cast<std::uint64_t>(i)));
        Scene s = render_scene(spec, rng);
        d.eval_images.push_back(std::move(s.image));
        d.eval_labels.push_back(std::move(s.labels));
    }
    return d;
}

}  // namespace domalign
