#include "domalign/tcr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "domalign/errors.hpp"

namespace domalign {
namespace {

int reflect(int i, int n) {
    if (n == 1) {
        return 0;
    }
    while (i < 0 || i >= n) {
        i = i < 0 ? -i : 2 * (n - 1) - i;
    }
    return i;
}

const PseudoLabelMap& aligned_labels(const PseudoLabelMap& pl, const DisplacementField& warp, int height, int width,
                                     PseudoLabelMap& storage) {
    if (pl.height != height || pl.width != width) {
        throw WarpMismatchError("perturbed prediction and pseudo-label grids differ in shape");
    }
    if (warp.empty()) {
        return pl;
    }
    if (warp.height != height || warp.width != width) {
        throw WarpMismatchError("displacement field does not match the pseudo-label grid");
    }
    storage = warp_pseudo_labels(pl, warp);
    return storage;
}

void check_thresholds(const PseudoLabelMap& pl, const CategoryThresholds& t, int class_count) {
    if (static_cast<int>(t.threshold.size()) != class_count) {
        throw DimensionMismatchError("threshold count differs from class count");
    }
    for (std::uint8_t y : pl.labels) {
        if (y != kIgnoreLabel && y >= class_count) {
            throw DimensionMismatchError("pseudo-label exceeds class count");
        }
    }
}

}  // namespace

void ProbabilityMap::validate() const {
    if (static_cast<std::size_t>(probs.rows()) != pixel_count() || probs.cols() < 1) {
        throw DimensionMismatchError("probability map shape mismatch");
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if (probs.row(i).minCoeff() < 0.0 || std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
            throw FormatError("row " + std::to_string(i) + " is not a probability distribution");
        }
    }
}

ProbabilityMap softmax_map(const ProbabilityMap& logits) {
    ProbabilityMap out{logits.height, logits.width, Eigen::MatrixXd(logits.probs.rows(), logits.probs.cols())};
    for (Eigen::Index i = 0; i < logits.probs.rows(); ++i) {
        const double m = logits.probs.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.probs.row(i).array() - m).exp().matrix();
        out.probs.row(i) = e / e.sum();
    }
    return out;
}

void ThresholdConfig::validate() const {
    if (!(prob_cap >= 0.0 && prob_cap <= 1.0) || !(percent > 0.0 && percent <= 100.0)) {
        throw ConfigError("threshold config needs P_h in [0,1] and p in (0,100]");
    }
}

PseudoLabelMap pseudo_labels(const ProbabilityMap& pm) {
    PseudoLabelMap out{pm.height, pm.width, {}, {}};
    out.labels.resize(static_cast<std::size_t>(pm.probs.rows()));
    out.confidence.resize(static_cast<std::size_t>(pm.probs.rows()));
    for (Eigen::Index i = 0; i < pm.probs.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < pm.probs.cols(); ++c) {
            if (pm.probs(i, c) > pm.probs(i, best)) {
                best = c;
            }
        }
        out.labels[i] = static_cast<std::uint8_t>(best);
        out.confidence[i] = pm.probs(i, best);
    }
    return out;
}

CategoryThresholds category_thresholds(const PseudoLabelMap& pl, const ThresholdConfig& cfg, int class_count) {
    cfg.validate();
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < pl.labels.size(); ++i) {
        const std::uint8_t y = pl.labels[i];
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= class_count) {
            throw DimensionMismatchError("pseudo-label exceeds class count");
        }
        per_class[y].push_back(pl.confidence[i]);
    }
    CategoryThresholds t;
    t.prob_cap = cfg.prob_cap;
    for (int c = 0; c < class_count; ++c) {
        auto& conf = per_class[c];
        t.pixel_count.push_back(conf.size());
        if (conf.empty()) {
            t.percentile.push_back(cfg.prob_cap);
            t.threshold.push_back(cfg.prob_cap);
            continue;
        }
        const double n = static_cast<double>(conf.size());
        // The slack absorbs products like 0.1 * 10 landing just above an integer.
        auto k = static_cast<std::size_t>(std::ceil(cfg.percent / 100.0 * n - 1e-9));
        k = std::clamp<std::size_t>(k, 1, conf.size());
        std::nth_element(conf.begin(), conf.begin() + static_cast<std::ptrdiff_t>(k - 1), conf.end(),
                         std::greater<>());
        const double ps = conf[k - 1];
        t.percentile.push_back(ps);
        t.threshold.push_back(std::min(cfg.prob_cap, ps));
    }
    return t;
}

std::vector<bool> valid_mask(const PseudoLabelMap& pl, const CategoryThresholds& t) {
    std::vector<bool> mask(pl.labels.size(), false);
    for (std::size_t i = 0; i < pl.labels.size(); ++i) {
        const std::uint8_t y = pl.labels[i];
        mask[i] = y != kIgnoreLabel && y < t.threshold.size() && pl.confidence[i] >= t.threshold[y];
    }
    return mask;
}

PerturbConfig PerturbConfig::jitter_only() {
    PerturbConfig c;
    c.elastic.enabled = false;
    c.blur.enabled = false;
    return c;
}

PerturbConfig PerturbConfig::none() {
    PerturbConfig c;
    c.jitter.enabled = false;
    c.elastic.enabled = false;
    c.blur.enabled = false;
    return c;
}

void PerturbConfig::validate() const {
    const bool ok = jitter.brightness >= 0.0 && jitter.contrast >= 0.0 && jitter.saturation >= 0.0 &&
                    jitter.brightness <= 1.0 && jitter.contrast <= 1.0 && jitter.saturation <= 1.0 &&
                    blur.sigma_min >= 0.0 && blur.sigma_max >= blur.sigma_min && elastic.grid_spacing >= 1 &&
                    elastic.sigma >= 0.0;
    if (!ok) {
        throw ConfigError("invalid perturbation ranges");
    }
}

ImageRGB color_jitter(const ImageRGB& img, double brightness, double contrast, double saturation) {
    ImageRGB out = img;
    for (double& v : out.data) {
        v *= brightness;
    }
    out.clamp();
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const auto px = out.pixel(i);
        mean_gray += 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    mean_gray /= static_cast<double>(out.pixel_count());
    for (double& v : out.data) {
        v = mean_gray + contrast * (v - mean_gray);
    }
    out.clamp();
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        auto px = out.pixel(i);
        const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        for (double& v : px) {
            v = gray + saturation * (v - gray);
        }
    }
    out.clamp();
    return out;
}

ImageRGB gaussian_blur(const ImageRGB& img, double sigma) {
    if (!(sigma > 0.0)) {
        return img;
    }
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) {
        k /= sum;
    }
    ImageRGB tmp(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[i + radius] * img.at(y, reflect(x + i, img.width), c);
                }
                tmp.at(y, x, c) = acc;
            }
        }
    }
    ImageRGB out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[i + radius] * tmp.at(reflect(y + i, img.height), x, c);
                }
                out.at(y, x, c) = acc;
            }
        }
    }
    return out;
}

DisplacementField random_displacement(int height, int width, const ElasticConfig& cfg, Rng& rng) {
    const double s = cfg.grid_spacing;
    const int gh = static_cast<int>(std::ceil((height - 1) / s)) + 1;
    const int gw = static_cast<int>(std::ceil((width - 1) / s)) + 1;
    Plane nx(gh, gw);
    Plane ny(gh, gw);
    for (std::size_t i = 0; i < nx.size(); ++i) {
        nx.values[i] = std::clamp(rng.normal(0.0, cfg.sigma), -s, s);
        ny.values[i] = std::clamp(rng.normal(0.0, cfg.sigma), -s, s);
    }
    DisplacementField f{height, width, Plane(height, width), Plane(height, width)};
    for (int y = 0; y < height; ++y) {
        const double gy = y / s;
        const int y0 = std::min(static_cast<int>(gy), gh - 1);
        const int y1 = std::min(y0 + 1, gh - 1);
        const double ty = gy - y0;
        for (int x = 0; x < width; ++x) {
            const double gx = x / s;
            const int x0 = std::min(static_cast<int>(gx), gw - 1);
            const int x1 = std::min(x0 + 1, gw - 1);
            const double tx = gx - x0;
            auto lerp2 = [&](const Plane& p) {
                const double top = (1 - tx) * p.at(y0, x0) + tx * p.at(y0, x1);
                const double bot = (1 - tx) * p.at(y1, x0) + tx * p.at(y1, x1);
                return (1 - ty) * top + ty * bot;
            };
            f.dx.at(y, x) = lerp2(nx);
            f.dy.at(y, x) = lerp2(ny);
        }
    }
    return f;
}

ImageRGB warp_image(const ImageRGB& img, const DisplacementField& field) {
    if (field.empty()) {
        return img;
    }
    require_same_shape(img.height, img.width, field.height, field.width, "warp_image: field shape mismatch");
    ImageRGB out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double sx = std::clamp(x + field.dx.at(y, x), 0.0, img.width - 1.0);
            const double sy = std::clamp(y + field.dy.at(y, x), 0.0, img.height - 1.0);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const double tx = sx - x0;
            const double ty = sy - y0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c);
                const double bot = (1 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c);
                out.at(y, x, c) = (1 - ty) * top + ty * bot;
            }
        }
    }
    return out;
}

PseudoLabelMap warp_pseudo_labels(const PseudoLabelMap& pl, const DisplacementField& field) {
    if (field.empty()) {
        return pl;
    }
    if (pl.height != field.height || pl.width != field.width) {
        throw WarpMismatchError("displacement field does not match the pseudo-label grid");
    }
    PseudoLabelMap out{pl.height, pl.width, std::vector<std::uint8_t>(pl.labels.size()),
                       std::vector<double>(pl.confidence.size())};
    for (int y = 0; y < pl.height; ++y) {
        for (int x = 0; x < pl.width; ++x) {
            const auto sx = static_cast<int>(
                std::lround(std::clamp(x + field.dx.at(y, x), 0.0, pl.width - 1.0)));
            const auto sy = static_cast<int>(
                std::lround(std::clamp(y + field.dy.at(y, x), 0.0, pl.height - 1.0)));
            const std::size_t dst = static_cast<std::size_t>(y) * pl.width + x;
            const std::size_t src = static_cast<std::size_t>(sy) * pl.width + sx;
            out.labels[dst] = pl.labels[src];
            out.confidence[dst] = pl.confidence[src];
        }
    }
    return out;
}

Perturbation perturb(const ImageRGB& img, const PerturbConfig& cfg, Rng& rng) {
    cfg.validate();
    Perturbation out{img, {}};
    if (cfg.jitter.enabled) {
        const double b = rng.uniform(1.0 - cfg.jitter.brightness, 1.0 + cfg.jitter.brightness);
        const double c = rng.uniform(1.0 - cfg.jitter.contrast, 1.0 + cfg.jitter.contrast);
        const double s = rng.uniform(1.0 - cfg.jitter.saturation, 1.0 + cfg.jitter.saturation);
        out.image = color_jitter(out.image, b, c, s);
    }
    if (cfg.elastic.enabled) {
        out.warp = random_displacement(img.height, img.width, cfg.elastic, rng);
        out.image = warp_image(out.image, out.warp);
    }
    if (cfg.blur.enabled) {
        const double sigma = rng.uniform(cfg.blur.sigma_min, cfg.blur.sigma_max);
        out.image = gaussian_blur(out.image, sigma);
    }
    out.image.clamp();
    return out;
}

ConsistencyLoss consistency_loss(const PseudoLabelMap& pl, const CategoryThresholds& thresholds,
                                 const ProbabilityMap& perturbed_probs, const DisplacementField& warp) {
    PseudoLabelMap storage;
    const PseudoLabelMap& aligned = aligned_labels(pl, warp, perturbed_probs.height, perturbed_probs.width, storage);
    check_thresholds(aligned, thresholds, perturbed_probs.class_count());
    const auto mask = valid_mask(aligned, thresholds);
    ConsistencyLoss out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) {
            continue;
        }
        const double p = perturbed_probs.probs(static_cast<Eigen::Index>(i), aligned.labels[i]);
        out.loss += -std::log(std::max(p, 1e-300));
        ++out.valid_count;
    }
    return out;
}

ConsistencyGrad consistency_loss_grad(const PseudoLabelMap& pl, const CategoryThresholds& thresholds,
                                      const ProbabilityMap& perturbed_logits, const DisplacementField& warp) {
    PseudoLabelMap storage;
    const PseudoLabelMap& aligned =
        aligned_labels(pl, warp, perturbed_logits.height, perturbed_logits.width, storage);
    check_thresholds(aligned, thresholds, perturbed_logits.class_count());
    const auto mask = valid_mask(aligned, thresholds);
    const Eigen::MatrixXd& z = perturbed_logits.probs;
    ConsistencyGrad out;
    out.d_logits = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) {
            continue;
        }
        const auto row = static_cast<Eigen::Index>(i);
        const double m = z.row(row).maxCoeff();
        const Eigen::RowVectorXd e = (z.row(row).array() - m).exp().matrix();
        const double sum = e.sum();
        const int y = aligned.labels[i];
        // -log softmax_y = log(sum) - (z_y - m)
        out.loss += std::log(sum) - (z(row, y) - m);
        out.d_logits.row(row) = e / sum;
        out.d_logits(row, y) -= 1.0;
        ++out.valid_count;
    }
    return out;
}

}  // namespace domalign
