#include "domalign/gtexa.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "domalign/errors.hpp"
#include "domalign/parallel.hpp"

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

Plane grayscale_255(const ImageRGB& img) {
    Plane g(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const auto px = img.pixel(i);
        g.values[i] = 255.0 * (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    return g;
}

}  // namespace

void BilateralParams::validate() const {
    if (d < 1 || d % 2 == 0 || !(sigma_c > 0.0) || !(sigma_s > 0.0)) {
        throw ConfigError("bilateral parameters need odd d >= 1 and positive sigmas");
    }
}

ImageRGB bilateral_filter(const ImageRGB& img, const BilateralParams& p) {
    p.validate();
    if (p.is_identity()) {
        return img;
    }
    const int radius = p.d / 2;
    const Plane gray = grayscale_255(img);
    std::vector<double> spatial;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            spatial.push_back(std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma_s * p.sigma_s)));
        }
    }
    const double range_scale = -1.0 / (2.0 * p.sigma_c * p.sigma_c);
    ImageRGB out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double center = gray.at(y, x);
            double acc[3] = {0.0, 0.0, 0.0};
            double wsum = 0.0;
            std::size_t k = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = reflect(y + dy, img.height);
                for (int dx = -radius; dx <= radius; ++dx, ++k) {
                    const int xx = reflect(x + dx, img.width);
                    const double diff = gray.at(yy, xx) - center;
                    const double w = spatial[k] * std::exp(diff * diff * range_scale);
                    wsum += w;
                    for (int c = 0; c < 3; ++c) {
                        acc[c] += w * img.at(yy, xx, c);
                    }
                }
            }
            // The center tap has weight 1, so wsum >= 1.
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = acc[c] / wsum;
            }
        }
    }
    return out;
}

int laplacian_bin(double response) {
    const double r = std::clamp(response, -kLaplacianRange, kLaplacianRange);
    const int bin = static_cast<int>(std::floor((r + kLaplacianRange) / (2.0 * kLaplacianRange) * kHistogramBins));
    return std::clamp(bin, 0, kHistogramBins - 1);
}

Histogram highfreq_histogram(const ImageRGB& img) {
    if (img.height < 3 || img.width < 3) {
        throw ImageTooSmallError("high-frequency histogram needs at least 3x3 pixels");
    }
    const Plane g = grayscale_255(img);
    Histogram h;
    for (int y = 1; y + 1 < img.height; ++y) {
        for (int x = 1; x + 1 < img.width; ++x) {
            const double lap = g.at(y - 1, x) + g.at(y + 1, x) + g.at(y, x - 1) + g.at(y, x + 1) - 4.0 * g.at(y, x);
            h.add(laplacian_bin(lap));
        }
    }
    return h;
}

double kl_divergence(const Histogram& p, const Histogram& q) {
    if (!(p.total > 0.0) || !(q.total > 0.0)) {
        throw DegenerateDataError("KL divergence of an empty histogram");
    }
    constexpr double kEps = 1e-8;
    const double norm = 1.0 + kHistogramBins * kEps;
    double kl = 0.0;
    for (int i = 0; i < kHistogramBins; ++i) {
        const double pi = (p.counts[i] / p.total + kEps) / norm;
        const double qi = (q.counts[i] / q.total + kEps) / norm;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

std::vector<BilateralParams> default_filter_grid() {
    std::vector<BilateralParams> grid{BilateralParams::identity()};
    for (int d : {3, 5, 7}) {
        for (double sc : {10.0, 25.0, 50.0, 75.0, 100.0}) {
            for (double ss : {10.0, 25.0, 50.0}) {
                grid.push_back({d, sc, ss});
            }
        }
    }
    return grid;
}

TextureAlignReport optimize_filter_params(const std::vector<ImageRGB>& src_imgs,
                                          const std::vector<ImageRGB>& ref_imgs,
                                          const std::vector<BilateralParams>& grid, int jobs) {
    if (src_imgs.empty() || ref_imgs.empty() || grid.empty()) {
        throw ConfigError("texture optimization needs images on both sides and a nonempty grid");
    }
    for (const auto& p : grid) {
        p.validate();
    }
    Histogram ref_hist;
    for (const auto& img : ref_imgs) {
        ref_hist += highfreq_histogram(img);
    }
    auto corpus_kl = [&](const BilateralParams& p) {
        Histogram h;
        for (const auto& img : src_imgs) {
            h += p.is_identity() ? highfreq_histogram(img) : highfreq_histogram(bilateral_filter(img, p));
        }
        return kl_divergence(h, ref_hist);
    };

    // Slot 0 is the unfiltered corpus; grid point i lands in slot i + 1.
    std::vector<double> kl(grid.size() + 1);
    parallel_for(kl.size(), jobs, [&](std::size_t i) {
        if (i == 0 || !grid[i - 1].is_identity()) {
            kl[i] = corpus_kl(i == 0 ? BilateralParams::identity() : grid[i - 1]);
        }
    });

    TextureAlignReport report;
    report.kl_before = kl[0];
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const BilateralParams& p = grid[i];
        const double v = p.is_identity() ? report.kl_before : kl[i + 1];
        report.table.push_back({p, v});
        const bool better = i == 0 || v < report.kl_after || (v == report.kl_after && p.key() < report.params.key());
        if (better) {
            report.params = p;
            report.kl_after = v;
        }
    }
    report.grid_evaluated = static_cast<int>(grid.size());
    return report;
}

ImageRGB maybe_texture_align(const ImageRGB& img, const BilateralParams& p, double prob, Rng& rng) {
    if (!(prob >= 0.0 && prob <= 1.0)) {
        throw ConfigError("texture alignment probability must be in [0, 1]");
    }
    const double u = rng.uniform();
    return u < prob ? bilateral_filter(img, p) : img;
}

}  // namespace domalign
