#include "domalign/gpa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace domalign {
namespace {

// Moments of the normalized source histogram under L^gamma.
struct PowerMoments {
    double s0 = 0.0;  // sum p L^g
    double s1 = 0.0;  // sum p L^g ln L
    double s2 = 0.0;  // sum p L^g ln^2 L
};

class GammaProblem {
public:
    GammaProblem(const Histogram& src, const Histogram& ref, double beta) : beta_(beta) {
        const auto ps = src.normalized();
        const auto pu = ref.normalized();
        for (int b = 0; b < kHistogramBins; ++b) {
            target_mean_ += pu[b] * bin_center(b);
            if (ps[b] > 0.0) {
                mass_.push_back(ps[b]);
                l_.push_back(bin_center(b));
                log_l_.push_back(std::log(bin_center(b)));
            }
        }
    }

    PowerMoments moments(double gamma) const {
        PowerMoments m;
        for (std::size_t i = 0; i < mass_.size(); ++i) {
            const double w = mass_[i] * (gamma == 1.0 ? l_[i] : std::exp(gamma * log_l_[i]));
            m.s0 += w;
            m.s1 += w * log_l_[i];
            m.s2 += w * log_l_[i] * log_l_[i];
        }
        return m;
    }

    double objective(double gamma) const {
        const double r = moments(gamma).s0 - target_mean_;
        return r * r + beta_ * (gamma - 1.0) * (gamma - 1.0);
    }

    double target_mean() const { return target_mean_; }
    double beta() const { return beta_; }

private:
    double beta_;
    double target_mean_ = 0.0;
    std::vector<double> mass_;
    std::vector<double> l_;
    std::vector<double> log_l_;
};

// Golden-section search; used when the descent iterations do not settle.
bool golden_section(const GammaProblem& prob, const GammaSolveConfig& cfg, GammaResult& res) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = cfg.gamma_low;
    double hi = cfg.gamma_high;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = prob.objective(x1);
    double f2 = prob.objective(x2);
    // Enough iterations to shrink the bracket below tolerance.
    const int needed = static_cast<int>(std::ceil(std::log(cfg.tolerance / (hi - lo)) / std::log(inv_phi))) + 1;
    const int iters = std::max(needed, cfg.max_iters);
    int it = 0;
    for (; it < iters && hi - lo > cfg.tolerance; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = prob.objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = prob.objective(x2);
        }
    }
    res.iterations += it;
    // Bracket endpoints may be optimal when the minimum sits on a bound.
    double best = 0.5 * (lo + hi);
    double fbest = prob.objective(best);
    for (double cand : {cfg.gamma_low, cfg.gamma_high, res.gamma}) {
        const double fc = prob.objective(cand);
        if (fc < fbest) {
            best = cand;
            fbest = fc;
        }
    }
    if (fbest <= res.objective) {
        res.gamma = best;
        res.objective = fbest;
        res.objective_trace.push_back(fbest);
    }
    return hi - lo <= cfg.tolerance;
}

}  // namespace

void GammaSolveConfig::validate() const {
    if (!(beta >= 0.0) || !(step_size > 0.0) || !(tolerance > 0.0) || max_iters < 1 ||
        !(gamma_low < 1.0 && 1.0 < gamma_high) || !(gamma_low > 0.0)) {
        throw ConfigError("invalid gamma solver configuration");
    }
}

Plane match_histogram(const Plane& channel, const Histogram& reference) {
    if (!(reference.total > 0.0)) {
        throw DegenerateDataError("reference histogram is empty");
    }
    const Histogram src = channel_histogram(channel);
    const auto src_cdf = src.cdf();
    const auto ref_cdf = reference.cdf();
    // Mass is compared with a small slack so bins whose cumulative sums agree
    // up to rounding still match each other.
    constexpr double kSlack = 1e-12;
    std::array<int, kHistogramBins> lut{};
    int k = 0;
    for (int b = 0; b < kHistogramBins; ++b) {
        while (k < kHistogramBins - 1 && ref_cdf[k] < src_cdf[b] - kSlack) {
            ++k;
        }
        lut[b] = k;
    }
    Plane out(channel.height, channel.width);
    for (std::size_t i = 0; i < channel.size(); ++i) {
        out.values[i] = bin_center(lut[unit_bin(channel.values[i])]);
    }
    return out;
}

double gamma_objective(const Histogram& src_L, const Histogram& ref_L, double beta, double gamma) {
    return GammaProblem(src_L, ref_L, beta).objective(gamma);
}

GammaResult solve_gamma(const Histogram& src_L, const Histogram& ref_L, const GammaSolveConfig& cfg) {
    cfg.validate();
    if (!(src_L.total > 0.0) || !(ref_L.total > 0.0)) {
        throw DegenerateSourceError("empty lightness histogram");
    }
    if (src_L.counts[0] == src_L.total) {
        throw DegenerateSourceError("source lightness is entirely black");
    }
    const GammaProblem prob(src_L, ref_L, cfg.beta);

    GammaResult res;
    res.gamma = 1.0;
    res.objective = prob.objective(1.0);
    res.objective_trace.push_back(res.objective);

    bool converged = false;
    for (int it = 0; it < cfg.max_iters; ++it) {
        const PowerMoments m = prob.moments(res.gamma);
        const double r = m.s0 - prob.target_mean();
        const double grad = 2.0 * r * m.s1 + 2.0 * cfg.beta * (res.gamma - 1.0);
        // Gauss-Newton curvature is positive whenever the problem is not flat.
        const double curv = 2.0 * (m.s1 * m.s1 + cfg.beta) + std::max(0.0, 2.0 * r * m.s2);
        if (grad == 0.0) {
            converged = true;
            break;
        }
        if (!(curv > 0.0)) {
            break;
        }
        double step = -cfg.step_size * grad / curv;
        double next = std::clamp(res.gamma + step, cfg.gamma_low, cfg.gamma_high);
        double fnext = prob.objective(next);
        int halvings = 0;
        while (fnext > res.objective && halvings < 60) {
            step *= 0.5;
            next = std::clamp(res.gamma + step, cfg.gamma_low, cfg.gamma_high);
            fnext = prob.objective(next);
            ++halvings;
        }
        res.iterations = it + 1;
        if (fnext > res.objective) {
            converged = true;  // no descent direction left at this resolution
            break;
        }
        const double moved = std::abs(next - res.gamma);
        res.gamma = next;
        res.objective = fnext;
        res.objective_trace.push_back(fnext);
        if (moved < cfg.tolerance) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        res.used_fallback = true;
        if (!golden_section(prob, cfg, res)) {
            throw NonConvergenceError("gamma solver did not reach tolerance");
        }
    }
    return res;
}

Plane apply_gamma(const Plane& channel, double gamma) {
    if (!(gamma > 0.0)) {
        throw ConfigError("gamma must be positive");
    }
    Plane out(channel.height, channel.width);
    for (std::size_t i = 0; i < channel.size(); ++i) {
        out.values[i] = std::clamp(std::pow(std::clamp(channel.values[i], 0.0, 1.0), gamma), 0.0, 1.0);
    }
    return out;
}

PhotometricAlignment align_photometric(const ImageRGB& src, const ImageRGB& ref, const GammaSolveConfig& cfg) {
    const ImageLab s = rgb_to_lab(src);
    const ImageLab r = rgb_to_lab(ref);
    PhotometricAlignment out;
    out.gamma = solve_gamma(channel_histogram(s.L), channel_histogram(r.L), cfg);
    ImageLab aligned{s.height, s.width, apply_gamma(s.L, out.gamma.gamma),
                     match_histogram(s.a, channel_histogram(r.a)), match_histogram(s.b, channel_histogram(r.b))};
    out.image = lab_to_rgb(aligned);
    return out;
}

}  // namespace domalign
