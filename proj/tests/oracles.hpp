// Naive scalar reference implementations used as test oracles. They share
// no code with the library beyond the plain data containers.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "domalign/catreg.hpp"
#include "domalign/colorspace.hpp"
#include "domalign/gma.hpp"
#include "domalign/image.hpp"
#include "domalign/rng.hpp"
#include "domalign/tcr.hpp"

namespace oracle {

using domalign::Histogram;
using domalign::ImageRGB;

inline int bin_of(double v) {
    if (v <= 0.0) {
        return 0;
    }
    const int b = static_cast<int>(v * 256.0);
    return b > 255 ? 255 : b;
}

// Normalized masses of a histogram.
inline std::vector<double> masses(const Histogram& h) {
    std::vector<double> p(256);
    for (int i = 0; i < 256; ++i) {
        p[i] = h.counts[i] / h.total;
    }
    return p;
}

inline double gamma_objective(const Histogram& src, const Histogram& ref, double beta, double g) {
    const auto ps = masses(src);
    const auto pu = masses(ref);
    double a = 0.0;
    double b = 0.0;
    for (int i = 0; i < 256; ++i) {
        const double l = (i + 0.5) / 256.0;
        a += ps[i] * std::pow(l, g);
        b += pu[i] * l;
    }
    return (a - b) * (a - b) + beta * (g - 1.0) * (g - 1.0);
}

struct GridMin {
    double gamma;
    double objective;
};

// Exhaustive scan of [lo, hi] at `step` resolution. Powers are advanced by a
// running product, refreshed with pow every `refresh` points to bound drift.
inline GridMin gamma_grid_scan(const Histogram& src, const Histogram& ref, double beta, double lo = 0.2,
                               double hi = 5.0, double step = 1e-4) {
    const auto ps = masses(src);
    const auto pu = masses(ref);
    std::vector<double> l;
    std::vector<double> w;
    double target = 0.0;
    for (int i = 0; i < 256; ++i) {
        target += pu[i] * (i + 0.5) / 256.0;
        if (ps[i] > 0.0) {
            l.push_back((i + 0.5) / 256.0);
            w.push_back(ps[i]);
        }
    }
    const auto n = static_cast<long>(std::llround((hi - lo) / step));
    std::vector<double> pw(l.size());
    std::vector<double> mult(l.size());
    for (std::size_t k = 0; k < l.size(); ++k) {
        mult[k] = std::pow(l[k], step);
    }
    GridMin best{lo, std::numeric_limits<double>::infinity()};
    for (long i = 0; i <= n; ++i) {
        const double g = lo + static_cast<double>(i) * step;
        if (i % 1000 == 0) {
            for (std::size_t k = 0; k < l.size(); ++k) {
                pw[k] = std::pow(l[k], g);
            }
        } else {
            for (std::size_t k = 0; k < l.size(); ++k) {
                pw[k] *= mult[k];
            }
        }
        double a = 0.0;
        for (std::size_t k = 0; k < l.size(); ++k) {
            a += w[k] * pw[k];
        }
        const double f = (a - target) * (a - target) + beta * (g - 1.0) * (g - 1.0);
        if (f < best.objective) {
            best = {g, f};
        }
    }
    return best;
}

// Largest |CDF_out - CDF_ref| over the bins that receive mass in `out`.
inline double cdf_gap_on_occupied(const Histogram& out, const Histogram& ref) {
    double co = 0.0;
    double cr = 0.0;
    double gap = 0.0;
    for (int i = 0; i < 256; ++i) {
        co += out.counts[i] / out.total;
        cr += ref.counts[i] / ref.total;
        if (out.counts[i] > 0.0) {
            gap = std::max(gap, std::abs(co - cr));
        }
    }
    return gap;
}

inline double max_bin_mass(const Histogram& h) {
    double m = 0.0;
    for (int i = 0; i < 256; ++i) {
        m = std::max(m, h.counts[i] / h.total);
    }
    return m;
}

inline int reflect101(int i, int n) {
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - i;
}

inline ImageRGB bilateral(const ImageRGB& img, int d, double sc, double ss) {
    const int r = d / 2;
    ImageRGB out(img.height, img.width);
    auto gray = [&](int y, int x) {
        return 255.0 * (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2));
    };
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double num[3] = {0, 0, 0};
            double den = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = reflect101(y + dy, img.height);
                    const int xx = reflect101(x + dx, img.width);
                    const double dg = gray(yy, xx) - gray(y, x);
                    const double wgt = std::exp(-(dx * dx + dy * dy) / (2 * ss * ss)) * std::exp(-dg * dg / (2 * sc * sc));
                    den += wgt;
                    for (int c = 0; c < 3; ++c) {
                        num[c] += wgt * img.at(yy, xx, c);
                    }
                }
            }
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = num[c] / den;
            }
        }
    }
    return out;
}

inline std::array<double, 256> highfreq_counts(const ImageRGB& img) {
    std::array<double, 256> h{};
    auto gray = [&](int y, int x) {
        return 255.0 * (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2));
    };
    for (int y = 1; y < img.height - 1; ++y) {
        for (int x = 1; x < img.width - 1; ++x) {
            double v = gray(y - 1, x) + gray(y + 1, x) + gray(y, x - 1) + gray(y, x + 1) - 4 * gray(y, x);
            v = std::min(255.0, std::max(-255.0, v));
            int b = static_cast<int>(std::floor((v + 255.0) / 510.0 * 256.0));
            b = std::min(255, std::max(0, b));
            h[b] += 1.0;
        }
    }
    return h;
}

inline double kl(const std::array<double, 256>& p, const std::array<double, 256>& q) {
    double sp = 0.0;
    double sq = 0.0;
    for (int i = 0; i < 256; ++i) {
        sp += p[i];
        sq += q[i];
    }
    double zp = 0.0;
    double zq = 0.0;
    std::array<double, 256> a{};
    std::array<double, 256> b{};
    for (int i = 0; i < 256; ++i) {
        a[i] = p[i] / sp + 1e-8;
        b[i] = q[i] / sq + 1e-8;
        zp += a[i];
        zq += b[i];
    }
    double out = 0.0;
    for (int i = 0; i < 256; ++i) {
        out += a[i] / zp * std::log((a[i] / zp) / (b[i] / zq));
    }
    return out;
}

// ---- feature-level losses ----------------------------------------------------

inline std::vector<double> row(const Eigen::MatrixXd& m, Eigen::Index r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        v[static_cast<std::size_t>(c)] = m(r, c);
    }
    return v;
}

inline double manifold_loss(const Eigen::MatrixXd& X, const domalign::ManifoldProjector& p) {
    const auto& C = p.pca.components;
    const auto& mu = p.pca.mean;
    const auto& Z = p.atoms.atoms;
    const long dc = C.cols();
    const long dr = C.rows();
    const long nz = Z.rows();
    const long nh = p.W1.rows();
    double loss = 0.0;
    for (long j = 0; j < X.rows(); ++j) {
        std::vector<double> r(dr, 0.0);
        for (long a = 0; a < dr; ++a) {
            for (long b = 0; b < dc; ++b) {
                r[a] += C(a, b) * (X(j, b) - mu(b));
            }
        }
        std::vector<double> q(nh, 0.0);
        for (long h = 0; h < nh; ++h) {
            for (long a = 0; a < dr; ++a) {
                q[h] += p.W1(h, a) * r[a];
            }
        }
        std::vector<double> s(nz, 0.0);
        for (long k = 0; k < nz; ++k) {
            for (long h = 0; h < nh; ++h) {
                double key = 0.0;
                for (long a = 0; a < dr; ++a) {
                    key += p.W2(h, a) * Z(k, a);
                }
                s[k] += q[h] * key;
            }
            s[k] /= std::sqrt(static_cast<double>(nz));
        }
        const double m = *std::max_element(s.begin(), s.end());
        double zsum = 0.0;
        for (double v : s) {
            zsum += std::exp(v - m);
        }
        std::vector<double> xr(dr, 0.0);
        for (long k = 0; k < nz; ++k) {
            const double w = std::exp(s[k] - m) / zsum;
            for (long a = 0; a < dr; ++a) {
                xr[a] += w * Z(k, a);
            }
        }
        for (long b = 0; b < dc; ++b) {
            double lifted = mu(b);
            for (long a = 0; a < dr; ++a) {
                lifted += C(a, b) * xr[a];
            }
            loss += (lifted - X(j, b)) * (lifted - X(j, b));
        }
    }
    return loss;
}

inline double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(s);
}

inline std::vector<double> normalize(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) {
        x /= n;
    }
    return v;
}

struct Centers {
    std::vector<std::vector<double>> c;
    std::vector<bool> present;
};

inline Centers centers(const Eigen::MatrixXd& F, const std::vector<std::uint8_t>& y, int M) {
    Centers out;
    out.c.assign(M, std::vector<double>(F.cols(), 0.0));
    out.present.assign(M, false);
    std::vector<int> n(M, 0);
    for (long i = 0; i < F.rows(); ++i) {
        if (y[i] == domalign::kIgnoreLabel) {
            continue;
        }
        for (long d = 0; d < F.cols(); ++d) {
            out.c[y[i]][d] += F(i, d);
        }
        ++n[y[i]];
    }
    for (int c = 0; c < M; ++c) {
        if (n[c] == 0) {
            continue;
        }
        double norm = 0.0;
        for (double& v : out.c[c]) {
            v /= n[c];
            norm += v * v;
        }
        if (norm > 0.0) {
            out.c[c] = normalize(out.c[c]);
            out.present[c] = true;
        } else {
            std::fill(out.c[c].begin(), out.c[c].end(), 0.0);
        }
    }
    return out;
}

inline double triplet(const Eigen::MatrixXd& F, const std::vector<std::uint8_t>& y, const Centers& C,
                      double alpha) {
    double sum = 0.0;
    int n = 0;
    for (long i = 0; i < F.rows(); ++i) {
        if (y[i] == domalign::kIgnoreLabel) {
            continue;
        }
        const auto g = normalize(row(F, i));
        const double dp = dist(g, C.c[y[i]]);
        double dn = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C.c.size(); ++c) {
            if (c != y[i] && C.present[c]) {
                dn = std::min(dn, dist(g, C.c[c]));
            }
        }
        sum += std::max(0.0, dp - dn + alpha);
        ++n;
    }
    return n ? sum / n : 0.0;
}

struct Pseudo {
    std::vector<int> label;
    std::vector<double> conf;
};

inline Pseudo pseudo(const Eigen::MatrixXd& P) {
    Pseudo out;
    for (long i = 0; i < P.rows(); ++i) {
        int best = 0;
        for (int c = 0; c < P.cols(); ++c) {
            if (P(i, c) > P(i, best)) {
                best = c;
            }
        }
        out.label.push_back(best);
        out.conf.push_back(P(i, best));
    }
    return out;
}

// Thresholds from a full descending sort: the smallest value v such that at
// least p% of the class has confidence >= v.
inline std::vector<double> thresholds(const std::vector<int>& label, const std::vector<double>& conf, int M,
                                      double cap, double p) {
    std::vector<double> t(M, cap);
    for (int c = 0; c < M; ++c) {
        std::vector<double> v;
        for (std::size_t i = 0; i < label.size(); ++i) {
            if (label[i] == c) {
                v.push_back(conf[i]);
            }
        }
        if (v.empty()) {
            continue;
        }
        std::sort(v.begin(), v.end(), std::greater<>());
        const double need = p / 100.0 * static_cast<double>(v.size());
        std::size_t k = 1;
        while (static_cast<double>(k) < need - 1e-9) {
            ++k;
        }
        t[c] = std::min(cap, v[k - 1]);
    }
    return t;
}

inline double consistency(const std::vector<int>& label, const std::vector<double>& conf,
                          const std::vector<double>& t, const Eigen::MatrixXd& P) {
    double s = 0.0;
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (conf[i] >= t[label[i]]) {
            s += -std::log(P(static_cast<long>(i), label[i]));
        }
    }
    return s;
}

// ---- finite differences -----------------------------------------------------------

// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
// for central differences with step h.
inline double fd_rel_error(Eigen::MatrixXd& param, const Eigen::MatrixXd& analytic,
                           const std::function<double()>& f, double h = 1e-5) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + h;
        const double fp = f();
        param.data()[i] = keep - h;
        const double fm = f();
        param.data()[i] = keep;
        const double num = (fp - fm) / (2.0 * h);
        const double an = analytic.data()[i];
        const double scale = std::max({1.0, std::abs(an), std::abs(num)});
        worst = std::max(worst, std::abs(an - num) / scale);
    }
    return worst;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, domalign::Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal(0.0, scale);
    }
    return m;
}

inline Histogram random_histogram(domalign::Rng& rng, int samples = 4000) {
    // Mixture of two bumps with random centers and widths.
    Histogram h;
    const double c1 = rng.uniform(0.1, 0.9);
    const double c2 = rng.uniform(0.1, 0.9);
    const double s1 = rng.uniform(0.02, 0.2);
    const double s2 = rng.uniform(0.02, 0.2);
    const double mix = rng.uniform(0.2, 0.8);
    for (int i = 0; i < samples; ++i) {
        const double v = rng.uniform() < mix ? rng.normal(c1, s1) : rng.normal(c2, s2);
        h.add(bin_of(std::min(1.0, std::max(0.0, v))));
    }
    return h;
}

// Random projector with orthonormal PCA rows and atoms drawn near the origin.
inline domalign::ManifoldProjector random_projector(Eigen::Index dc, Eigen::Index dr, Eigen::Index nz,
                                                   Eigen::Index nh, domalign::Rng& rng) {
    domalign::PcaModel pca;
    const Eigen::MatrixXd a = random_matrix(dc, dc, rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dc, dc);
    pca.components = q.leftCols(dr).transpose();
    pca.mean = random_matrix(dc, 1, rng, 0.5);
    pca.variances = Eigen::VectorXd::Ones(dr);
    pca.explained_ratio = 1.0;
    domalign::ManifoldProjector p;
    p.pca = pca;
    p.atoms.atoms = random_matrix(nz, dr, rng);
    p.W1 = random_matrix(nh, dr, rng, 0.7);
    p.W2 = random_matrix(nh, dr, rng, 0.7);
    return p;
}

// Row-stochastic matrix with softmax rows of random logits.
inline Eigen::MatrixXd random_probs(Eigen::Index n, Eigen::Index m, domalign::Rng& rng, double scale = 2.0) {
    Eigen::MatrixXd p = random_matrix(n, m, rng, scale);
    for (Eigen::Index i = 0; i < n; ++i) {
        double z = 0.0;
        for (Eigen::Index c = 0; c < m; ++c) {
            p(i, c) = std::exp(p(i, c));
            z += p(i, c);
        }
        for (Eigen::Index c = 0; c < m; ++c) {
            p(i, c) /= z;
        }
    }
    return p;
}

}  // namespace oracle
