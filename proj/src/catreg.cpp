#include "domalign/catreg.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "domalign/errors.hpp"
#include "domalign/image.hpp"

namespace domalign {
namespace {

void check_inputs(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                  const CategoryCenters& centers, const TripletConfig& cfg) {
    if (static_cast<std::size_t>(feats.rows()) != labels.size()) {
        throw DimensionMismatchError("feature rows and labels differ in length");
    }
    if (feats.cols() != centers.centers.cols()) {
        throw DimensionMismatchError("feature and center dimensions differ");
    }
    if (!(cfg.alpha >= 0.0)) {
        throw ConfigError("triplet margin must be nonnegative");
    }
    if (centers.present_count() < 2) {
        throw SingleClassError("triplet loss needs at least two present classes");
    }
    for (std::uint8_t y : labels) {
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= centers.class_count() || !centers.present[y]) {
            throw MissingCenterError("no center for class " + std::to_string(y));
        }
    }
}

struct HingeTerm {
    Eigen::VectorXd g;
    int negative = -1;
    double d_pos = 0.0;
    double d_neg = 0.0;
    double value = 0.0;
};

HingeTerm hinge(const Eigen::VectorXd& x, int y, const CategoryCenters& centers, double alpha) {
    HingeTerm t;
    t.g = l2_normalize(x);
    t.d_pos = (t.g - centers.centers.row(y).transpose()).norm();
    t.d_neg = std::numeric_limits<double>::infinity();
    for (int c = 0; c < centers.class_count(); ++c) {
        if (c == y || !centers.present[c]) {
            continue;
        }
        const double d = (t.g - centers.centers.row(c).transpose()).norm();
        if (d < t.d_neg) {
            t.d_neg = d;
            t.negative = c;
        }
    }
    t.value = std::max(t.d_pos - t.d_neg + alpha, 0.0);
    return t;
}

}  // namespace

int CategoryCenters::present_count() const {
    int n = 0;
    for (bool p : present) {
        n += p ? 1 : 0;
    }
    return n;
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& x) {
    const double n = x.norm();
    if (!(n > 0.0)) {
        throw DegenerateDataError("cannot normalize a zero feature");
    }
    return x / n;
}

CategoryCenters compute_category_centers(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                                         int class_count) {
    if (static_cast<std::size_t>(feats.rows()) != labels.size()) {
        throw DimensionMismatchError("feature rows and labels differ in length");
    }
    if (feats.rows() == 0) {
        throw AllClassesAbsentError("empty feature corpus");
    }
    CategoryCenters out;
    out.centers = Eigen::MatrixXd::Zero(class_count, feats.cols());
    out.present.assign(static_cast<std::size_t>(class_count), false);
    std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
        const std::uint8_t y = labels[static_cast<std::size_t>(i)];
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= class_count) {
            throw FormatError("label " + std::to_string(y) + " out of range");
        }
        out.centers.row(y) += feats.row(i);
        counts[y] += 1.0;
    }
    for (int c = 0; c < class_count; ++c) {
        if (counts[c] == 0.0) {
            continue;
        }
        const Eigen::VectorXd mean = out.centers.row(c).transpose() / counts[c];
        if (mean.norm() > 0.0) {
            out.centers.row(c) = mean.normalized().transpose();
            out.present[c] = true;
        } else {
            out.centers.row(c).setZero();
        }
    }
    if (out.present_count() == 0) {
        throw AllClassesAbsentError("no class has a member pixel");
    }
    return out;
}

double triplet_loss(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                    const CategoryCenters& centers, const TripletConfig& cfg) {
    return triplet_loss_grad(feats, labels, centers, cfg).loss;
}

TripletGrad triplet_loss_grad(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                              const CategoryCenters& centers, const TripletConfig& cfg) {
    check_inputs(feats, labels, centers, cfg);
    TripletGrad out;
    out.d_features = Eigen::MatrixXd::Zero(feats.rows(), feats.cols());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
        const std::uint8_t y = labels[static_cast<std::size_t>(i)];
        if (y == kIgnoreLabel) {
            continue;
        }
        ++out.contributing;
        const Eigen::VectorXd x = feats.row(i).transpose();
        const HingeTerm t = hinge(x, y, centers, cfg.alpha);
        sum += t.value;
        if (t.value <= 0.0) {
            continue;
        }
        ++out.active;
        // d/dg of |g - f_y| - |g - f_n|; a zero distance contributes its
        // zero subgradient.
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(x.size());
        if (t.d_pos > 0.0) {
            dg += (t.g - centers.centers.row(y).transpose()) / t.d_pos;
        }
        if (t.d_neg > 0.0) {
            dg -= (t.g - centers.centers.row(t.negative).transpose()) / t.d_neg;
        }
        // Jacobian of G: (I - g g^T) / |x|.
        const Eigen::VectorXd dx = (dg - t.g * t.g.dot(dg)) / x.norm();
        out.d_features.row(i) = dx.transpose();
    }
    if (out.contributing > 0) {
        out.loss = sum / out.contributing;
        out.d_features /= static_cast<double>(out.contributing);
    }
    return out;
}

}  // namespace domalign
