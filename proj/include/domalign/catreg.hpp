#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace domalign {

/// Unit-norm mean feature per class; absent classes have no center.
struct CategoryCenters {
    Eigen::MatrixXd centers;  // class_count x dim
    std::vector<bool> present;

    int class_count() const { return static_cast<int>(present.size()); }
    int present_count() const;
};

struct TripletConfig {
    double alpha = 0.2;
};

/// L2 normalization G(x).
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& x);

/// Per-class mean of the rows of `feats` (one row per pixel), L2-normalized.
/// Ignore-labelled rows are skipped.
CategoryCenters compute_category_centers(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                                         int class_count);

/// Mean over non-ignore pixels of max(|G(x) - f_y| - min_{c != y} |G(x) - f_c| + alpha, 0).
double triplet_loss(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                    const CategoryCenters& centers, const TripletConfig& cfg = {});

struct TripletGrad {
    double loss = 0.0;
    Eigen::MatrixXd d_features;
    int active = 0;
    int contributing = 0;
};

/// Subgradient of triplet_loss with respect to every feature row; zero for
/// inactive hinges. The hardest negative is the lowest-index class among the
/// nearest other centers.
TripletGrad triplet_loss_grad(const Eigen::MatrixXd& feats, std::span<const std::uint8_t> labels,
                              const CategoryCenters& centers, const TripletConfig& cfg = {});

}  // namespace domalign
