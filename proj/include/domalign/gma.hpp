#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "domalign/rng.hpp"

namespace domalign {

/// Rows are samples (pixels), columns are feature dimensions.
using FeatureMatrix = Eigen::MatrixXd;

/// Uniform sample without replacement of `n` rows whose argmax(probs) equals
/// the label. Returned rows keep their original (ascending) order.
FeatureMatrix sample_correct_features(const FeatureMatrix& feats, const Eigen::MatrixXd& probs,
                                      std::span<const std::uint8_t> labels, std::size_t n, Rng& rng);

/// Indices of rows that `sample_correct_features` would return.
std::vector<std::size_t> sample_correct_indices(const Eigen::MatrixXd& probs, std::span<const std::uint8_t> labels,
                                                std::size_t n, Rng& rng);

struct PcaModel {
    Eigen::VectorXd mean;
    /// reduced_dim x dim, orthonormal rows ordered by decreasing variance.
    Eigen::MatrixXd components;
    /// Variance per retained component.
    Eigen::VectorXd variances;
    double explained_ratio = 0.0;

    Eigen::Index dim() const { return components.cols(); }
    Eigen::Index reduced_dim() const { return components.rows(); }
};

/// Keeps the smallest number of components reaching `target_energy` of the
/// total variance, or exactly `fixed_dim` components when given.
PcaModel fit_pca(const FeatureMatrix& X, double target_energy = 0.9,
                 std::optional<Eigen::Index> fixed_dim = std::nullopt);

Eigen::VectorXd pca_reduce(const Eigen::VectorXd& x, const PcaModel& m);
Eigen::VectorXd pca_reconstruct(const Eigen::VectorXd& reduced, const PcaModel& m);
/// Row-wise reduce for a whole matrix.
Eigen::MatrixXd pca_reduce_rows(const FeatureMatrix& X, const PcaModel& m);

struct AtomSet {
    /// n_z x reduced_dim.
    Eigen::MatrixXd atoms;
    double inertia = 0.0;
    /// Inertia after every assignment pass (first entry follows seeding).
    std::vector<double> inertia_history;
    int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iters passes. Empty clusters are reseeded at the point
/// farthest from its current center.
AtomSet kmeans_atoms(const Eigen::MatrixXd& reduced, Eigen::Index n_z, Rng& rng, int max_iters = 100);

/// Attention-weighted projection of features onto frozen manifold atoms.
struct ManifoldProjector {
    Eigen::MatrixXd W1;  // n_h x reduced_dim
    Eigen::MatrixXd W2;  // n_h x reduced_dim
    AtomSet atoms;
    PcaModel pca;

    Eigen::Index hidden() const { return W1.rows(); }
    Eigen::Index atom_count() const { return atoms.atoms.rows(); }
};

/// W1 and W2 drawn uniformly from [-1/sqrt(reduced_dim), 1/sqrt(reduced_dim)].
ManifoldProjector make_projector(PcaModel pca, AtomSet atoms, Eigen::Index n_h, Rng& rng);

struct Projection {
    Eigen::VectorXd weights;   // n_z, sums to one
    Eigen::VectorXd reduced;   // w^T z, reduced_dim
};

/// Attention logits (R(x) W1^T)(W2 z^T) / sqrt(n_z) for one feature.
Eigen::VectorXd attention_logits(const Eigen::VectorXd& x, const ManifoldProjector& proj);
Projection manifold_project(const Eigen::VectorXd& x, const ManifoldProjector& proj);

/// Max-subtracted softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// sum_j || R^-1(x_hat'_j) - x_j ||^2 over the batch rows.
double manifold_loss(const FeatureMatrix& batch, const ManifoldProjector& proj);

struct ManifoldGrad {
    double loss = 0.0;
    FeatureMatrix d_features;
    Eigen::MatrixXd d_W1;
    Eigen::MatrixXd d_W2;
};

/// Loss and exact gradients with respect to the batch features, W1 and W2.
/// Atoms and PCA are constants.
ManifoldGrad manifold_loss_grad(const FeatureMatrix& batch, const ManifoldProjector& proj);

}  // namespace domalign
