#include "domalign/gma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "domalign/errors.hpp"
#include "domalign/image.hpp"

namespace domalign {
namespace {

Eigen::Index argmax_row(const Eigen::MatrixXd& m, Eigen::Index row) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
        if (m(row, c) > m(row, best)) {
            best = c;
        }
    }
    return best;
}

void assign_nearest(const Eigen::MatrixXd& pts, const Eigen::MatrixXd& centers, std::vector<Eigen::Index>& assign,
                    std::vector<double>& dist2) {
    const Eigen::Index n = pts.rows();
    assign.assign(static_cast<std::size_t>(n), 0);
    dist2.assign(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index arg = 0;
        for (Eigen::Index k = 0; k < centers.rows(); ++k) {
            const double d = (pts.row(i) - centers.row(k)).squaredNorm();
            if (d < best) {
                best = d;
                arg = k;
            }
        }
        assign[i] = arg;
        dist2[i] = best;
    }
}

}  // namespace

std::vector<std::size_t> sample_correct_indices(const Eigen::MatrixXd& probs, std::span<const std::uint8_t> labels,
                                                std::size_t n, Rng& rng) {
    if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
        throw DimensionMismatchError("probability rows and labels differ in length");
    }
    std::vector<std::size_t> candidates;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const std::uint8_t y = labels[static_cast<std::size_t>(i)];
        if (y != kIgnoreLabel && argmax_row(probs, i) == static_cast<Eigen::Index>(y)) {
            candidates.push_back(static_cast<std::size_t>(i));
        }
    }
    if (candidates.size() < n || candidates.empty()) {
        throw InsufficientCorrectPixelsError("only " + std::to_string(candidates.size()) +
                                             " correctly classified pixels for a sample of " + std::to_string(n));
    }
    // Partial Fisher-Yates: the first n slots become the sample.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(n);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

FeatureMatrix sample_correct_features(const FeatureMatrix& feats, const Eigen::MatrixXd& probs,
                                      std::span<const std::uint8_t> labels, std::size_t n, Rng& rng) {
    if (feats.rows() != probs.rows()) {
        throw DimensionMismatchError("feature and probability row counts differ");
    }
    const auto idx = sample_correct_indices(probs, labels, n, rng);
    FeatureMatrix out(static_cast<Eigen::Index>(idx.size()), feats.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = feats.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

PcaModel fit_pca(const FeatureMatrix& X, double target_energy, std::optional<Eigen::Index> fixed_dim) {
    if (X.rows() < 2 || X.cols() < 1) {
        throw DegenerateDataError("PCA needs at least two samples");
    }
    if (!(target_energy > 0.0 && target_energy <= 1.0)) {
        throw ConfigError("target energy must be in (0, 1]");
    }
    PcaModel m;
    m.mean = X.colwise().mean().transpose();
    const Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw DegenerateDataError("covariance eigendecomposition failed");
    }
    // Eigen returns ascending eigenvalues.
    const Eigen::Index d = X.cols();
    Eigen::VectorXd vals = eig.eigenvalues().reverse().cwiseMax(0.0);
    Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
    const double total = vals.sum();
    if (!(total > 1e-300)) {
        throw DegenerateDataError("features have zero variance");
    }
    Eigen::Index k = d;
    if (fixed_dim) {
        if (*fixed_dim < 1 || *fixed_dim > d) {
            throw ConfigError("fixed PCA dimension out of range");
        }
        k = *fixed_dim;
    } else {
        double cum = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            cum += vals[i];
            if (cum / total >= target_energy - 1e-12) {
                k = i + 1;
                break;
            }
        }
    }
    m.components = vecs.leftCols(k).transpose();
    // Sign convention: the largest-magnitude entry of each component is positive.
    for (Eigen::Index r = 0; r < k; ++r) {
        Eigen::Index arg;
        m.components.row(r).cwiseAbs().maxCoeff(&arg);
        if (m.components(r, arg) < 0.0) {
            m.components.row(r) *= -1.0;
        }
    }
    m.variances = vals.head(k);
    m.explained_ratio = std::min(1.0, m.variances.sum() / total);
    return m;
}

Eigen::VectorXd pca_reduce(const Eigen::VectorXd& x, const PcaModel& m) {
    if (x.size() != m.dim()) {
        throw DimensionMismatchError("pca_reduce: feature dimension mismatch");
    }
    return m.components * (x - m.mean);
}

Eigen::VectorXd pca_reconstruct(const Eigen::VectorXd& reduced, const PcaModel& m) {
    if (reduced.size() != m.reduced_dim()) {
        throw DimensionMismatchError("pca_reconstruct: reduced dimension mismatch");
    }
    return m.components.transpose() * reduced + m.mean;
}

Eigen::MatrixXd pca_reduce_rows(const FeatureMatrix& X, const PcaModel& m) {
    if (X.cols() != m.dim()) {
        throw DimensionMismatchError("pca_reduce_rows: feature dimension mismatch");
    }
    return (X.rowwise() - m.mean.transpose()) * m.components.transpose();
}

AtomSet kmeans_atoms(const Eigen::MatrixXd& reduced, Eigen::Index n_z, Rng& rng, int max_iters) {
    const Eigen::Index n = reduced.rows();
    if (n_z < 1 || n < n_z) {
        throw ConfigError("k-means needs 1 <= n_z <= number of points");
    }
    const Eigen::Index dim = reduced.cols();
    Eigen::MatrixXd centers(n_z, dim);

    // k-means++ seeding.
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    centers.row(0) = reduced.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    for (Eigen::Index k = 1; k < n_z; ++k) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (reduced.row(i) - centers.row(k - 1)).squaredNorm());
            sum += d2[i];
        }
        Eigen::Index pick = n - 1;
        if (sum > 0.0) {
            const double u = rng.uniform() * sum;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && u < acc) {
                    pick = i;
                    break;
                }
            }
            // Rounding can leave u past the final cumulative sum.
            while (d2[pick] == 0.0 && pick > 0) {
                --pick;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centers.row(k) = reduced.row(pick);
    }

    AtomSet out;
    std::vector<Eigen::Index> assign;
    std::vector<double> dist2;
    assign_nearest(reduced, centers, assign, dist2);
    out.inertia_history.push_back(std::accumulate(dist2.begin(), dist2.end(), 0.0));

    for (int it = 1; it <= max_iters; ++it) {
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_z, dim);
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(n_z), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += reduced.row(i);
            ++counts[assign[i]];
        }
        std::vector<bool> taken(static_cast<std::size_t>(n), false);
        for (Eigen::Index k = 0; k < n_z; ++k) {
            if (counts[k] > 0) {
                centers.row(k) = sums.row(k) / static_cast<double>(counts[k]);
                continue;
            }
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!taken[i] && dist2[i] > far_d) {
                    far_d = dist2[i];
                    far = i;
                }
            }
            taken[far] = true;
            centers.row(k) = reduced.row(far);
        }
        std::vector<Eigen::Index> next;
        assign_nearest(reduced, centers, next, dist2);
        out.inertia_history.push_back(std::accumulate(dist2.begin(), dist2.end(), 0.0));
        out.iterations = it;
        const bool fixpoint = next == assign;
        assign = std::move(next);
        if (fixpoint) {
            break;
        }
    }
    out.atoms = centers;
    out.inertia = out.inertia_history.back();
    return out;
}

ManifoldProjector make_projector(PcaModel pca, AtomSet atoms, Eigen::Index n_h, Rng& rng) {
    if (n_h < 1) {
        throw ConfigError("hidden dimension must be positive");
    }
    if (atoms.atoms.cols() != pca.reduced_dim()) {
        throw DimensionMismatchError("atoms do not live in the PCA subspace");
    }
    const Eigen::Index dr = pca.reduced_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dr));
    ManifoldProjector p;
    p.W1.resize(n_h, dr);
    p.W2.resize(n_h, dr);
    for (Eigen::Index i = 0; i < n_h; ++i) {
        for (Eigen::Index j = 0; j < dr; ++j) {
            p.W1(i, j) = rng.uniform(-scale, scale);
        }
    }
    for (Eigen::Index i = 0; i < n_h; ++i) {
        for (Eigen::Index j = 0; j < dr; ++j) {
            p.W2(i, j) = rng.uniform(-scale, scale);
        }
    }
    p.atoms = std::move(atoms);
    p.pca = std::move(pca);
    return p;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

Eigen::VectorXd attention_logits(const Eigen::VectorXd& x, const ManifoldProjector& proj) {
    const Eigen::VectorXd q = proj.W1 * pca_reduce(x, proj.pca);
    const Eigen::MatrixXd keys = proj.atoms.atoms * proj.W2.transpose();  // n_z x n_h
    return keys * q / std::sqrt(static_cast<double>(proj.atom_count()));
}

Projection manifold_project(const Eigen::VectorXd& x, const ManifoldProjector& proj) {
    Projection p;
    p.weights = softmax(attention_logits(x, proj));
    p.reduced = proj.atoms.atoms.transpose() * p.weights;
    return p;
}

double manifold_loss(const FeatureMatrix& batch, const ManifoldProjector& proj) {
    if (batch.rows() == 0) {
        throw ConfigError("manifold loss of an empty batch");
    }
    if (batch.cols() != proj.pca.dim()) {
        throw DimensionMismatchError("manifold_loss: feature dimension mismatch");
    }
    double loss = 0.0;
    for (Eigen::Index j = 0; j < batch.rows(); ++j) {
        const Eigen::VectorXd x = batch.row(j).transpose();
        const Projection p = manifold_project(x, proj);
        loss += (pca_reconstruct(p.reduced, proj.pca) - x).squaredNorm();
    }
    return loss;
}

ManifoldGrad manifold_loss_grad(const FeatureMatrix& batch, const ManifoldProjector& proj) {
    if (batch.rows() == 0) {
        throw ConfigError("manifold loss of an empty batch");
    }
    if (batch.cols() != proj.pca.dim()) {
        throw DimensionMismatchError("manifold_loss_grad: feature dimension mismatch");
    }
    const Eigen::MatrixXd& Z = proj.atoms.atoms;
    const Eigen::MatrixXd& C = proj.pca.components;
    const double inv_sqrt_nz = 1.0 / std::sqrt(static_cast<double>(Z.rows()));
    const Eigen::MatrixXd keys = Z * proj.W2.transpose();

    ManifoldGrad g;
    g.d_features = FeatureMatrix::Zero(batch.rows(), batch.cols());
    g.d_W1 = Eigen::MatrixXd::Zero(proj.W1.rows(), proj.W1.cols());
    g.d_W2 = Eigen::MatrixXd::Zero(proj.W2.rows(), proj.W2.cols());
    for (Eigen::Index j = 0; j < batch.rows(); ++j) {
        const Eigen::VectorXd x = batch.row(j).transpose();
        const Eigen::VectorXd r = C * (x - proj.pca.mean);
        const Eigen::VectorXd q = proj.W1 * r;
        const Eigen::VectorXd w = softmax(keys * q * inv_sqrt_nz);
        const Eigen::VectorXd xr = Z.transpose() * w;
        const Eigen::VectorXd e = C.transpose() * xr + proj.pca.mean - x;
        g.loss += e.squaredNorm();

        const Eigen::VectorXd d_xr = 2.0 * (C * e);
        const Eigen::VectorXd d_w = Z * d_xr;
        const Eigen::VectorXd d_s = w.cwiseProduct((d_w.array() - w.dot(d_w)).matrix());
        const Eigen::VectorXd d_q = keys.transpose() * d_s * inv_sqrt_nz;
        g.d_W1 += d_q * r.transpose();
        g.d_W2 += (q * inv_sqrt_nz) * (Z.transpose() * d_s).transpose();
        g.d_features.row(j) = (-2.0 * e + C.transpose() * (proj.W1.transpose() * d_q)).transpose();
    }
    return g;
}

}  // namespace domalign
