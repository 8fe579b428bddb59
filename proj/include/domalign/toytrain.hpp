#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "domalign/artifact.hpp"
#include "domalign/catreg.hpp"
#include "domalign/gma.hpp"
#include "domalign/gpa.hpp"
#include "domalign/gtexa.hpp"
#include "domalign/image.hpp"
#include "domalign/rng.hpp"
#include "domalign/tcr.hpp"

namespace domalign {

/// Fixed per-pixel descriptor: centered RGB, optionally the 3x3 neighborhood mean minus
/// the pixel color and the 3x3 grayscale standard deviation.
struct DescriptorConfig {
    bool neighborhood_mean = true;
    bool local_contrast = true;

    int input_dim() const { return 3 + (neighborhood_mean ? 3 : 0) + (local_contrast ? 1 : 0); }
    bool operator==(const DescriptorConfig&) const = default;
};

/// Rows are pixels; the last column is the constant 1 for the bias.
Eigen::MatrixXd pixel_descriptors(const ImageRGB& img, const DescriptorConfig& cfg);

/// Linear feature layer followed by a linear-softmax classifier. The feature
/// layer output is the per-pixel feature used by the manifold and triplet
/// losses.
struct ToySegmenter {
    DescriptorConfig descriptor;
    Eigen::MatrixXd feature_weights;  // feature_dim x (input_dim + 1)
    Eigen::MatrixXd weights;          // class_count x (feature_dim + 1)

    int class_count() const { return static_cast<int>(weights.rows()); }
    int feature_dim() const { return static_cast<int>(feature_weights.rows()); }
};

ToySegmenter make_segmenter(int class_count, int feature_dim, const DescriptorConfig& desc, Rng& rng);

struct ForwardPass {
    int height = 0;
    int width = 0;
    Eigen::MatrixXd inputs;    // N x (input_dim + 1)
    Eigen::MatrixXd features;  // N x feature_dim
    Eigen::MatrixXd logits;    // N x class_count
};

ForwardPass forward(const ToySegmenter& model, const ImageRGB& img);
ProbabilityMap predict(const ToySegmenter& model, const ImageRGB& img);

struct SegmenterGrad {
    Eigen::MatrixXd d_feature_weights;
    Eigen::MatrixXd d_weights;

    static SegmenterGrad zeros_like(const ToySegmenter& m);
};

/// Accumulates parameter gradients given d(loss)/d(logits) and an optional
/// extra d(loss)/d(features) from feature-level losses.
void backward(const ToySegmenter& model, const ForwardPass& fp, const Eigen::MatrixXd& d_logits,
              const Eigen::MatrixXd* d_features, SegmenterGrad& acc);

/// Mean cross-entropy over non-ignore pixels.
double cross_entropy_loss(const ProbabilityMap& probs, const LabelMap& labels);

struct CrossEntropyGrad {
    double loss = 0.0;
    std::size_t count = 0;
    Eigen::MatrixXd d_logits;  // (softmax - onehot) / count at labelled pixels
};

CrossEntropyGrad cross_entropy_grad(const ProbabilityMap& logits, const LabelMap& labels);

struct LossWeights {
    double seg = 1.0;
    double manifold = 1.0;
    double triplet = 1.0;
    double consistency = 1.0;

    bool any_feature_loss() const { return manifold != 0.0 || triplet != 0.0 || consistency != 0.0; }
};

struct PipelineConfig {
    /// Total stages: one image-level stage plus stages - 1 feature-level stages.
    int stages = 3;
    int iterations = 500;
    double learning_rate = 0.5;
    double lr_power = 0.9;
    /// Multiplier on learning_rate for the feature-level stages.
    double feature_lr_scale = 0.5;
    LossWeights weights;

    int feature_dim = 8;
    DescriptorConfig descriptor;
    int source_batch = 4;
    int target_batch = 4;

    bool use_gpa = true;
    bool use_gtexa = true;
    GammaSolveConfig gamma;
    bool optimize_texture = true;
    BilateralParams texture_params{5, 75.0, 25.0};
    double texture_prob = 0.5;
    int texture_subsample = 50;

    PerturbConfig source_perturb = PerturbConfig::jitter_only();
    PerturbConfig target_perturb = default_target_perturb();

    double pca_energy = 0.9;
    int atom_count = 64;
    int hidden_dim = 32;
    int kmeans_iters = 100;
    int sample_cap_factor = 100;
    TripletConfig triplet;
    ThresholdConfig thresholds;

    int log_every = 10;
    std::uint64_t seed = 0;

    void validate() const;
    static PerturbConfig default_target_perturb();
};

struct TrainingData {
    int class_count = 2;
    std::vector<ImageRGB> source_images;
    std::vector<LabelMap> source_labels;
    std::vector<ImageRGB> target_images;
    /// Held-out evaluation pool; never used by any loss.
    std::vector<ImageRGB> eval_images;
    std::vector<LabelMap> eval_labels;

    void validate() const;
};

struct StepRecord {
    int stage = 0;
    int step = 0;
    double learning_rate = 0.0;
    double total = 0.0;
    double seg = 0.0;
    double manifold = 0.0;
    double triplet = 0.0;
    double consistency = 0.0;      // mean over valid pixels
    double consistency_sum = 0.0;  // plain sum over valid pixels
    std::size_t consistency_valid = 0;
};

/// Everything a feature-level stage consumes, computed from the frozen
/// previous-stage model.
struct StageInputs {
    int stage = 0;
    std::optional<ManifoldProjector> projector;
    std::optional<CategoryCenters> centers;
    std::optional<CategoryThresholds> thresholds;
    std::vector<PseudoLabelMap> pseudo_labels;
    std::optional<BilateralParams> texture;
};

struct StageOutcome {
    ToySegmenter model;
    std::optional<ManifoldProjector> projector;
    std::vector<StepRecord> steps;
};

/// Pseudo-labels, thresholds, atoms, centers and a fresh projector from the
/// previous-stage model.
StageInputs prepare_stage(const ToySegmenter& previous, int stage, const TrainingData& data,
                          const PipelineConfig& cfg, std::optional<BilateralParams> texture);

/// U gradient steps with polynomial learning-rate decay, restarted per stage.
/// Stage 0 uses only the segmentation loss on photometrically aligned source.
StageOutcome train_stage(const ToySegmenter& model, const StageInputs& inputs, const TrainingData& data,
                         const PipelineConfig& cfg);

struct EvalMetrics {
    double accuracy = 0.0;
    double miou = 0.0;
};

EvalMetrics evaluate(const ToySegmenter& model, const std::vector<ImageRGB>& images,
                     const std::vector<LabelMap>& labels);

struct StageMetrics {
    int stage = 0;
    double target_accuracy = 0.0;
    double target_miou = 0.0;
    double source_accuracy = 0.0;
    double final_total_loss = 0.0;
    bool pseudo_labels_frozen = true;
    std::size_t pseudo_valid_pixels = 0;
    Eigen::Index reduced_dim = 0;
    double explained_ratio = 0.0;
};

struct PipelineResult {
    std::vector<StageMetrics> stages;
    std::vector<StepRecord> steps;
    ToySegmenter model;
    std::optional<TextureAlignReport> texture;
    /// Artifacts consumed by the final feature-level stage, if any.
    std::optional<StageArtifact> artifact;
};

using StageCallback = std::function<void(const StageMetrics&, const std::vector<StepRecord>&)>;

/// Step 0 followed by stages - 1 feature-level stages.
PipelineResult run_pipeline(const TrainingData& data, const PipelineConfig& cfg,
                            const StageCallback& on_stage = {});

/// 64-bit FNV-1a over labels and confidences.
std::uint64_t fingerprint(const PseudoLabelMap& pl);

}  // namespace domalign
