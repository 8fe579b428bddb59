#include "domalign/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "domalign/errors.hpp"

namespace domalign {
namespace {

// Stream tags for derive_seed; every random decision in the pipeline draws
// from a stream keyed by (tag, stage, index).
enum StreamTag : std::uint64_t {
    kInitStream = 11,
    kStepStream = 12,
    kPrepareStream = 13,
    kTextureStream = 14,
    kArtifactAlignStream = 15,
};

Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(derive_seed(derive_seed(derive_seed(seed, tag), a), b));
}

int reflect(int i, int n) {
    if (n == 1) {
        return 0;
    }
    while (i < 0 || i >= n) {
        i = i < 0 ? -i : 2 * (n - 1) - i;
    }
    return i;
}

ProbabilityMap as_map(int h, int w, const Eigen::MatrixXd& m) { return ProbabilityMap{h, w, m}; }

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
        p.row(i) = e / e.sum();
    }
    return p;
}

double poly_lr(double base, double power, int step, int total) {
    return base * std::pow(1.0 - static_cast<double>(step) / total, power);
}

ImageRGB aligned_source(const TrainingData& data, const PipelineConfig& cfg, std::size_t src, Rng& rng) {
    if (!cfg.use_gpa) {
        return data.source_images[src];
    }
    const std::size_t ref = static_cast<std::size_t>(rng.below(data.target_images.size()));
    return align_photometric(data.source_images[src], data.target_images[ref], cfg.gamma).image;
}

// Row-stacks per-image matrices.
Eigen::MatrixXd vstack(const std::vector<Eigen::MatrixXd>& parts) {
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        rows += p.rows();
    }
    Eigen::MatrixXd out(rows, parts.empty() ? 0 : parts.front().cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p;
        r += p.rows();
    }
    return out;
}

}  // namespace

Eigen::MatrixXd pixel_descriptors(const ImageRGB& img, const DescriptorConfig& cfg) {
    const int d = cfg.input_dim();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(img.pixel_count()), d + 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const auto row = static_cast<Eigen::Index>(y) * img.width + x;
            int col = 0;
            // Centered color, then neighborhood terms as differences from it;
            // the same function class as raw values but far better conditioned.
            for (int c = 0; c < 3; ++c) {
                out(row, col++) = img.at(y, x, c) - 0.5;
            }
            if (cfg.neighborhood_mean || cfg.local_contrast) {
                double mean[3] = {0.0, 0.0, 0.0};
                double g1 = 0.0;
                double g2 = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = reflect(y + dy, img.height);
                        const int xx = reflect(x + dx, img.width);
                        for (int c = 0; c < 3; ++c) {
                            mean[c] += img.at(yy, xx, c) / 9.0;
                        }
                        const double g = 0.299 * img.at(yy, xx, 0) + 0.587 * img.at(yy, xx, 1) +
                                         0.114 * img.at(yy, xx, 2);
                        g1 += g / 9.0;
                        g2 += g * g / 9.0;
                    }
                }
                if (cfg.neighborhood_mean) {
                    for (int c = 0; c < 3; ++c) {
                        out(row, col++) = mean[c] - img.at(y, x, c);
                    }
                }
                if (cfg.local_contrast) {
                    out(row, col++) = std::sqrt(std::max(g2 - g1 * g1, 0.0));
                }
            }
            out(row, col) = 1.0;
        }
    }
    return out;
}

ToySegmenter make_segmenter(int class_count, int feature_dim, const DescriptorConfig& desc, Rng& rng) {
    if (class_count < 2 || feature_dim < 1) {
        throw ConfigError("segmenter needs >= 2 classes and a positive feature dimension");
    }
    ToySegmenter m;
    m.descriptor = desc;
    const int in = desc.input_dim() + 1;
    m.feature_weights.resize(feature_dim, in);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < m.feature_weights.size(); ++i) {
        m.feature_weights.data()[i] = rng.uniform(-s1, s1);
    }
    m.weights.resize(class_count, feature_dim + 1);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(feature_dim + 1));
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) {
        m.weights.data()[i] = rng.uniform(-s2, s2);
    }
    return m;
}

ForwardPass forward(const ToySegmenter& model, const ImageRGB& img) {
    ForwardPass fp;
    fp.height = img.height;
    fp.width = img.width;
    fp.inputs = pixel_descriptors(img, model.descriptor);
    fp.features = fp.inputs * model.feature_weights.transpose();
    const Eigen::Index fd = model.feature_weights.rows();
    fp.logits = fp.features * model.weights.leftCols(fd).transpose();
    fp.logits.rowwise() += model.weights.col(fd).transpose();
    return fp;
}

ProbabilityMap predict(const ToySegmenter& model, const ImageRGB& img) {
    const ForwardPass fp = forward(model, img);
    return as_map(img.height, img.width, row_softmax(fp.logits));
}

SegmenterGrad SegmenterGrad::zeros_like(const ToySegmenter& m) {
    return {Eigen::MatrixXd::Zero(m.feature_weights.rows(), m.feature_weights.cols()),
            Eigen::MatrixXd::Zero(m.weights.rows(), m.weights.cols())};
}

void backward(const ToySegmenter& model, const ForwardPass& fp, const Eigen::MatrixXd& d_logits,
              const Eigen::MatrixXd* d_features, SegmenterGrad& acc) {
    const Eigen::Index fd = model.feature_weights.rows();
    acc.d_weights.leftCols(fd) += d_logits.transpose() * fp.features;
    acc.d_weights.col(fd) += d_logits.colwise().sum().transpose();
    Eigen::MatrixXd d_feat = d_logits * model.weights.leftCols(fd);
    if (d_features != nullptr) {
        d_feat += *d_features;
    }
    acc.d_feature_weights += d_feat.transpose() * fp.inputs;
}

double cross_entropy_loss(const ProbabilityMap& probs, const LabelMap& labels) {
    require_same_shape(probs.height, probs.width, labels.height, labels.width, "cross_entropy: shape mismatch");
    if (static_cast<std::size_t>(probs.probs.rows()) != labels.pixel_count()) {
        throw DimensionMismatchError("cross_entropy: probability rows differ from pixel count");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
        const std::uint8_t y = labels.labels[i];
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= probs.class_count()) {
            throw DimensionMismatchError("cross_entropy: label exceeds class count");
        }
        sum += -std::log(std::max(probs.probs(static_cast<Eigen::Index>(i), y), 1e-300));
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

CrossEntropyGrad cross_entropy_grad(const ProbabilityMap& logits, const LabelMap& labels) {
    require_same_shape(logits.height, logits.width, labels.height, labels.width, "cross_entropy: shape mismatch");
    if (static_cast<std::size_t>(logits.probs.rows()) != labels.pixel_count()) {
        throw DimensionMismatchError("cross_entropy: logit rows differ from pixel count");
    }
    CrossEntropyGrad g;
    g.d_logits = Eigen::MatrixXd::Zero(logits.probs.rows(), logits.probs.cols());
    for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
        const std::uint8_t y = labels.labels[i];
        if (y == kIgnoreLabel) {
            continue;
        }
        if (y >= logits.class_count()) {
            throw DimensionMismatchError("cross_entropy: label exceeds class count");
        }
        const auto r = static_cast<Eigen::Index>(i);
        const double m = logits.probs.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (logits.probs.row(r).array() - m).exp().matrix();
        const double s = e.sum();
        g.loss += std::log(s) - (logits.probs(r, y) - m);
        g.d_logits.row(r) = e / s;
        g.d_logits(r, y) -= 1.0;
        ++g.count;
    }
    if (g.count > 0) {
        g.loss /= static_cast<double>(g.count);
        g.d_logits /= static_cast<double>(g.count);
    }
    return g;
}

PerturbConfig PipelineConfig::default_target_perturb() {
    PerturbConfig c;
    // Scaled to the 32 px toy images.
    c.elastic.grid_spacing = 8;
    c.elastic.sigma = 1.0;
    c.blur.sigma_max = 1.0;
    c.jitter.brightness = c.jitter.contrast = c.jitter.saturation = 0.05;
    return c;
}

void PipelineConfig::validate() const {
    if (stages < 1 || iterations < 1) {
        throw ConfigError("stages and iterations must be >= 1");
    }
    if (!(learning_rate > 0.0) || !(lr_power >= 0.0) || !(feature_lr_scale > 0.0)) {
        throw ConfigError("learning-rate settings must be positive");
    }
    if (weights.seg < 0.0 || weights.manifold < 0.0 || weights.triplet < 0.0 || weights.consistency < 0.0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (feature_dim < 1 || source_batch < 1 || target_batch < 1 || atom_count < 1 || hidden_dim < 1 ||
        kmeans_iters < 1 || sample_cap_factor < 1 || log_every < 1 || texture_subsample < 1) {
        throw ConfigError("size settings must be positive");
    }
    if (!(texture_prob >= 0.0 && texture_prob <= 1.0) || !(pca_energy > 0.0 && pca_energy <= 1.0) ||
        !(triplet.alpha >= 0.0)) {
        throw ConfigError("probability, energy or margin out of range");
    }
    gamma.validate();
    texture_params.validate();
    thresholds.validate();
    source_perturb.validate();
    target_perturb.validate();
}

void TrainingData::validate() const {
    if (class_count < 2) {
        throw ConfigError("class_count must be >= 2");
    }
    if (source_images.empty() || target_images.empty()) {
        throw EmptyDatasetError("training needs source and target images");
    }
    if (source_images.size() != source_labels.size() || eval_images.size() != eval_labels.size()) {
        throw DimensionMismatchError("every source/eval image needs a label map");
    }
    for (std::size_t i = 0; i < source_images.size(); ++i) {
        require_same_shape(source_images[i].height, source_images[i].width, source_labels[i].height,
                           source_labels[i].width, "source image and label shapes differ");
        source_labels[i].validate(class_count);
    }
    for (std::size_t i = 0; i < eval_images.size(); ++i) {
        require_same_shape(eval_images[i].height, eval_images[i].width, eval_labels[i].height,
                           eval_labels[i].width, "eval image and label shapes differ");
        eval_labels[i].validate(class_count);
    }
}

std::uint64_t fingerprint(const PseudoLabelMap& pl) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h = (h ^ b[i]) * 0x100000001b3ULL;
        }
    };
    mix(&pl.height, sizeof(pl.height));
    mix(&pl.width, sizeof(pl.width));
    mix(pl.labels.data(), pl.labels.size());
    mix(pl.confidence.data(), pl.confidence.size() * sizeof(double));
    return h;
}

EvalMetrics evaluate(const ToySegmenter& model, const std::vector<ImageRGB>& images,
                     const std::vector<LabelMap>& labels) {
    const int m = model.class_count();
    std::vector<double> inter(static_cast<std::size_t>(m), 0.0);
    std::vector<double> uni(static_cast<std::size_t>(m), 0.0);
    double correct = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < images.size(); ++k) {
        const PseudoLabelMap pred = pseudo_labels(predict(model, images[k]));
        for (std::size_t i = 0; i < pred.labels.size(); ++i) {
            const std::uint8_t y = labels[k].labels[i];
            if (y == kIgnoreLabel) {
                continue;
            }
            const std::uint8_t p = pred.labels[i];
            total += 1.0;
            if (p == y) {
                correct += 1.0;
                inter[y] += 1.0;
                uni[y] += 1.0;
            } else {
                uni[y] += 1.0;
                uni[p] += 1.0;
            }
        }
    }
    EvalMetrics out;
    out.accuracy = total > 0.0 ? correct / total : 0.0;
    double iou_sum = 0.0;
    int classes = 0;
    for (int c = 0; c < m; ++c) {
        if (uni[c] > 0.0) {
            iou_sum += inter[c] / uni[c];
            ++classes;
        }
    }
    out.miou = classes > 0 ? iou_sum / classes : 0.0;
    return out;
}

StageInputs prepare_stage(const ToySegmenter& previous, int stage, const TrainingData& data,
                          const PipelineConfig& cfg, std::optional<BilateralParams> texture) {
    StageInputs in;
    in.stage = stage;
    in.texture = texture;

    // Pseudo-labels come from the unperturbed target images only.
    for (const auto& img : data.target_images) {
        in.pseudo_labels.push_back(pseudo_labels(predict(previous, img)));
    }
    PseudoLabelMap pooled;
    for (const auto& pl : in.pseudo_labels) {
        pooled.labels.insert(pooled.labels.end(), pl.labels.begin(), pl.labels.end());
        pooled.confidence.insert(pooled.confidence.end(), pl.confidence.begin(), pl.confidence.end());
    }
    in.thresholds = category_thresholds(pooled, cfg.thresholds, data.class_count);

    // Source features on the photometrically aligned training distribution.
    std::vector<Eigen::MatrixXd> feats;
    std::vector<Eigen::MatrixXd> probs;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < data.source_images.size(); ++i) {
        Rng rng = stream(cfg.seed, kArtifactAlignStream, static_cast<std::uint64_t>(stage), i);
        const ForwardPass fp = forward(previous, aligned_source(data, cfg, i, rng));
        feats.push_back(fp.features);
        probs.push_back(row_softmax(fp.logits));
        labels.insert(labels.end(), data.source_labels[i].labels.begin(), data.source_labels[i].labels.end());
    }
    const Eigen::MatrixXd all_feats = vstack(feats);
    const Eigen::MatrixXd all_probs = vstack(probs);

    if (cfg.weights.triplet != 0.0) {
        in.centers = compute_category_centers(all_feats, labels, data.class_count);
    }
    if (cfg.weights.manifold != 0.0) {
        Rng rng = stream(cfg.seed, kPrepareStream, static_cast<std::uint64_t>(stage));
        std::size_t correct = 0;
        for (Eigen::Index i = 0; i < all_probs.rows(); ++i) {
            Eigen::Index arg;
            all_probs.row(i).maxCoeff(&arg);
            correct += labels[static_cast<std::size_t>(i)] != kIgnoreLabel && arg == labels[i] ? 1 : 0;
        }
        const std::size_t cap = static_cast<std::size_t>(cfg.sample_cap_factor) * cfg.atom_count;
        const std::size_t n = std::min(cap, correct);
        const FeatureMatrix X = sample_correct_features(all_feats, all_probs, labels, n, rng);
        PcaModel pca = fit_pca(X, cfg.pca_energy);
        const Eigen::MatrixXd reduced = pca_reduce_rows(X, pca);
        const Eigen::Index n_z = std::min<Eigen::Index>(cfg.atom_count, reduced.rows());
        AtomSet atoms = kmeans_atoms(reduced, n_z, rng, cfg.kmeans_iters);
        in.projector = make_projector(std::move(pca), std::move(atoms), cfg.hidden_dim, rng);
    }
    return in;
}

StageOutcome train_stage(const ToySegmenter& model, const StageInputs& inputs, const TrainingData& data,
                         const PipelineConfig& cfg) {
    const bool feature_stage = inputs.stage > 0;
    const LossWeights w = feature_stage ? cfg.weights : LossWeights{cfg.weights.seg, 0.0, 0.0, 0.0};
    const bool use_mfd = w.manifold != 0.0 && inputs.projector.has_value();
    const bool use_trip = w.triplet != 0.0 && inputs.centers.has_value() && inputs.centers->present_count() >= 2;
    const bool use_cst = w.consistency != 0.0 && inputs.thresholds.has_value() && !inputs.pseudo_labels.empty();
    const double base_lr = cfg.learning_rate * (feature_stage ? cfg.feature_lr_scale : 1.0);

    StageOutcome out;
    out.model = model;
    out.projector = inputs.projector;

    for (int step = 0; step < cfg.iterations; ++step) {
        Rng rng = stream(cfg.seed, kStepStream, static_cast<std::uint64_t>(inputs.stage),
                         static_cast<std::uint64_t>(step));
        StepRecord rec;
        rec.stage = inputs.stage;
        rec.step = step;
        rec.learning_rate = poly_lr(base_lr, cfg.lr_power, step, cfg.iterations);

        SegmenterGrad grad = SegmenterGrad::zeros_like(out.model);
        Eigen::MatrixXd d_w1;
        Eigen::MatrixXd d_w2;
        if (use_mfd) {
            d_w1 = Eigen::MatrixXd::Zero(out.projector->W1.rows(), out.projector->W1.cols());
            d_w2 = Eigen::MatrixXd::Zero(out.projector->W2.rows(), out.projector->W2.cols());
        }
        auto add_manifold = [&](const ForwardPass& fp, Eigen::MatrixXd& d_feat, double scale) {
            // Mean over pixels and feature coordinates; the raw sum grows with
            // the feature scale and swamps the segmentation term.
            const ManifoldGrad mg = manifold_loss_grad(fp.features, *out.projector);
            const double n = static_cast<double>(fp.features.rows() * fp.features.cols());
            rec.manifold += mg.loss / n * scale;
            d_feat += (w.manifold * scale / n) * mg.d_features;
            d_w1 += (w.manifold * scale / n) * mg.d_W1;
            d_w2 += (w.manifold * scale / n) * mg.d_W2;
        };

        const double src_scale = 1.0 / cfg.source_batch;
        for (int b = 0; b < cfg.source_batch; ++b) {
            const auto s = static_cast<std::size_t>(rng.below(data.source_images.size()));
            ImageRGB img = aligned_source(data, cfg, s, rng);
            if (feature_stage && cfg.use_gtexa && inputs.texture) {
                img = maybe_texture_align(img, *inputs.texture, cfg.texture_prob, rng);
            }
            img = perturb(img, cfg.source_perturb, rng).image;
            const ForwardPass fp = forward(out.model, img);
            const CrossEntropyGrad ce =
                cross_entropy_grad(as_map(fp.height, fp.width, fp.logits), data.source_labels[s]);
            rec.seg += ce.loss * src_scale;
            Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(fp.features.rows(), fp.features.cols());
            if (use_trip) {
                const TripletGrad tg =
                    triplet_loss_grad(fp.features, data.source_labels[s].labels, *inputs.centers, cfg.triplet);
                rec.triplet += tg.loss * src_scale;
                d_feat += (w.triplet * src_scale) * tg.d_features;
            }
            if (use_mfd) {
                add_manifold(fp, d_feat, src_scale);
            }
            const Eigen::MatrixXd d_logits = (w.seg * src_scale) * ce.d_logits;
            backward(out.model, fp, d_logits, &d_feat, grad);
        }

        if (use_cst || use_mfd) {
            const double tgt_scale = 1.0 / cfg.target_batch;
            for (int b = 0; b < cfg.target_batch; ++b) {
                const auto t = static_cast<std::size_t>(rng.below(data.target_images.size()));
                const Perturbation pert = perturb(data.target_images[t], cfg.target_perturb, rng);
                const ForwardPass fp = forward(out.model, pert.image);
                Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(fp.features.rows(), fp.features.cols());
                Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(fp.logits.rows(), fp.logits.cols());
                if (use_cst) {
                    const ConsistencyGrad cg = consistency_loss_grad(
                        inputs.pseudo_labels[t], *inputs.thresholds, as_map(fp.height, fp.width, fp.logits),
                        pert.warp);
                    rec.consistency_sum += cg.loss * tgt_scale;
                    rec.consistency_valid += cg.valid_count;
                    if (cg.valid_count > 0) {
                        const double inv = 1.0 / static_cast<double>(cg.valid_count);
                        rec.consistency += cg.loss * inv * tgt_scale;
                        d_logits += (w.consistency * inv * tgt_scale) * cg.d_logits;
                    }
                }
                if (use_mfd) {
                    add_manifold(fp, d_feat, tgt_scale);
                }
                backward(out.model, fp, d_logits, &d_feat, grad);
            }
        }

        rec.total = w.seg * rec.seg + w.manifold * rec.manifold + w.triplet * rec.triplet +
                    w.consistency * rec.consistency;
        out.model.feature_weights -= rec.learning_rate * grad.d_feature_weights;
        out.model.weights -= rec.learning_rate * grad.d_weights;
        if (use_mfd) {
            out.projector->W1 -= rec.learning_rate * d_w1;
            out.projector->W2 -= rec.learning_rate * d_w2;
        }
        if (!out.model.feature_weights.allFinite() || !out.model.weights.allFinite()) {
            throw InvariantViolation("training diverged at stage " + std::to_string(inputs.stage) + " step " +
                                     std::to_string(step));
        }
        out.steps.push_back(rec);
    }
    return out;
}

PipelineResult run_pipeline(const TrainingData& data, const PipelineConfig& cfg, const StageCallback& on_stage) {
    cfg.validate();
    data.validate();
    PipelineResult result;

    Rng init = stream(cfg.seed, kInitStream, 0);
    ToySegmenter model = make_segmenter(data.class_count, cfg.feature_dim, cfg.descriptor, init);

    std::optional<BilateralParams> texture;
    if (cfg.use_gtexa && cfg.stages > 1) {
        if (cfg.optimize_texture) {
            // Subsample both sides, then search the default grid once.
            Rng rng = stream(cfg.seed, kTextureStream, 0);
            auto pick = [&](const std::vector<ImageRGB>& pool) {
                std::vector<std::size_t> idx(pool.size());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    idx[i] = i;
                }
                const std::size_t n = std::min(idx.size(), static_cast<std::size_t>(cfg.texture_subsample));
                for (std::size_t i = 0; i < n; ++i) {
                    std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(idx.size() - i))]);
                }
                std::vector<ImageRGB> out;
                for (std::size_t i = 0; i < n; ++i) {
                    out.push_back(pool[idx[i]]);
                }
                return out;
            };
            std::vector<ImageRGB> src = pick(data.source_images);
            for (std::size_t i = 0; i < src.size(); ++i) {
                Rng arng = stream(cfg.seed, kTextureStream, 1, i);
                if (cfg.use_gpa) {
                    const auto ref = static_cast<std::size_t>(arng.below(data.target_images.size()));
                    src[i] = align_photometric(src[i], data.target_images[ref], cfg.gamma).image;
                }
            }
            result.texture = optimize_filter_params(src, pick(data.target_images), default_filter_grid());
            texture = result.texture->params;
        } else {
            texture = cfg.texture_params;
        }
    }

    for (int stage = 0; stage < cfg.stages; ++stage) {
        StageInputs inputs;
        inputs.stage = 0;
        if (stage > 0) {
            inputs = prepare_stage(model, stage, data, cfg, texture);
        }
        std::vector<std::uint64_t> frozen;
        for (const auto& pl : inputs.pseudo_labels) {
            frozen.push_back(fingerprint(pl));
        }

        StageOutcome outcome = train_stage(model, inputs, data, cfg);

        StageMetrics m;
        m.stage = stage;
        // The previous-stage model is untouched, so its pseudo-labels must
        // reproduce exactly.
        for (std::size_t i = 0; i < inputs.pseudo_labels.size(); ++i) {
            if (fingerprint(inputs.pseudo_labels[i]) != frozen[i] ||
                fingerprint(pseudo_labels(predict(model, data.target_images[i]))) != frozen[i]) {
                m.pseudo_labels_frozen = false;
            }
        }
        if (!m.pseudo_labels_frozen) {
            throw InvariantViolation("pseudo-labels changed during stage " + std::to_string(stage));
        }
        if (inputs.thresholds) {
            for (const auto& pl : inputs.pseudo_labels) {
                const auto mask = valid_mask(pl, *inputs.thresholds);
                m.pseudo_valid_pixels += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
            }
        }
        if (inputs.projector) {
            m.reduced_dim = inputs.projector->pca.reduced_dim();
            m.explained_ratio = inputs.projector->pca.explained_ratio;
        }
        model = std::move(outcome.model);
        const EvalMetrics ev = evaluate(model, data.eval_images, data.eval_labels);
        m.target_accuracy = ev.accuracy;
        m.target_miou = ev.miou;
        m.source_accuracy = evaluate(model, data.source_images, data.source_labels).accuracy;
        m.final_total_loss = outcome.steps.empty() ? 0.0 : outcome.steps.back().total;

        if (stage > 0) {
            StageArtifact art;
            if (outcome.projector) {
                art.pca = outcome.projector->pca;
                art.atoms = outcome.projector->atoms;
                art.projector = outcome.projector;
            }
            art.centers = inputs.centers;
            art.thresholds = inputs.thresholds;
            result.artifact = std::move(art);
        }
        if (on_stage) {
            on_stage(m, outcome.steps);
        }
        result.stages.push_back(m);
        result.steps.insert(result.steps.end(), outcome.steps.begin(), outcome.steps.end());
    }
    result.model = std::move(model);
    return result;
}

}  // namespace domalign
