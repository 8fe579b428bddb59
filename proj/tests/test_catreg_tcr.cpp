#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "domalign/catreg.hpp"
#include "domalign/errors.hpp"
#include "domalign/tcr.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace domalign;

namespace {

std::vector<std::uint8_t> random_labels(std::size_t n, int m, Rng& rng, double ignore = 0.0) {
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) {
        v = rng.uniform() < ignore ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(m)));
    }
    return y;
}

// Every class present at least once.
std::vector<std::uint8_t> covering_labels(std::size_t n, int m, Rng& rng) {
    auto y = random_labels(n, m, rng);
    for (int c = 0; c < m && static_cast<std::size_t>(c) < n; ++c) {
        y[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(c);
    }
    return y;
}

// Distance from the hinge kink and from a tie in the hardest negative.
double kink_distance(const Eigen::MatrixXd& F, const std::vector<std::uint8_t>& y, const CategoryCenters& C,
                     double alpha) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
        if (y[i] == kIgnoreLabel) {
            continue;
        }
        const Eigen::VectorXd g = F.row(i).normalized().transpose();
        std::vector<double> neg;
        for (int c = 0; c < C.class_count(); ++c) {
            if (c != y[i] && C.present[c]) {
                neg.push_back((g - C.centers.row(c).transpose()).norm());
            }
        }
        std::sort(neg.begin(), neg.end());
        const double dp = (g - C.centers.row(y[i]).transpose()).norm();
        best = std::min(best, std::abs(dp - neg[0] + alpha));
        if (neg.size() > 1) {
            best = std::min(best, neg[1] - neg[0]);
        }
        best = std::min(best, dp);
    }
    return best;
}

PseudoLabelMap make_pl(int h, int w, const std::vector<std::uint8_t>& labels, const std::vector<double>& conf) {
    return PseudoLabelMap{h, w, labels, conf};
}

}  // namespace

TEST_CASE("catreg: category centers") {
    Rng rng(1);
    Eigen::MatrixXd one(1, 3);
    one << 3.0, 0.0, 4.0;
    const std::vector<std::uint8_t> y1{0};
    const CategoryCenters c1 = compute_category_centers(one, y1, 2);
    CHECK(c1.present[0]);
    CHECK_FALSE(c1.present[1]);
    CHECK((c1.centers.row(0) - Eigen::RowVector3d(0.6, 0.0, 0.8)).cwiseAbs().maxCoeff() <= 1e-15);

    Eigen::MatrixXd two(2, 2);
    two << 1, 0, 0, 1;
    const std::vector<std::uint8_t> y2{0, 0};
    const CategoryCenters c2 = compute_category_centers(two, y2, 1);
    CHECK(c2.centers(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(c2.centers(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));

    for (int t = 0; t < 30; ++t) {
        const int m = 2 + static_cast<int>(rng.below(3));
        const Eigen::MatrixXd F = oracle::random_matrix(1 + static_cast<Eigen::Index>(rng.below(16)), 5, rng);
        const auto y = random_labels(static_cast<std::size_t>(F.rows()), m, rng, 0.2);
        if (std::all_of(y.begin(), y.end(), [](std::uint8_t v) { return v == kIgnoreLabel; })) {
            CHECK_THROWS_AS(compute_category_centers(F, y, m), AllClassesAbsentError);
            continue;
        }
        const CategoryCenters c = compute_category_centers(F, y, m);
        const oracle::Centers o = oracle::centers(F, y, m);
        for (int k = 0; k < m; ++k) {
            CHECK(c.present[k] == o.present[k]);
            for (Eigen::Index d = 0; d < F.cols(); ++d) {
                CHECK(std::abs(c.centers(k, d) - o.c[k][d]) <= 1e-10);
            }
        }
    }
    const std::vector<std::uint8_t> bad{7};
    CHECK_THROWS_AS(compute_category_centers(one, bad, 2), FormatError);
}

TEST_CASE("catreg: triplet loss analytic cases") {
    Eigen::MatrixXd C(2, 2);
    C << 1, 0, -1, 0;
    const CategoryCenters centers{C, {true, true}};
    Eigen::MatrixXd at_center(1, 2);
    at_center << 2.5, 0.0;
    const std::vector<std::uint8_t> y{0};
    CHECK(triplet_loss(at_center, y, centers, {0.2}) == 0.0);

    Eigen::MatrixXd equidistant(1, 2);
    equidistant << 0.0, 1.0;
    CHECK(triplet_loss(equidistant, y, centers, {0.2}) == doctest::Approx(0.2).epsilon(1e-15));

    const TripletGrad g = triplet_loss_grad(at_center, y, centers, {0.2});
    CHECK(g.active == 0);
    CHECK(g.d_features.cwiseAbs().maxCoeff() == 0.0);

    const CategoryCenters lonely{C, {true, false}};
    CHECK_THROWS_AS(triplet_loss(at_center, y, lonely, {0.2}), SingleClassError);
    const std::vector<std::uint8_t> y1{1};
    Eigen::MatrixXd C3(3, 2);
    C3 << 1, 0, -1, 0, 0, 1;
    const CategoryCenters missing{C3, {true, false, true}};
    CHECK_THROWS_AS(triplet_loss(at_center, y1, missing, {0.2}), MissingCenterError);
}

TEST_CASE("catreg: triplet loss matches the exhaustive scalar computation") {
    Rng rng(2);
    for (int t = 0; t < 30; ++t) {
        const int m = 4;
        const Eigen::MatrixXd F = oracle::random_matrix(64, 8, rng);
        const auto y = covering_labels(64, m, rng);
        const CategoryCenters c = compute_category_centers(oracle::random_matrix(40, 8, rng), covering_labels(40, m, rng), m);
        const oracle::Centers oc{[&] {
                                     std::vector<std::vector<double>> v;
                                     for (int k = 0; k < m; ++k) {
                                         v.push_back(oracle::row(c.centers, k));
                                     }
                                     return v;
                                 }(),
                                 c.present};
        const double alpha = rng.uniform(0.0, 1.0);
        CHECK(std::abs(triplet_loss(F, y, c, {alpha}) - oracle::triplet(F, y, oc, alpha)) <= 1e-10);
    }
}

TEST_CASE("catreg: triplet gradient") {
    Rng rng(3);
    int checked = 0;
    for (int t = 0; t < 60 && checked < 20; ++t) {
        const int m = 3;
        Eigen::MatrixXd F = oracle::random_matrix(6, 5, rng);
        const auto y = covering_labels(6, m, rng);
        const CategoryCenters c = compute_category_centers(oracle::random_matrix(30, 5, rng), covering_labels(30, m, rng), m);
        const TripletConfig cfg{0.5};
        const TripletGrad g = triplet_loss_grad(F, y, c, cfg);
        // Scale invariance of G makes the gradient orthogonal to each feature.
        for (Eigen::Index i = 0; i < F.rows(); ++i) {
            CHECK(std::abs(g.d_features.row(i).dot(F.row(i))) <= 1e-8);
        }
        if (kink_distance(F, y, c, cfg.alpha) < 1e-3) {
            continue;
        }
        ++checked;
        CHECK(oracle::fd_rel_error(F, g.d_features, [&] { return triplet_loss(F, y, c, cfg); }) <= 1e-4);
    }
    CHECK(checked == 20);
}

TEST_CASE("tcr: pseudo-labels") {
    Rng rng(4);
    Eigen::MatrixXd hot = Eigen::MatrixXd::Zero(3, 4);
    hot(0, 2) = hot(1, 0) = hot(2, 3) = 1.0;
    const PseudoLabelMap a = pseudo_labels({1, 3, hot});
    CHECK(a.labels == std::vector<std::uint8_t>{2, 0, 3});
    CHECK(a.confidence == std::vector<double>{1.0, 1.0, 1.0});

    const PseudoLabelMap u = pseudo_labels({1, 2, Eigen::MatrixXd::Constant(2, 4, 0.25)});
    CHECK(u.labels == std::vector<std::uint8_t>{0, 0});
    CHECK(u.confidence[0] == 0.25);

    for (int t = 0; t < 30; ++t) {
        const Eigen::MatrixXd P = oracle::random_probs(16, 4, rng);
        const PseudoLabelMap pl = pseudo_labels({4, 4, P});
        const oracle::Pseudo o = oracle::pseudo(P);
        for (int i = 0; i < 16; ++i) {
            CHECK(pl.labels[i] == o.label[i]);
            CHECK(pl.confidence[i] == o.conf[i]);
        }
    }
}

TEST_CASE("tcr: category thresholds") {
    const std::vector<double> conf{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    const PseudoLabelMap ten = make_pl(1, 10, std::vector<std::uint8_t>(10, 0), conf);
    const CategoryThresholds t = category_thresholds(ten, {0.9, 10.0}, 2);
    CHECK(t.percentile[0] == 1.0);
    CHECK(t.threshold[0] == 0.9);
    CHECK(t.threshold[1] == 0.9);
    CHECK(t.pixel_count[1] == 0);

    const PseudoLabelMap half = make_pl(1, 5, std::vector<std::uint8_t>(5, 1), std::vector<double>(5, 0.5));
    const CategoryThresholds th = category_thresholds(half, {0.9, 10.0}, 2);
    CHECK(th.threshold[1] == 0.5);
    const auto mask = valid_mask(half, th);
    CHECK(std::all_of(mask.begin(), mask.end(), [](bool b) { return b; }));

    Rng rng(5);
    for (int t2 = 0; t2 < 200; ++t2) {
        const int m = 2 + static_cast<int>(rng.below(3));
        const std::size_t n = 1 + rng.below(16);
        std::vector<std::uint8_t> labels = random_labels(n, m, rng);
        std::vector<double> c(n);
        for (auto& v : c) {
            // Coarse values so ties are common.
            v = rng.below(5) == 0 ? 0.5 : rng.uniform(1.0 / m, 1.0);
        }
        const double p = rng.uniform(1.0, 100.0);
        const double cap = rng.uniform(0.3, 1.0);
        const PseudoLabelMap pl = make_pl(1, static_cast<int>(n), labels, c);
        const CategoryThresholds got = category_thresholds(pl, {cap, p}, m);
        const std::vector<int> li(labels.begin(), labels.end());
        const auto want = oracle::thresholds(li, c, m, cap, p);
        for (int k = 0; k < m; ++k) {
            CHECK(std::abs(got.threshold[k] - want[k]) <= 1e-10);
            CHECK(got.threshold[k] <= cap);
            std::size_t total = 0;
            std::size_t valid = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (labels[i] == k) {
                    ++total;
                    valid += c[i] >= got.threshold[k] ? 1 : 0;
                }
            }
            if (total > 0) {
                CHECK(static_cast<double>(valid) >= p / 100.0 * static_cast<double>(total) - 1e-9);
            }
        }
    }
    CHECK_THROWS_AS(category_thresholds(ten, {1.5, 10.0}, 2), ConfigError);
    CHECK_THROWS_AS(category_thresholds(ten, {0.9, 0.0}, 2), ConfigError);
}

TEST_CASE("tcr: perturbation") {
    Rng rng(6);
    const ImageRGB img = testutil::random_image(12, 12, rng);
    Rng r0(1);
    const Perturbation none = perturb(img, PerturbConfig::none(), r0);
    CHECK(none.image.data == img.data);
    CHECK(none.warp.empty());

    DisplacementField zero{12, 12, Plane(12, 12), Plane(12, 12)};
    const ImageRGB same = warp_image(img, zero);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        CHECK(std::abs(same.data[i] - img.data[i]) <= 1e-6);
    }
    PerturbConfig still = PerturbConfig::none();
    still.elastic.enabled = true;
    still.elastic.sigma = 0.0;
    Rng r1(2);
    CHECK(perturb(img, still, r1).image.data == img.data);

    PerturbConfig full;
    full.elastic.grid_spacing = 4;
    full.elastic.sigma = 1.0;
    Rng a(9);
    Rng b(9);
    const Perturbation pa = perturb(img, full, a);
    const Perturbation pb = perturb(img, full, b);
    CHECK(pa.image.data == pb.image.data);
    CHECK(std::all_of(pa.image.data.begin(), pa.image.data.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));

    // Integer shifts move pseudo-labels with the image.
    DisplacementField shift{4, 4, Plane(4, 4, 1.0), Plane(4, 4, 0.0)};
    std::vector<std::uint8_t> lab(16);
    for (int i = 0; i < 16; ++i) {
        lab[i] = static_cast<std::uint8_t>(i % 4);
    }
    const PseudoLabelMap moved = warp_pseudo_labels(make_pl(4, 4, lab, std::vector<double>(16, 1.0)), shift);
    CHECK(moved.labels[0] == 1);
    CHECK(moved.labels[3] == 3);
    CHECK_THROWS_AS(warp_pseudo_labels(make_pl(2, 2, {0, 0, 0, 0}, {1, 1, 1, 1}), shift), WarpMismatchError);

    PerturbConfig bad;
    bad.jitter.brightness = 2.0;
    CHECK_THROWS_AS(perturb(img, bad, rng), ConfigError);
}

TEST_CASE("tcr: consistency loss") {
    Rng rng(7);
    SUBCASE("one-hot agreement gives zero loss") {
        const Eigen::MatrixXd P = oracle::random_probs(16, 3, rng);
        const PseudoLabelMap pl = pseudo_labels({4, 4, P});
        const CategoryThresholds t = category_thresholds(pl, {0.9, 10.0}, 3);
        Eigen::MatrixXd hot = Eigen::MatrixXd::Zero(16, 3);
        for (int i = 0; i < 16; ++i) {
            hot(i, pl.labels[i]) = 1.0;
        }
        const ConsistencyLoss l = consistency_loss(pl, t, {4, 4, hot});
        CHECK(l.loss == 0.0);
        CHECK(l.valid_count > 0);
    }
    SUBCASE("fully masked") {
        const PseudoLabelMap pl = make_pl(2, 2, {0, 1, 0, 1}, {0.3, 0.3, 0.3, 0.3});
        CategoryThresholds t{{0.9, 0.9}, {0.9, 0.9}, {2, 2}, 0.9};
        const ProbabilityMap logits{2, 2, oracle::random_matrix(4, 2, rng)};
        const ConsistencyLoss l = consistency_loss(pl, t, softmax_map(logits));
        CHECK(l.loss == 0.0);
        CHECK(l.valid_count == 0);
        const ConsistencyGrad g = consistency_loss_grad(pl, t, logits);
        CHECK(g.d_logits.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("matches the masked scalar sum") {
        for (int t2 = 0; t2 < 30; ++t2) {
            const PseudoLabelMap pl = pseudo_labels({4, 4, oracle::random_probs(16, 3, rng, 1.0)});
            const CategoryThresholds t = category_thresholds(pl, {rng.uniform(0.4, 0.9), 30.0}, 3);
            const Eigen::MatrixXd Q = oracle::random_probs(16, 3, rng);
            const std::vector<int> li(pl.labels.begin(), pl.labels.end());
            const double want = oracle::consistency(li, pl.confidence, t.threshold, Q);
            CHECK(std::abs(consistency_loss(pl, t, {4, 4, Q}).loss - want) <= 1e-10);
        }
    }
    SUBCASE("gradient") {
        for (int t2 = 0; t2 < 20; ++t2) {
            const PseudoLabelMap pl = pseudo_labels({4, 4, oracle::random_probs(16, 3, rng, 1.0)});
            const CategoryThresholds t = category_thresholds(pl, {0.6, 30.0}, 3);
            ProbabilityMap logits{4, 4, oracle::random_matrix(16, 3, rng, 2.0)};
            const ConsistencyGrad g = consistency_loss_grad(pl, t, logits);
            CHECK(g.loss == doctest::Approx(consistency_loss(pl, t, softmax_map(logits)).loss).epsilon(1e-12));
            CHECK(oracle::fd_rel_error(logits.probs, g.d_logits,
                                       [&] { return consistency_loss_grad(pl, t, logits).loss; }) <= 1e-4);
            for (Eigen::Index i = 0; i < 16; ++i) {
                CHECK(std::abs(g.d_logits.row(i).sum()) <= 1e-12);
            }
        }
    }
    SUBCASE("warped labels") {
        const PseudoLabelMap pl = pseudo_labels({4, 4, oracle::random_probs(16, 3, rng)});
        const CategoryThresholds t = category_thresholds(pl, {0.9, 10.0}, 3);
        DisplacementField f{4, 4, Plane(4, 4, 1.0), Plane(4, 4, 1.0)};
        const Eigen::MatrixXd Q = oracle::random_probs(16, 3, rng);
        const ConsistencyLoss direct = consistency_loss(warp_pseudo_labels(pl, f), t, {4, 4, Q});
        const ConsistencyLoss via = consistency_loss(pl, t, {4, 4, Q}, f);
        CHECK(direct.loss == via.loss);
        CHECK_THROWS_AS(consistency_loss(pl, t, {2, 8, Q}), WarpMismatchError);
    }
}
