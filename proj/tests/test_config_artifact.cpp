#include <doctest.h>

#include <fstream>

#include "domalign/artifact.hpp"
#include "domalign/config.hpp"
#include "domalign/errors.hpp"
#include "domalign/imgio.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace domalign;
using nlohmann::json;
using testutil::TempDir;

TEST_CASE("config: defaults round trip") {
    const ToyAdaptConfig def;
    const json j = to_json(def);
    const ToyAdaptConfig back = toy_adapt_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(j.dump() == to_json(back).dump());
}

TEST_CASE("config: partial documents override defaults") {
    const json j = json::parse(R"({
        "pipeline": {"stages": 2, "iterations": 7, "weights": {"triplet": 0.5},
                     "target_perturb": {"elastic": {"grid_spacing": 4}}, "seed": 9},
        "data": {"synthetic": {"class_count": 3, "chroma_shift": [0.1, 0.0, -0.1]}}
    })");
    const ToyAdaptConfig c = toy_adapt_config_from_json(j);
    CHECK(c.pipeline.stages == 2);
    CHECK(c.pipeline.iterations == 7);
    CHECK(c.pipeline.weights.triplet == 0.5);
    CHECK(c.pipeline.weights.manifold == 1.0);
    CHECK(c.pipeline.target_perturb.elastic.grid_spacing == 4);
    CHECK(c.pipeline.target_perturb.elastic.sigma == PipelineConfig{}.target_perturb.elastic.sigma);
    CHECK(c.pipeline.seed == 9);
    CHECK(c.data.synthetic.class_count == 3);
    CHECK(c.data.synthetic.chroma_shift[2] == -0.1);
}

TEST_CASE("config: rejected documents") {
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"({"pipline": {}})")), ConfigError);
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"({"pipeline": {"weights": {"mfd": 1}}})")),
                    ConfigError);
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"({"pipeline": {"stages": "three"}})")), ConfigError);
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"({"pipeline": {"stages": 0}})")), ConfigError);
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"([1, 2])")), ConfigError);
    CHECK_THROWS_AS(toy_adapt_config_from_json(json::parse(R"({"data": {"source_dir": "a"}})")), ConfigError);

    TempDir dir("cfg");
    CHECK_THROWS_AS(load_toy_adapt_config(dir / "missing.json"), ConfigError);
    {
        std::ofstream out(dir / "bad.json");
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_toy_adapt_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("config: training data from directories") {
    TempDir dir("data");
    SyntheticDomainSpec spec;
    spec.height = spec.width = 8;
    spec.source_count = 3;
    spec.target_count = 2;
    spec.eval_count = 2;
    const SyntheticDomains d = generate_synthetic_domains(spec);
    for (const char* sub : {"src", "tgt", "eval"}) {
        fs::create_directories(dir / sub);
    }
    auto name = [](int i) { return "img" + std::to_string(i); };
    for (int i = 0; i < 3; ++i) {
        save_image(d.source_images[i], dir / ("src/" + name(i) + ".png"));
        save_label_map(d.source_labels[i], dir / ("src/" + name(i) + "_label.png"));
    }
    for (int i = 0; i < 2; ++i) {
        save_image(d.target_images[i], dir / ("tgt/" + name(i) + ".png"));
        save_image(d.eval_images[i], dir / ("eval/" + name(i) + ".png"));
        save_label_map(d.eval_labels[i], dir / ("eval/" + name(i) + "_label.png"));
    }
    DataConfig dc;
    dc.source_dir = (dir / "src").string();
    dc.target_dir = (dir / "tgt").string();
    dc.eval_dir = (dir / "eval").string();
    dc.synthetic.class_count = spec.class_count;
    const TrainingData td = load_training_data(dc);
    CHECK(td.source_images.size() == 3);
    CHECK(td.target_images.size() == 2);
    CHECK(td.eval_labels[1].labels == d.eval_labels[1].labels);
    CHECK_NOTHROW(td.validate());

    fs::remove(dir / "src/img1_label.png");
    CHECK_THROWS_AS(load_training_data(dc), IoError);

    const TrainingData syn = load_training_data(DataConfig{});
    CHECK(syn.source_images.size() == static_cast<std::size_t>(SyntheticDomainSpec{}.source_count));
}

TEST_CASE("artifact: save and load preserve every field") {
    Rng rng(4);
    StageArtifact a;
    const ManifoldProjector p = oracle::random_projector(6, 3, 4, 5, rng);
    a.pca = p.pca;
    a.atoms = p.atoms;
    a.atoms->inertia_history = {3.0, 2.0, 1.5};
    a.atoms->inertia = 1.5;
    a.projector = p;
    a.projector->atoms = *a.atoms;
    a.centers = CategoryCenters{oracle::random_matrix(3, 6, rng), {true, false, true}};
    a.thresholds = CategoryThresholds{{0.7, 0.9, 0.8}, {0.7, 0.9, 0.95}, {10, 0, 4}, 0.9};

    TempDir dir("art");
    save_artifact(a, dir / "a.json");
    const StageArtifact b = load_artifact(dir / "a.json");
    REQUIRE(b.pca.has_value());
    CHECK(b.pca->components == a.pca->components);
    CHECK(b.pca->mean == a.pca->mean);
    CHECK(b.pca->explained_ratio == a.pca->explained_ratio);
    CHECK(b.atoms->atoms == a.atoms->atoms);
    CHECK(b.atoms->inertia_history == a.atoms->inertia_history);
    CHECK(b.projector->W1 == a.projector->W1);
    CHECK(b.projector->W2 == a.projector->W2);
    CHECK(b.centers->centers == a.centers->centers);
    CHECK(b.centers->present == a.centers->present);
    CHECK(b.thresholds->threshold == a.thresholds->threshold);
    CHECK(b.thresholds->pixel_count == a.thresholds->pixel_count);
    // A second save is byte-identical.
    save_artifact(b, dir / "b.json");
    CHECK(testutil::read_bytes(dir / "a.json") == testutil::read_bytes(dir / "b.json"));

    const StageArtifact empty = artifact_from_json(to_json(StageArtifact{}));
    CHECK_FALSE(empty.pca.has_value());
    CHECK_FALSE(empty.thresholds.has_value());

    json bad = to_json(a);
    bad["format"] = "something-else";
    CHECK_THROWS(artifact_from_json(bad));
}
