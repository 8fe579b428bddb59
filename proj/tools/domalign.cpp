// domalign command-line front end.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "domalign/artifact.hpp"
#include "domalign/colorspace.hpp"
#include "domalign/config.hpp"
#include "domalign/errors.hpp"
#include "domalign/gpa.hpp"
#include "domalign/gtexa.hpp"
#include "domalign/imgio.hpp"
#include "domalign/parallel.hpp"
#include "domalign/rng.hpp"
#include "domalign/toytrain.hpp"

namespace da = domalign;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

// Usage problems detected after parsing (bad values, missing inputs).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw da::IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw da::IoError("write failed: " + path.string());
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw da::IoError("cannot create output directory " + dir.string());
    }
}

void require_dir(const fs::path& dir, const char* what) {
    if (!fs::is_directory(dir)) {
        throw UsageError(std::string(what) + " directory not found: " + dir.string());
    }
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ---- align ----------------------------------------------------------------

struct AlignOptions {
    std::string source;
    std::string target;
    std::string out;
    std::string label_suffix = "_label.png";
    std::string format = "png";
    double beta = 0.01;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool texture = false;
    da::BilateralParams texture_params;
    double texture_prob = 0.5;
    bool timing = false;
};

struct AlignItem {
    da::ImageRGB image;
    std::size_t reference = 0;
    da::GammaResult gamma;
    bool textured = false;
    double seconds = 0.0;
};

int run_align(const AlignOptions& o) {
    require_dir(o.source, "source");
    require_dir(o.target, "target");
    if (o.format != "png" && o.format != "ppm") {
        throw UsageError("--format must be png or ppm");
    }
    da::GammaSolveConfig gcfg;
    gcfg.beta = o.beta;
    gcfg.validate();
    if (o.texture) {
        o.texture_params.validate();
    }
    const da::DatasetManifest m = da::scan_dataset(o.source, o.target, o.label_suffix);

    std::vector<da::ImageRGB> refs(m.target_entries.size());
    da::parallel_for(refs.size(), o.jobs, [&](std::size_t i) { refs[i] = da::load_image(m.target_entries[i]); });

    std::vector<AlignItem> items(m.source_entries.size());
    da::parallel_for(items.size(), o.jobs, [&](std::size_t i) {
        const auto t0 = std::chrono::steady_clock::now();
        da::Rng rng(da::derive_seed(o.seed, i));
        AlignItem& it = items[i];
        it.reference = static_cast<std::size_t>(rng.below(refs.size()));
        da::PhotometricAlignment a = da::align_photometric(da::load_image(m.source_entries[i].image),
                                                           refs[it.reference], gcfg);
        it.gamma = std::move(a.gamma);
        it.image = std::move(a.image);
        if (o.texture) {
            const double u = rng.uniform();
            it.textured = u < o.texture_prob;
            if (it.textured) {
                it.image = da::bilateral_filter(it.image, o.texture_params);
            }
        }
        it.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    // Everything is computed before the first byte is written.
    prepare_out_dir(o.out);
    json report = {{"command", "align"},
                   {"seed", o.seed},
                   {"beta", o.beta},
                   {"texture", o.texture ? da::to_json(o.texture_params) : json(nullptr)},
                   {"texture_prob", o.texture ? json(o.texture_prob) : json(nullptr)}};
    json images = json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
        const AlignItem& it = items[i];
        const fs::path src = m.source_entries[i].image;
        const std::string name = src.stem().string() + "." + o.format;
        da::save_image(it.image, fs::path(o.out) / name);
        json e = {{"source", src.filename().string()},
                  {"reference", m.target_entries[it.reference].filename().string()},
                  {"output", name},
                  {"gamma", it.gamma.gamma},
                  {"objective", it.gamma.objective},
                  {"iterations", it.gamma.iterations},
                  {"used_fallback", it.gamma.used_fallback},
                  {"texture_applied", it.textured}};
        if (o.timing) {
            e["seconds"] = it.seconds;
        }
        images.push_back(std::move(e));
    }
    report["images"] = std::move(images);
    write_json(fs::path(o.out) / "align_report.json", report);
    return kExitOk;
}

// ---- texture-opt ------------------------------------------------------------

struct TextureOptions {
    std::string source;
    std::string target;
    std::string out;
    std::string label_suffix = "_label.png";
    std::vector<int> d;
    std::vector<double> sigma_c;
    std::vector<double> sigma_s;
    bool no_identity = false;
    int jobs = 1;
};

int run_texture_opt(const TextureOptions& o) {
    require_dir(o.source, "source");
    require_dir(o.target, "target");
    std::vector<da::BilateralParams> grid;
    if (o.d.empty() && o.sigma_c.empty() && o.sigma_s.empty()) {
        grid = da::default_filter_grid();
        if (o.no_identity) {
            grid.erase(grid.begin());
        }
    } else {
        if (o.d.empty() || o.sigma_c.empty() || o.sigma_s.empty()) {
            throw UsageError("--d, --sigma-c and --sigma-s must be given together");
        }
        if (!o.no_identity) {
            grid.push_back(da::BilateralParams::identity());
        }
        for (int d : o.d) {
            for (double c : o.sigma_c) {
                for (double s : o.sigma_s) {
                    grid.push_back({d, c, s});
                }
            }
        }
    }
    for (const auto& p : grid) {
        p.validate();
    }
    const da::DatasetManifest m = da::scan_dataset(o.source, o.target, o.label_suffix);
    std::vector<da::ImageRGB> src(m.source_entries.size());
    std::vector<da::ImageRGB> ref(m.target_entries.size());
    da::parallel_for(src.size(), o.jobs, [&](std::size_t i) { src[i] = da::load_image(m.source_entries[i].image); });
    da::parallel_for(ref.size(), o.jobs, [&](std::size_t i) { ref[i] = da::load_image(m.target_entries[i]); });

    const da::TextureAlignReport r = da::optimize_filter_params(src, ref, grid, o.jobs);
    json table = json::array();
    for (const auto& g : r.table) {
        json e = da::to_json(g.params);
        e["kl"] = g.kl;
        table.push_back(std::move(e));
    }
    const json report = {{"command", "texture-opt"},
                         {"params", da::to_json(r.params)},
                         {"identity", r.params.is_identity()},
                         {"kl_before", r.kl_before},
                         {"kl_after", r.kl_after},
                         {"grid_evaluated", r.grid_evaluated},
                         {"table", table}};
    const fs::path out(o.out);
    if (out.has_parent_path()) {
        prepare_out_dir(out.parent_path());
    }
    write_json(out, report);
    return kExitOk;
}

// ---- toy-adapt / build-artifacts -------------------------------------------------

struct ToyOptions {
    std::string config;
    std::string out;
    std::optional<int> stages;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    bool print_config = false;
};

da::ToyAdaptConfig effective_config(const ToyOptions& o) {
    da::ToyAdaptConfig c;
    if (!o.config.empty()) {
        c = da::load_toy_adapt_config(o.config);
    }
    if (o.stages) {
        c.pipeline.stages = *o.stages;
    }
    if (o.iterations) {
        c.pipeline.iterations = *o.iterations;
    }
    if (o.seed) {
        c.pipeline.seed = *o.seed;
    }
    c.validate();
    return c;
}

json step_json(const da::StepRecord& s) {
    return {{"type", "step"},
            {"stage", s.stage},
            {"step", s.step},
            {"learning_rate", s.learning_rate},
            {"total", s.total},
            {"seg", s.seg},
            {"manifold", s.manifold},
            {"triplet", s.triplet},
            {"consistency", s.consistency},
            {"consistency_sum", s.consistency_sum},
            {"consistency_valid", s.consistency_valid}};
}

json stage_json(const da::StageMetrics& m) {
    return {{"type", "stage"},
            {"stage", m.stage},
            {"target_accuracy", m.target_accuracy},
            {"target_miou", m.target_miou},
            {"source_accuracy", m.source_accuracy},
            {"final_total_loss", m.final_total_loss},
            {"pseudo_labels_frozen", m.pseudo_labels_frozen},
            {"pseudo_valid_pixels", m.pseudo_valid_pixels},
            {"reduced_dim", m.reduced_dim},
            {"explained_ratio", m.explained_ratio}};
}

int run_toy_adapt(const ToyOptions& o) {
    const da::ToyAdaptConfig cfg = effective_config(o);
    if (o.print_config) {
        std::cout << da::to_json(cfg).dump(2) << "\n";
        return kExitOk;
    }
    if (o.out.empty()) {
        throw UsageError("--out is required");
    }
    const da::TrainingData data = da::load_training_data(cfg.data);
    std::ostringstream jsonl;
    const int every = cfg.pipeline.log_every;
    const da::PipelineResult r =
        da::run_pipeline(data, cfg.pipeline, [&](const da::StageMetrics& m, const std::vector<da::StepRecord>& steps) {
            for (const auto& s : steps) {
                if (s.step % every == 0 || s.step + 1 == static_cast<int>(steps.size())) {
                    jsonl << step_json(s).dump() << "\n";
                }
            }
            jsonl << stage_json(m).dump() << "\n";
        });

    std::ostringstream csv;
    csv << "stage,target_accuracy,target_miou,source_accuracy,final_total_loss,pseudo_valid_pixels,reduced_dim,"
           "explained_ratio\n";
    for (const auto& m : r.stages) {
        csv << m.stage << "," << fmt_double(m.target_accuracy) << "," << fmt_double(m.target_miou) << ","
            << fmt_double(m.source_accuracy) << "," << fmt_double(m.final_total_loss) << "," << m.pseudo_valid_pixels
            << "," << m.reduced_dim << "," << fmt_double(m.explained_ratio) << "\n";
    }

    prepare_out_dir(o.out);
    const fs::path out(o.out);
    write_json(out / "config.json", da::to_json(cfg));
    write_text(out / "metrics.jsonl", jsonl.str());
    write_text(out / "summary.csv", csv.str());
    if (r.texture) {
        json table = json::array();
        for (const auto& g : r.texture->table) {
            json e = da::to_json(g.params);
            e["kl"] = g.kl;
            table.push_back(std::move(e));
        }
        write_json(out / "texture.json", {{"params", da::to_json(r.texture->params)},
                                          {"kl_before", r.texture->kl_before},
                                          {"kl_after", r.texture->kl_after},
                                          {"table", table}});
    }
    if (r.artifact) {
        da::save_artifact(*r.artifact, out / "artifact.json");
    }
    return kExitOk;
}

int run_build_artifacts(const ToyOptions& o) {
    const da::ToyAdaptConfig cfg = effective_config(o);
    if (o.out.empty()) {
        throw UsageError("--out is required");
    }
    const da::TrainingData data = da::load_training_data(cfg.data);
    // Train the stages before the requested one, then freeze what it would consume.
    da::PipelineConfig pc = cfg.pipeline;
    const int stage = pc.stages;
    pc.stages = stage;
    const da::PipelineResult r = da::run_pipeline(data, pc);
    std::optional<da::BilateralParams> texture;
    if (r.texture) {
        texture = r.texture->params;
    }
    const da::StageInputs in = da::prepare_stage(r.model, stage, data, cfg.pipeline, texture);

    prepare_out_dir(o.out);
    const fs::path out(o.out);
    da::StageArtifact art;
    if (in.projector) {
        art.pca = in.projector->pca;
        art.atoms = in.projector->atoms;
        art.projector = in.projector;
    }
    art.centers = in.centers;
    art.thresholds = in.thresholds;
    da::save_artifact(art, out / "artifact.json");
    const fs::path pl_dir = out / "pseudo_labels";
    prepare_out_dir(pl_dir);
    for (std::size_t i = 0; i < in.pseudo_labels.size(); ++i) {
        const da::PseudoLabelMap& pl = in.pseudo_labels[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "%04zu", i);
        da::LabelMap lm(pl.height, pl.width);
        lm.labels = pl.labels;
        da::save_label_map(lm, pl_dir / (std::string(stem) + "_label.png"));
        da::Plane conf(pl.height, pl.width);
        conf.values = pl.confidence;
        da::save_plane_png16(conf, pl_dir / (std::string(stem) + "_conf.png"));
    }
    write_json(out / "config.json", da::to_json(cfg));
    return kExitOk;
}

// ---- stats ---------------------------------------------------------------------

struct StatsOptions {
    std::string input;
    std::string reference;
    std::string out;
    std::string label_suffix = "_label.png";
    int jobs = 1;
};

struct ImageStats {
    int height = 0;
    int width = 0;
    double mean[3] = {0, 0, 0};
    double stddev[3] = {0, 0, 0};
    da::Histogram highfreq;
};

ImageStats image_stats(const da::ImageRGB& img) {
    ImageStats s;
    s.height = img.height;
    s.width = img.width;
    const da::ImageLab lab = da::rgb_to_lab(img);
    const da::Plane* planes[3] = {&lab.L, &lab.a, &lab.b};
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        double sq = 0.0;
        for (double v : planes[c]->values) {
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(planes[c]->size());
        s.mean[c] = sum / n;
        s.stddev[c] = std::sqrt(std::max(sq / n - s.mean[c] * s.mean[c], 0.0));
    }
    if (img.height >= 3 && img.width >= 3) {
        s.highfreq = da::highfreq_histogram(img);
    }
    return s;
}

int run_stats(const StatsOptions& o) {
    require_dir(o.input, "input");
    const std::vector<fs::path> files = da::list_images(o.input, o.label_suffix);
    if (files.empty()) {
        throw da::EmptyDatasetError("no images in " + o.input);
    }
    std::vector<ImageStats> stats(files.size());
    da::parallel_for(files.size(), o.jobs, [&](std::size_t i) { stats[i] = image_stats(da::load_image(files[i])); });

    std::optional<da::Histogram> ref_hist;
    if (!o.reference.empty()) {
        require_dir(o.reference, "reference");
        const std::vector<fs::path> refs = da::list_images(o.reference, o.label_suffix);
        if (refs.empty()) {
            throw da::EmptyDatasetError("no images in " + o.reference);
        }
        std::vector<da::Histogram> h(refs.size());
        da::parallel_for(refs.size(), o.jobs, [&](std::size_t i) { h[i] = da::highfreq_histogram(da::load_image(refs[i])); });
        ref_hist.emplace();
        for (const auto& x : h) {
            *ref_hist += x;
        }
    }

    static const char* kChannels[3] = {"L", "a", "b"};
    json images = json::array();
    da::Histogram corpus;
    double corpus_mean[3] = {0, 0, 0};
    double pixels = 0.0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const ImageStats& s = stats[i];
        json e = {{"file", files[i].filename().string()}, {"height", s.height}, {"width", s.width}};
        const double n = static_cast<double>(s.height) * s.width;
        for (int c = 0; c < 3; ++c) {
            e[std::string("mean_") + kChannels[c]] = s.mean[c];
            e[std::string("std_") + kChannels[c]] = s.stddev[c];
            corpus_mean[c] += s.mean[c] * n;
        }
        pixels += n;
        if (ref_hist && s.highfreq.total > 0.0) {
            e["highfreq_kl"] = da::kl_divergence(s.highfreq, *ref_hist);
        }
        corpus += s.highfreq;
        images.push_back(std::move(e));
    }
    json summary = {{"images", files.size()}};
    for (int c = 0; c < 3; ++c) {
        summary[std::string("mean_") + kChannels[c]] = corpus_mean[c] / pixels;
    }
    if (ref_hist && corpus.total > 0.0) {
        summary["highfreq_kl"] = da::kl_divergence(corpus, *ref_hist);
    }
    const json report = {{"command", "stats"}, {"summary", summary}, {"images", images}};
    if (o.out.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        const fs::path out(o.out);
        if (out.has_parent_path()) {
            prepare_out_dir(out.parent_path());
        }
        write_json(out, report);
    }
    return kExitOk;
}

int report_error(const char* kind, const std::exception& e, int code) {
    std::cerr << json{{"error", kind}, {"message", e.what()}, {"exit_code", code}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Photometric, texture and feature-level domain alignment tools"};
    app.require_subcommand(1);

    AlignOptions ao;
    auto* align = app.add_subcommand("align", "Align each source image to a seeded random target reference");
    align->add_option("--source", ao.source, "Source image directory")->required();
    align->add_option("--target", ao.target, "Target image directory")->required();
    align->add_option("--out", ao.out, "Output directory")->required();
    align->add_option("--beta", ao.beta, "Gamma regularization weight")->capture_default_str();
    align->add_option("--seed", ao.seed, "Global seed")->capture_default_str();
    align->add_option("--jobs", ao.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    align->add_option("--format", ao.format, "Output format: png or ppm")->capture_default_str();
    align->add_option("--label-suffix", ao.label_suffix, "Suffix of label files to skip")->capture_default_str();
    align->add_flag("--texture", ao.texture, "Also apply the bilateral texture filter");
    align->add_option("--texture-d", ao.texture_params.d, "Bilateral diameter")->capture_default_str();
    align->add_option("--texture-sigma-c", ao.texture_params.sigma_c, "Bilateral range sigma (0-255 scale)")
        ->capture_default_str();
    align->add_option("--texture-sigma-s", ao.texture_params.sigma_s, "Bilateral spatial sigma")->capture_default_str();
    align->add_option("--texture-prob", ao.texture_prob, "Probability of filtering an image")->capture_default_str();
    align->add_flag("--timing", ao.timing, "Record per-image wall time in the report (not reproducible)");

    TextureOptions to;
    auto* texture = app.add_subcommand("texture-opt", "Grid-search bilateral parameters against a target corpus");
    texture->add_option("--source", to.source, "Source image directory")->required();
    texture->add_option("--target", to.target, "Target image directory")->required();
    texture->add_option("--out", to.out, "Report path (JSON)")->required();
    texture->add_option("--d", to.d, "Diameters (default grid when omitted)")->delimiter(',');
    texture->add_option("--sigma-c", to.sigma_c, "Range sigmas")->delimiter(',');
    texture->add_option("--sigma-s", to.sigma_s, "Spatial sigmas")->delimiter(',');
    texture->add_flag("--no-identity", to.no_identity, "Leave the identity filter out of the grid");
    texture->add_option("--label-suffix", to.label_suffix, "Suffix of label files to skip")->capture_default_str();
    texture->add_option("--jobs", to.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    ToyOptions bo;
    int build_jobs = 1;
    auto* build = app.add_subcommand("build-artifacts",
                                     "Train stages 0..N-1, then freeze the PCA, atoms, centers, thresholds and "
                                     "pseudo-labels that stage N consumes");
    build->add_option("--config", bo.config, "JSON config (defaults when omitted)");
    build->add_option("--out", bo.out, "Output directory")->required();
    bo.stages = 1;
    build->add_option("--stage", bo.stages, "Stage N whose inputs to build")->capture_default_str()->check(
        CLI::PositiveNumber);
    build->add_option("--iterations", bo.iterations, "Override iterations per stage")->check(CLI::PositiveNumber);
    build->add_option("--seed", bo.seed, "Override the pipeline seed");
    build->add_option("--jobs", build_jobs, "Accepted for symmetry; training is single-threaded")
        ->check(CLI::PositiveNumber);

    ToyOptions yo;
    int toy_jobs = 1;
    auto* toy = app.add_subcommand("toy-adapt", "Run the staged toy adaptation pipeline");
    toy->add_option("--config", yo.config, "JSON config (defaults when omitted)");
    toy->add_option("--out", yo.out, "Output directory");
    toy->add_option("--stages", yo.stages, "Override the stage count")->check(CLI::PositiveNumber);
    toy->add_option("--iterations", yo.iterations, "Override iterations per stage")->check(CLI::PositiveNumber);
    toy->add_option("--seed", yo.seed, "Override the pipeline seed");
    toy->add_flag("--print-config", yo.print_config, "Print the effective config and exit");
    toy->add_option("--jobs", toy_jobs, "Accepted for symmetry; training is single-threaded")
        ->check(CLI::PositiveNumber);

    StatsOptions so;
    auto* stats = app.add_subcommand("stats", "Per-image Lab and high-frequency statistics");
    stats->add_option("--input", so.input, "Image directory")->required();
    stats->add_option("--reference", so.reference, "Reference directory for high-frequency KL");
    stats->add_option("--out", so.out, "Report path (stdout when omitted)");
    stats->add_option("--label-suffix", so.label_suffix, "Suffix of label files to skip")->capture_default_str();
    stats->add_option("--jobs", so.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*align) {
            return run_align(ao);
        }
        if (*texture) {
            return run_texture_opt(to);
        }
        if (*build) {
            return run_build_artifacts(bo);
        }
        if (*toy) {
            return run_toy_adapt(yo);
        }
        if (*stats) {
            return run_stats(so);
        }
    } catch (const UsageError& e) {
        return report_error("usage", e, kExitUsage);
    } catch (const da::ConfigError& e) {
        return report_error("config", e, kExitUsage);
    } catch (const da::IoError& e) {
        return report_error("io", e, kExitUsage);
    } catch (const da::EmptyDatasetError& e) {
        return report_error("empty_dataset", e, kExitUsage);
    } catch (const da::Error& e) {
        return report_error("domalign", e, kExitInternal);
    } catch (const std::exception& e) {
        return report_error("internal", e, kExitInternal);
    }
    return kExitInternal;
}
