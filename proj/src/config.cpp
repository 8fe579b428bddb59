#include "domalign/config.hpp"

#include <fstream>
#include <set>

#include "domalign/errors.hpp"
#include "domalign/imgio.hpp"

namespace domalign {
namespace {

using nlohmann::json;

// Reads known keys out of one JSON object and complains about the rest.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw ConfigError(where_ + ": expected an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        seen_.insert(key);
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    void get(const char* key, std::optional<std::string>& out) {
        auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        seen_.insert(key);
        if (it->is_null()) {
            out.reset();
        } else if (it->is_string()) {
            out = it->get<std::string>();
        } else {
            throw ConfigError(where_ + "." + key + ": expected a string or null");
        }
    }

    const json* child(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) {
            return nullptr;
        }
        seen_.insert(key);
        return &*it;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json opt_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

GammaSolveConfig read_gamma(const json& j, GammaSolveConfig c, const std::string& where) {
    Fields f(j, where);
    f.get("beta", c.beta);
    f.get("max_iters", c.max_iters);
    f.get("step_size", c.step_size);
    f.get("tolerance", c.tolerance);
    f.get("gamma_low", c.gamma_low);
    f.get("gamma_high", c.gamma_high);
    f.finish();
    return c;
}

BilateralParams read_bilateral(const json& j, BilateralParams p, const std::string& where) {
    Fields f(j, where);
    f.get("d", p.d);
    f.get("sigma_c", p.sigma_c);
    f.get("sigma_s", p.sigma_s);
    f.finish();
    return p;
}

PerturbConfig read_perturb(const json& j, PerturbConfig c, const std::string& where) {
    Fields f(j, where);
    if (const json* s = f.child("jitter")) {
        Fields g(*s, f.path("jitter"));
        g.get("enabled", c.jitter.enabled);
        g.get("brightness", c.jitter.brightness);
        g.get("contrast", c.jitter.contrast);
        g.get("saturation", c.jitter.saturation);
        g.finish();
    }
    if (const json* s = f.child("elastic")) {
        Fields g(*s, f.path("elastic"));
        g.get("enabled", c.elastic.enabled);
        g.get("grid_spacing", c.elastic.grid_spacing);
        g.get("sigma", c.elastic.sigma);
        g.finish();
    }
    if (const json* s = f.child("blur")) {
        Fields g(*s, f.path("blur"));
        g.get("enabled", c.blur.enabled);
        g.get("sigma_min", c.blur.sigma_min);
        g.get("sigma_max", c.blur.sigma_max);
        g.finish();
    }
    f.finish();
    return c;
}

}  // namespace

json to_json(const GammaSolveConfig& c) {
    return {{"beta", c.beta},           {"max_iters", c.max_iters},   {"step_size", c.step_size},
            {"tolerance", c.tolerance}, {"gamma_low", c.gamma_low}, {"gamma_high", c.gamma_high}};
}

json to_json(const BilateralParams& p) { return {{"d", p.d}, {"sigma_c", p.sigma_c}, {"sigma_s", p.sigma_s}}; }

json to_json(const PerturbConfig& c) {
    return {{"jitter",
             {{"enabled", c.jitter.enabled},
              {"brightness", c.jitter.brightness},
              {"contrast", c.jitter.contrast},
              {"saturation", c.jitter.saturation}}},
            {"elastic",
             {{"enabled", c.elastic.enabled}, {"grid_spacing", c.elastic.grid_spacing}, {"sigma", c.elastic.sigma}}},
            {"blur", {{"enabled", c.blur.enabled}, {"sigma_min", c.blur.sigma_min}, {"sigma_max", c.blur.sigma_max}}}};
}

json to_json(const PipelineConfig& c) {
    return {
        {"stages", c.stages},
        {"iterations", c.iterations},
        {"learning_rate", c.learning_rate},
        {"lr_power", c.lr_power},
        {"feature_lr_scale", c.feature_lr_scale},
        {"weights",
         {{"seg", c.weights.seg},
          {"manifold", c.weights.manifold},
          {"triplet", c.weights.triplet},
          {"consistency", c.weights.consistency}}},
        {"feature_dim", c.feature_dim},
        {"descriptor",
         {{"neighborhood_mean", c.descriptor.neighborhood_mean}, {"local_contrast", c.descriptor.local_contrast}}},
        {"source_batch", c.source_batch},
        {"target_batch", c.target_batch},
        {"use_gpa", c.use_gpa},
        {"use_gtexa", c.use_gtexa},
        {"gamma", to_json(c.gamma)},
        {"optimize_texture", c.optimize_texture},
        {"texture_params", to_json(c.texture_params)},
        {"texture_prob", c.texture_prob},
        {"texture_subsample", c.texture_subsample},
        {"source_perturb", to_json(c.source_perturb)},
        {"target_perturb", to_json(c.target_perturb)},
        {"pca_energy", c.pca_energy},
        {"atom_count", c.atom_count},
        {"hidden_dim", c.hidden_dim},
        {"kmeans_iters", c.kmeans_iters},
        {"sample_cap_factor", c.sample_cap_factor},
        {"triplet_alpha", c.triplet.alpha},
        {"thresholds", {{"prob_cap", c.thresholds.prob_cap}, {"percent", c.thresholds.percent}}},
        {"log_every", c.log_every},
        {"seed", c.seed},
    };
}

json to_json(const SyntheticDomainSpec& s) {
    return {{"class_count", s.class_count},
            {"height", s.height},
            {"width", s.width},
            {"regions_per_image", s.regions_per_image},
            {"region_color_jitter", s.region_color_jitter},
            {"shading", s.shading},
            {"pixel_noise", s.pixel_noise},
            {"source_gamma", s.source_gamma},
            {"chroma_shift", s.chroma_shift},
            {"texture_noise", s.texture_noise},
            {"source_count", s.source_count},
            {"target_count", s.target_count},
            {"eval_count", s.eval_count},
            {"seed", s.seed}};
}

json to_json(const DataConfig& d) {
    return {{"synthetic", to_json(d.synthetic)},
            {"source_dir", opt_string(d.source_dir)},
            {"target_dir", opt_string(d.target_dir)},
            {"eval_dir", opt_string(d.eval_dir)},
            {"label_suffix", d.label_suffix}};
}

json to_json(const ToyAdaptConfig& c) { return {{"pipeline", to_json(c.pipeline)}, {"data", to_json(c.data)}}; }

GammaSolveConfig gamma_config_from_json(const json& j, GammaSolveConfig base) {
    return read_gamma(j, base, "gamma");
}

BilateralParams bilateral_from_json(const json& j, BilateralParams base) {
    return read_bilateral(j, base, "bilateral");
}

PerturbConfig perturb_config_from_json(const json& j, PerturbConfig base) { return read_perturb(j, base, "perturb"); }

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
    Fields f(j, "pipeline");
    f.get("stages", c.stages);
    f.get("iterations", c.iterations);
    f.get("learning_rate", c.learning_rate);
    f.get("lr_power", c.lr_power);
    f.get("feature_lr_scale", c.feature_lr_scale);
    if (const json* s = f.child("weights")) {
        Fields g(*s, f.path("weights"));
        g.get("seg", c.weights.seg);
        g.get("manifold", c.weights.manifold);
        g.get("triplet", c.weights.triplet);
        g.get("consistency", c.weights.consistency);
        g.finish();
    }
    f.get("feature_dim", c.feature_dim);
    if (const json* s = f.child("descriptor")) {
        Fields g(*s, f.path("descriptor"));
        g.get("neighborhood_mean", c.descriptor.neighborhood_mean);
        g.get("local_contrast", c.descriptor.local_contrast);
        g.finish();
    }
    f.get("source_batch", c.source_batch);
    f.get("target_batch", c.target_batch);
    f.get("use_gpa", c.use_gpa);
    f.get("use_gtexa", c.use_gtexa);
    if (const json* s = f.child("gamma")) {
        c.gamma = read_gamma(*s, c.gamma, f.path("gamma"));
    }
    f.get("optimize_texture", c.optimize_texture);
    if (const json* s = f.child("texture_params")) {
        c.texture_params = read_bilateral(*s, c.texture_params, f.path("texture_params"));
    }
    f.get("texture_prob", c.texture_prob);
    f.get("texture_subsample", c.texture_subsample);
    if (const json* s = f.child("source_perturb")) {
        c.source_perturb = read_perturb(*s, c.source_perturb, f.path("source_perturb"));
    }
    if (const json* s = f.child("target_perturb")) {
        c.target_perturb = read_perturb(*s, c.target_perturb, f.path("target_perturb"));
    }
    f.get("pca_energy", c.pca_energy);
    f.get("atom_count", c.atom_count);
    f.get("hidden_dim", c.hidden_dim);
    f.get("kmeans_iters", c.kmeans_iters);
    f.get("sample_cap_factor", c.sample_cap_factor);
    f.get("triplet_alpha", c.triplet.alpha);
    if (const json* s = f.child("thresholds")) {
        Fields g(*s, f.path("thresholds"));
        g.get("prob_cap", c.thresholds.prob_cap);
        g.get("percent", c.thresholds.percent);
        g.finish();
    }
    f.get("log_every", c.log_every);
    f.get("seed", c.seed);
    f.finish();
    return c;
}

SyntheticDomainSpec synthetic_spec_from_json(const json& j, SyntheticDomainSpec s) {
    Fields f(j, "synthetic");
    f.get("class_count", s.class_count);
    f.get("height", s.height);
    f.get("width", s.width);
    f.get("regions_per_image", s.regions_per_image);
    f.get("region_color_jitter", s.region_color_jitter);
    f.get("shading", s.shading);
    f.get("pixel_noise", s.pixel_noise);
    f.get("source_gamma", s.source_gamma);
    f.get("chroma_shift", s.chroma_shift);
    f.get("texture_noise", s.texture_noise);
    f.get("source_count", s.source_count);
    f.get("target_count", s.target_count);
    f.get("eval_count", s.eval_count);
    f.get("seed", s.seed);
    f.finish();
    return s;
}

DataConfig data_config_from_json(const json& j, DataConfig d) {
    Fields f(j, "data");
    if (const json* s = f.child("synthetic")) {
        d.synthetic = synthetic_spec_from_json(*s, d.synthetic);
    }
    f.get("source_dir", d.source_dir);
    f.get("target_dir", d.target_dir);
    f.get("eval_dir", d.eval_dir);
    f.get("label_suffix", d.label_suffix);
    f.finish();
    return d;
}

ToyAdaptConfig toy_adapt_config_from_json(const json& j) {
    ToyAdaptConfig c;
    Fields f(j, "config");
    if (const json* s = f.child("pipeline")) {
        c.pipeline = pipeline_config_from_json(*s, c.pipeline);
    }
    if (const json* s = f.child("data")) {
        c.data = data_config_from_json(*s, c.data);
    }
    f.finish();
    c.validate();
    return c;
}

void DataConfig::validate() const {
    synthetic.validate();
    const int given = source_dir.has_value() + target_dir.has_value() + eval_dir.has_value();
    if (given != 0 && given != 3) {
        throw ConfigError("data: source_dir, target_dir and eval_dir must be given together");
    }
}

void ToyAdaptConfig::validate() const {
    pipeline.validate();
    data.validate();
}

ToyAdaptConfig load_toy_adapt_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return toy_adapt_config_from_json(j);
}

TrainingData load_training_data(const DataConfig& d) {
    TrainingData t;
    if (!d.from_directories()) {
        SyntheticDomains dom = generate_synthetic_domains(d.synthetic);
        t.class_count = d.synthetic.class_count;
        t.source_images = std::move(dom.source_images);
        t.source_labels = std::move(dom.source_labels);
        t.target_images = std::move(dom.target_images);
        t.eval_images = std::move(dom.eval_images);
        t.eval_labels = std::move(dom.eval_labels);
        return t;
    }
    t.class_count = d.synthetic.class_count;
    const DatasetManifest m = scan_dataset(*d.source_dir, *d.target_dir, d.label_suffix, t.class_count);
    for (const auto& e : m.source_entries) {
        if (!e.label) {
            throw IoError("source image without label map: " + e.image.string());
        }
        t.source_images.push_back(load_image(e.image));
        t.source_labels.push_back(load_label_map(*e.label));
    }
    for (const auto& p : m.target_entries) {
        t.target_images.push_back(load_image(p));
    }
    const DatasetManifest ev = scan_dataset(*d.eval_dir, *d.target_dir, d.label_suffix, t.class_count);
    for (const auto& e : ev.source_entries) {
        if (!e.label) {
            throw IoError("eval image without label map: " + e.image.string());
        }
        t.eval_images.push_back(load_image(e.image));
        t.eval_labels.push_back(load_label_map(*e.label));
    }
    return t;
}

}  // namespace domalign
