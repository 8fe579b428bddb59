#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>

#include "domalign/catreg.hpp"
#include "domalign/colorspace.hpp"
#include "domalign/config.hpp"
#include "domalign/errors.hpp"
#include "domalign/gma.hpp"
#include "domalign/gpa.hpp"
#include "domalign/gtexa.hpp"
#include "domalign/imgio.hpp"
#include "domalign/synthetic.hpp"
#include "domalign/tcr.hpp"
#include "domalign/toytrain.hpp"

namespace py = pybind11;
using namespace domalign;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ImageRGB to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) {
        throw DimensionMismatchError("expected an HxWx3 array");
    }
    ImageRGB img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(double));
    return img;
}

Array from_image(const ImageRGB& img) {
    Array out({img.height, img.width, 3});
    std::memcpy(out.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
    return out;
}

Plane to_plane(const Array& a) {
    if (a.ndim() != 2) {
        throw DimensionMismatchError("expected an HxW array");
    }
    Plane p(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(p.values.data(), a.data(), p.values.size() * sizeof(double));
    return p;
}

Array from_plane(const Plane& p) {
    Array out({p.height, p.width});
    std::memcpy(out.mutable_data(), p.values.data(), p.values.size() * sizeof(double));
    return out;
}

Labels from_labels(const LabelMap& l) {
    Labels out({l.height, l.width});
    std::memcpy(out.mutable_data(), l.labels.data(), l.labels.size());
    return out;
}

std::vector<std::uint8_t> flat_labels(const Labels& a) {
    return {a.data(), a.data() + a.size()};
}

std::vector<ImageRGB> to_images(const std::vector<Array>& v) {
    std::vector<ImageRGB> out;
    for (const auto& a : v) {
        out.push_back(to_image(a));
    }
    return out;
}

Histogram to_histogram(const Array& a) {
    if (a.ndim() != 1 || a.shape(0) != kHistogramBins) {
        throw DimensionMismatchError("expected 256 histogram counts");
    }
    Histogram h;
    for (int b = 0; b < kHistogramBins; ++b) {
        h.add(b, a.data()[b]);
    }
    return h;
}

Array from_histogram(const Histogram& h) {
    Array out(kHistogramBins);
    std::copy(h.counts.begin(), h.counts.end(), out.mutable_data());
    return out;
}

ProbabilityMap to_prob_map(const Eigen::MatrixXd& m, int height, int width) {
    if (m.rows() != static_cast<Eigen::Index>(height) * width) {
        throw DimensionMismatchError("row count must equal height * width");
    }
    return {height, width, m};
}

PseudoLabelMap to_pseudo(const Labels& labels, const Array& conf) {
    if (labels.ndim() != 2 || conf.ndim() != 2 || labels.shape(0) != conf.shape(0) ||
        labels.shape(1) != conf.shape(1)) {
        throw DimensionMismatchError("labels and confidence must share an HxW shape");
    }
    PseudoLabelMap pl;
    pl.height = static_cast<int>(labels.shape(0));
    pl.width = static_cast<int>(labels.shape(1));
    pl.labels = flat_labels(labels);
    pl.confidence.assign(conf.data(), conf.data() + conf.size());
    return pl;
}

py::object parse_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json dump_json(const py::object& o) {
    if (o.is_none()) {
        return nlohmann::json::object();
    }
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict stage_dict(const StageMetrics& s) {
    py::dict d;
    d["stage"] = s.stage;
    d["target_accuracy"] = s.target_accuracy;
    d["target_miou"] = s.target_miou;
    d["source_accuracy"] = s.source_accuracy;
    d["final_total_loss"] = s.final_total_loss;
    d["pseudo_labels_frozen"] = s.pseudo_labels_frozen;
    d["pseudo_valid_pixels"] = s.pseudo_valid_pixels;
    d["reduced_dim"] = s.reduced_dim;
    d["explained_ratio"] = s.explained_ratio;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Domain alignment primitives: photometric and texture alignment, manifold and category "
              "regularizers, pseudo-label consistency, and a toy adaptation pipeline.";

    auto& base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DimensionMismatchError>(m, "DimensionMismatchError", base.ptr());
    py::register_exception<DegenerateDataError>(m, "DegenerateDataError", base.ptr());

    m.def("load_image", [](const std::string& p) { return from_image(load_image(p)); }, py::arg("path"));
    m.def("save_image", [](const Array& img, const std::string& p) { save_image(to_image(img), p); },
          py::arg("image"), py::arg("path"));

    m.def("rgb_to_lab",
          [](const Array& img) {
              const ImageLab lab = rgb_to_lab(to_image(img));
              ImageRGB packed(lab.height, lab.width);
              packed.set_channel(0, lab.L);
              packed.set_channel(1, lab.a);
              packed.set_channel(2, lab.b);
              return from_image(packed);
          },
          py::arg("image"), "sRGB in [0,1] to stored Lab channels (L/100, (a+128)/255, (b+128)/255).");
    m.def("lab_to_rgb",
          [](const Array& lab) {
              const ImageRGB packed = to_image(lab);
              return from_image(
                  lab_to_rgb(ImageLab{packed.height, packed.width, packed.channel(0), packed.channel(1), packed.channel(2)}));
          },
          py::arg("lab"));
    m.def("channel_histogram", [](const Array& plane) { return from_histogram(channel_histogram(to_plane(plane))); },
          py::arg("channel"));

    m.def("match_histogram",
          [](const Array& channel, const Array& ref) {
              return from_plane(match_histogram(to_plane(channel), to_histogram(ref)));
          },
          py::arg("channel"), py::arg("reference_counts"));
    m.def("gamma_objective",
          [](const Array& s, const Array& r, double beta, double gamma) {
              return gamma_objective(to_histogram(s), to_histogram(r), beta, gamma);
          },
          py::arg("source_counts"), py::arg("reference_counts"), py::arg("beta"), py::arg("gamma"));
    m.def("solve_gamma",
          [](const Array& s, const Array& r, double beta) {
              GammaSolveConfig cfg;
              cfg.beta = beta;
              const GammaResult res = solve_gamma(to_histogram(s), to_histogram(r), cfg);
              return py::make_tuple(res.gamma, res.objective, res.iterations);
          },
          py::arg("source_counts"), py::arg("reference_counts"), py::arg("beta") = 0.01,
          "Returns (gamma, objective, iterations).");
    m.def("align_photometric",
          [](const Array& src, const Array& ref, double beta) {
              GammaSolveConfig cfg;
              cfg.beta = beta;
              const PhotometricAlignment a = align_photometric(to_image(src), to_image(ref), cfg);
              return py::make_tuple(from_image(a.image), a.gamma.gamma);
          },
          py::arg("source"), py::arg("reference"), py::arg("beta") = 0.01, "Returns (aligned image, gamma).");

    m.def("bilateral_filter",
          [](const Array& img, int d, double sigma_c, double sigma_s) {
              return from_image(bilateral_filter(to_image(img), {d, sigma_c, sigma_s}));
          },
          py::arg("image"), py::arg("d") = 5, py::arg("sigma_c") = 75.0, py::arg("sigma_s") = 25.0);
    m.def("highfreq_histogram", [](const Array& img) { return from_histogram(highfreq_histogram(to_image(img))); },
          py::arg("image"));
    m.def("kl_divergence",
          [](const Array& p, const Array& q) { return kl_divergence(to_histogram(p), to_histogram(q)); },
          py::arg("p_counts"), py::arg("q_counts"));
    m.def("optimize_filter_params",
          [](const std::vector<Array>& src, const std::vector<Array>& ref, int jobs) {
              const TextureAlignReport r = optimize_filter_params(to_images(src), to_images(ref), default_filter_grid(), jobs);
              py::dict d;
              d["d"] = r.params.d;
              d["sigma_c"] = r.params.sigma_c;
              d["sigma_s"] = r.params.sigma_s;
              d["kl_before"] = r.kl_before;
              d["kl_after"] = r.kl_after;
              d["grid_evaluated"] = r.grid_evaluated;
              return d;
          },
          py::arg("source_images"), py::arg("target_images"), py::arg("jobs") = 1,
          "Search the default bilateral grid for the parameters minimizing the high-frequency KL.");

    py::class_<PcaModel>(m, "PcaModel")
        .def_readonly("mean", &PcaModel::mean)
        .def_readonly("components", &PcaModel::components)
        .def_readonly("variances", &PcaModel::variances)
        .def_readonly("explained_ratio", &PcaModel::explained_ratio)
        .def_property_readonly("reduced_dim", &PcaModel::reduced_dim)
        .def("reduce", [](const PcaModel& p, const Eigen::MatrixXd& X) { return pca_reduce_rows(X, p); });
    m.def("fit_pca", [](const Eigen::MatrixXd& X, double energy) { return fit_pca(X, energy); }, py::arg("features"),
          py::arg("energy") = 0.9);

    py::class_<AtomSet>(m, "AtomSet")
        .def_readonly("atoms", &AtomSet::atoms)
        .def_readonly("inertia", &AtomSet::inertia)
        .def_readonly("inertia_history", &AtomSet::inertia_history)
        .def_readonly("iterations", &AtomSet::iterations);
    m.def("kmeans_atoms",
          [](const Eigen::MatrixXd& X, Eigen::Index k, std::uint64_t seed) {
              Rng rng(seed);
              return kmeans_atoms(X, k, rng);
          },
          py::arg("points"), py::arg("k"), py::arg("seed") = 0);

    py::class_<ManifoldProjector>(m, "ManifoldProjector")
        .def_readwrite("W1", &ManifoldProjector::W1)
        .def_readwrite("W2", &ManifoldProjector::W2)
        .def_readonly("atoms", &ManifoldProjector::atoms)
        .def_readonly("pca", &ManifoldProjector::pca)
        .def("loss", [](const ManifoldProjector& p, const Eigen::MatrixXd& X) { return manifold_loss(X, p); })
        .def("loss_grad", [](const ManifoldProjector& p, const Eigen::MatrixXd& X) {
            const ManifoldGrad g = manifold_loss_grad(X, p);
            return py::make_tuple(g.loss, g.d_features, g.d_W1, g.d_W2);
        });
    m.def("make_projector",
          [](const Eigen::MatrixXd& features, double energy, Eigen::Index atom_count, Eigen::Index hidden,
             std::uint64_t seed) {
              Rng rng(seed);
              PcaModel pca = fit_pca(features, energy);
              AtomSet atoms = kmeans_atoms(pca_reduce_rows(features, pca), atom_count, rng);
              return make_projector(std::move(pca), std::move(atoms), hidden, rng);
          },
          py::arg("features"), py::arg("energy") = 0.9, py::arg("atom_count") = 64, py::arg("hidden") = 32,
          py::arg("seed") = 0, "Fit PCA and k-means atoms on features and initialize the attention projector.");

    py::class_<CategoryCenters>(m, "CategoryCenters")
        .def_readonly("centers", &CategoryCenters::centers)
        .def_readonly("present", &CategoryCenters::present);
    m.def("category_centers",
          [](const Eigen::MatrixXd& F, const Labels& y, int classes) {
              return compute_category_centers(F, flat_labels(y), classes);
          },
          py::arg("features"), py::arg("labels"), py::arg("class_count"));
    m.def("triplet_loss",
          [](const Eigen::MatrixXd& F, const Labels& y, const CategoryCenters& c, double alpha) {
              return triplet_loss(F, flat_labels(y), c, {alpha});
          },
          py::arg("features"), py::arg("labels"), py::arg("centers"), py::arg("alpha") = 0.2);

    m.def("pseudo_labels",
          [](const Eigen::MatrixXd& probs, int height, int width) {
              const PseudoLabelMap pl = pseudo_labels(to_prob_map(probs, height, width));
              LabelMap l(height, width);
              l.labels = pl.labels;
              Plane conf(height, width);
              conf.values = pl.confidence;
              return py::make_tuple(from_labels(l), from_plane(conf));
          },
          py::arg("probs"), py::arg("height"), py::arg("width"), "Returns (labels, confidence) as HxW arrays.");
    m.def("category_thresholds",
          [](const Labels& labels, const Array& conf, int classes, double prob_cap, double percent) {
              return category_thresholds(to_pseudo(labels, conf), {prob_cap, percent}, classes).threshold;
          },
          py::arg("labels"), py::arg("confidence"), py::arg("class_count"), py::arg("prob_cap") = 0.9,
          py::arg("percent") = 10.0);
    m.def("consistency_loss",
          [](const Labels& labels, const Array& conf, const std::vector<double>& thresholds, const Eigen::MatrixXd& probs) {
              const PseudoLabelMap pl = to_pseudo(labels, conf);
              CategoryThresholds t;
              t.threshold = thresholds;
              const ConsistencyLoss c = consistency_loss(pl, t, to_prob_map(probs, pl.height, pl.width));
              return py::make_tuple(c.loss, c.valid_count);
          },
          py::arg("labels"), py::arg("confidence"), py::arg("thresholds"), py::arg("probs"),
          "Returns (summed loss, number of valid pixels).");

    m.def("synthetic_domains",
          [](const py::object& spec_json) {
              const SyntheticDomains d = generate_synthetic_domains(synthetic_spec_from_json(dump_json(spec_json)));
              auto images = [](const std::vector<ImageRGB>& v) {
                  py::list out;
                  for (const auto& i : v) {
                      out.append(from_image(i));
                  }
                  return out;
              };
              auto labels = [](const std::vector<LabelMap>& v) {
                  py::list out;
                  for (const auto& l : v) {
                      out.append(from_labels(l));
                  }
                  return out;
              };
              py::dict r;
              r["source_images"] = images(d.source_images);
              r["source_labels"] = labels(d.source_labels);
              r["target_images"] = images(d.target_images);
              r["eval_images"] = images(d.eval_images);
              r["eval_labels"] = labels(d.eval_labels);
              return r;
          },
          py::arg("spec") = py::none(), "Generate the synthetic source/target corpora from an optional spec dict.");

    m.def("default_config", [] { return parse_json(to_json(ToyAdaptConfig{})); });
    m.def("toy_adapt",
          [](const py::object& config) {
              const ToyAdaptConfig cfg = toy_adapt_config_from_json(dump_json(config));
              const TrainingData data = load_training_data(cfg.data);
              PipelineResult res;
              {
                  py::gil_scoped_release release;
                  res = run_pipeline(data, cfg.pipeline);
              }
              py::list stages;
              for (const auto& s : res.stages) {
                  stages.append(stage_dict(s));
              }
              return stages;
          },
          py::arg("config") = py::none(), "Run the staged toy adaptation pipeline; returns per-stage metrics.");
}
