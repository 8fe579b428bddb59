#include "domalign/artifact.hpp"

#include <fstream>

#include "domalign/errors.hpp"

namespace domalign {

using nlohmann::json;

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            flat.push_back(m(r, c));
        }
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(flat.size()) != rows * cols) {
        throw FormatError("artifact matrix has inconsistent dimensions");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
        }
    }
    return m;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vec_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json to_json(const PcaModel& m) {
    return json{{"dim", m.dim()},
                {"reduced_dim", m.reduced_dim()},
                {"mean", vec(m.mean)},
                {"components", matrix_json(m.components)},
                {"variances", vec(m.variances)},
                {"explained_ratio", m.explained_ratio}};
}

json to_json(const AtomSet& a) {
    return json{{"atoms", matrix_json(a.atoms)},
                {"inertia", a.inertia},
                {"iterations", a.iterations},
                {"inertia_history", a.inertia_history}};
}

json to_json(const CategoryCenters& c) {
    return json{{"centers", matrix_json(c.centers)}, {"present", c.present}};
}

json to_json(const CategoryThresholds& t) {
    return json{{"prob_cap", t.prob_cap},
                {"threshold", t.threshold},
                {"percentile", t.percentile},
                {"pixel_count", t.pixel_count}};
}

json to_json(const StageArtifact& a) {
    json j{{"format", kArtifactFormat}, {"version", kArtifactVersion}};
    if (a.pca) {
        j["pca"] = to_json(*a.pca);
    }
    if (a.atoms) {
        j["atoms"] = to_json(*a.atoms);
    }
    if (a.projector) {
        j["projector"] = json{{"hidden", a.projector->hidden()},
                              {"W1", matrix_json(a.projector->W1)},
                              {"W2", matrix_json(a.projector->W2)},
                              {"pca", to_json(a.projector->pca)},
                              {"atoms", to_json(a.projector->atoms)}};
    }
    if (a.centers) {
        j["centers"] = to_json(*a.centers);
    }
    if (a.thresholds) {
        j["thresholds"] = to_json(*a.thresholds);
    }
    return j;
}

PcaModel pca_from_json(const json& j) {
    PcaModel m;
    m.mean = vec_from(j.at("mean"));
    m.components = matrix_from(j.at("components"));
    m.variances = vec_from(j.at("variances"));
    m.explained_ratio = j.at("explained_ratio").get<double>();
    if (m.components.cols() != m.mean.size() || m.components.rows() != m.variances.size() ||
        j.at("dim").get<Eigen::Index>() != m.dim() || j.at("reduced_dim").get<Eigen::Index>() != m.reduced_dim()) {
        throw FormatError("PCA artifact dimensions disagree");
    }
    return m;
}

AtomSet atoms_from_json(const json& j) {
    AtomSet a;
    a.atoms = matrix_from(j.at("atoms"));
    a.inertia = j.at("inertia").get<double>();
    a.iterations = j.value("iterations", 0);
    a.inertia_history = j.value("inertia_history", std::vector<double>{});
    return a;
}

CategoryCenters centers_from_json(const json& j) {
    CategoryCenters c;
    c.centers = matrix_from(j.at("centers"));
    c.present = j.at("present").get<std::vector<bool>>();
    if (static_cast<Eigen::Index>(c.present.size()) != c.centers.rows()) {
        throw FormatError("center artifact dimensions disagree");
    }
    return c;
}

CategoryThresholds thresholds_from_json(const json& j) {
    CategoryThresholds t;
    t.prob_cap = j.at("prob_cap").get<double>();
    t.threshold = j.at("threshold").get<std::vector<double>>();
    t.percentile = j.at("percentile").get<std::vector<double>>();
    t.pixel_count = j.at("pixel_count").get<std::vector<std::size_t>>();
    return t;
}

StageArtifact artifact_from_json(const json& j) {
    if (j.value("format", std::string{}) != kArtifactFormat) {
        throw FormatError("not a stage artifact");
    }
    if (j.value("version", 0) != kArtifactVersion) {
        throw FormatError("unsupported artifact version");
    }
    StageArtifact a;
    try {
        if (j.contains("pca")) {
            a.pca = pca_from_json(j["pca"]);
        }
        if (j.contains("atoms")) {
            a.atoms = atoms_from_json(j["atoms"]);
        }
        if (j.contains("projector")) {
            const json& p = j["projector"];
            ManifoldProjector proj;
            proj.W1 = matrix_from(p.at("W1"));
            proj.W2 = matrix_from(p.at("W2"));
            proj.pca = pca_from_json(p.at("pca"));
            proj.atoms = atoms_from_json(p.at("atoms"));
            if (proj.W1.cols() != proj.pca.reduced_dim() || proj.W2.rows() != proj.W1.rows() ||
                proj.W2.cols() != proj.W1.cols() || proj.atoms.atoms.cols() != proj.pca.reduced_dim()) {
                throw FormatError("projector artifact dimensions disagree");
            }
            a.projector = std::move(proj);
        }
        if (j.contains("centers")) {
            a.centers = centers_from_json(j["centers"]);
        }
        if (j.contains("thresholds")) {
            a.thresholds = thresholds_from_json(j["thresholds"]);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed artifact: ") + e.what());
    }
    return a;
}

void save_artifact(const StageArtifact& a, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json(a).dump(1) << '\n';
}

StageArtifact load_artifact(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("artifact is not JSON: ") + e.what());
    }
    return artifact_from_json(j);
}

}  // namespace domalign
