#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "domalign/catreg.hpp"
#include "domalign/gma.hpp"
#include "domalign/tcr.hpp"

namespace domalign {

inline constexpr const char* kArtifactFormat = "domalign.stage-artifact";
inline constexpr int kArtifactVersion = 1;

/// Everything one adaptation stage freezes from the previous model. Matrices
/// are stored row-major with explicit dimensions.
struct StageArtifact {
    std::optional<PcaModel> pca;
    std::optional<AtomSet> atoms;
    std::optional<ManifoldProjector> projector;
    std::optional<CategoryCenters> centers;
    std::optional<CategoryThresholds> thresholds;
};

nlohmann::json to_json(const PcaModel& m);
nlohmann::json to_json(const AtomSet& a);
nlohmann::json to_json(const CategoryCenters& c);
nlohmann::json to_json(const CategoryThresholds& t);
nlohmann::json to_json(const StageArtifact& a);

PcaModel pca_from_json(const nlohmann::json& j);
AtomSet atoms_from_json(const nlohmann::json& j);
CategoryCenters centers_from_json(const nlohmann::json& j);
CategoryThresholds thresholds_from_json(const nlohmann::json& j);
StageArtifact artifact_from_json(const nlohmann::json& j);

void save_artifact(const StageArtifact& a, const std::filesystem::path& path);
StageArtifact load_artifact(const std::filesystem::path& path);

}  // namespace domalign
