#pragma once

#include <map>
#include <string>
#include <vector>

#include "codealign/codespace.hpp"
#include "codealign/core.hpp"
#include "codealign/translator.hpp"
#include "codealign/warp.hpp"
#include "codealign/wire.hpp"
#include "codealign/worldgen.hpp"

namespace codealign::collab {

enum class Mode { codealign, no_collab, no_align, late_fusion, d2d };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

/// Everything a frame needs: trained code spaces by owner, translators and
/// dense maps by (source modality -> target owner), and the dataset manifest
/// for modality specs and geometry.
struct ArtifactSet {
    const worldgen::DatasetManifest* manifest = nullptr;
    std::map<std::string, codespace::CodespaceArtifact> codespaces;       // by owner
    std::map<std::string, translator::TranslatorOneToOne> translators;    // "src->owner"
    std::map<std::string, translator::TranslatorMultiHead> multiheads;    // by source modality
    std::map<std::string, translator::DenseMap> dense_maps;               // "src->owner"
    bool ego_dense = false;  // sensitivity switch: ego skips its own quantizer
    bool prefer_multihead = false;

    static std::string link_key(const std::string& source, const std::string& owner) {
        return source + "->" + owner;
    }
    const codespace::CodespaceArtifact& space(const std::string& owner) const;
};

struct PoseNoise {
    double sigma_xy = 0.0;       // meters
    double sigma_heading = 0.0;  // radians
};

struct FrameResult {
    int ego_agent_id = 0;
    Mode mode = Mode::no_collab;
    core::DetectionMap detection;
    std::vector<double> truth;  // ego-frame ground-truth occupancy
    std::map<int, std::size_t> neighbor_payload_bytes;
    std::map<int, std::size_t> neighbor_header_bytes;
};

/// One collaborative inference frame. Neighbors are processed in ascending
/// agent_id; messages are delivered synchronously; pose noise corrupts the
/// transmitted pose so the receiver warps with the wrong transform. The seed
/// must be the dataset seed so synthesized observations match stored ones.
FrameResult run_frame(const worldgen::LatentScene& scene, const worldgen::AgentConfig& ego,
                      const std::vector<worldgen::AgentConfig>& neighbors,
                      const ArtifactSet& artifacts, Mode mode, const PoseNoise& noise,
                      core::RngSeed seed);

/// Per-agent single-pipeline scores in its own code space (used by the
/// late-fusion path and the no-collaboration baseline).
core::DetectionMap own_pipeline_scores(const core::FeatureMap& obs, const std::string& modality,
                                       const ArtifactSet& artifacts, bool dense = false);

/// 4-connected components of the thresholded detection mask; late-fusion
/// messages are modeled as 12 bytes per component centroid.
std::size_t detection_cluster_count(const core::DetectionMap& scores, double threshold);

}  // namespace codealign::collab
