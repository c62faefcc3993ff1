#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "codealign/core.hpp"
#include "codealign/warp.hpp"

namespace codealign::worldgen {

using core::FeatureMap;
using core::Pose;
using core::RngSeed;

/// Ground-truth world: occupancy mask plus a latent semantic vector per cell
/// (unit norm on occupied cells, zero elsewhere).
struct LatentScene {
    int scene_id = 0;
    int height = 0;
    int width = 0;
    int c_lat = 0;
    std::vector<std::uint8_t> occupancy;  // H*W, 0/1
    std::vector<double> latent;           // H*W*c_lat row-major

    double occupied_fraction() const;
    std::vector<double> occupancy_as_doubles() const;
};

enum class Nonlinearity { identity, tanh, relu };

Nonlinearity nonlinearity_from_string(const std::string& s);
std::string to_string(Nonlinearity n);

/// A sensor-plus-encoder stand-in. The mix matrix is fixed at generation time
/// and never trained; heterogeneity comes from differing channel counts,
/// mixes, nonlinearities and noise models.
struct ModalitySpec {
    std::string modality_id;
    int channels = 0;  // C_m
    int c_lat = 0;
    std::vector<double> mix;   // channels x c_lat, row-major
    std::vector<double> bias;  // channels
    Nonlinearity nonlinearity = Nonlinearity::identity;
    double noise_sigma = 0.0;
    double dropout_rate = 0.0;
    double range_falloff = 0.0;
    double fov_radius = 1e9;

    void validate() const;  // includes the full-rank check on mix
};

struct AgentConfig {
    int agent_id = 0;
    std::string modality_id;
    Pose pose;
};

/// Generation-time description of a modality; realized into a ModalitySpec
/// (with a concrete mix matrix) by make_dataset.
struct ModalityParams {
    std::string modality_id;
    int channels = 16;
    std::string nonlinearity = "identity";
    double noise_sigma = 0.0;
    double dropout_rate = 0.0;
    double range_falloff = 0.0;
    double fov_radius = 12.0;
};

struct WorldConfig {
    int height = 32;
    int width = 32;
    int c_lat = 8;
    double cell_size = 1.0;
    int object_count_min = 3;
    int object_count_max = 6;
    double occupancy_min = 0.02;
    double occupancy_max = 0.15;
    // Object latents are normalize(mu + spread * gaussian) around a fixed axis;
    // negative spread draws uniformly on the sphere instead.
    double latent_cone_spread = 0.4;
    double agent_pose_extent = 6.0;
    int train_scenes = 500;
    int eval_scenes = 100;
};

struct DatasetConfig {
    WorldConfig world;
    std::vector<ModalityParams> modalities;
    std::vector<std::pair<std::string, std::string>> isolation_pairs;
    // owner -> member modalities; singleton modalities own themselves implicitly
    std::map<std::string, std::vector<std::string>> groups;
};

struct SceneRecord {
    int scene_id = 0;
    bool eval_split = false;
    std::vector<AgentConfig> agents;
};

struct DatasetManifest {
    int height = 0;
    int width = 0;
    int c_lat = 0;
    double cell_size = 1.0;
    RngSeed seed;
    std::uint64_t config_hash = 0;
    WorldConfig world;
    std::vector<ModalitySpec> modalities;
    std::vector<SceneRecord> scenes;
    std::map<std::string, std::vector<int>> coverage;  // modality -> train scene ids
    std::vector<std::pair<std::string, std::string>> isolation_pairs;
    std::map<std::string, std::vector<std::string>> groups;

    const ModalitySpec& modality(const std::string& id) const;
    const SceneRecord& scene(int scene_id) const;
    std::vector<int> train_scene_ids() const;
    std::vector<int> eval_scene_ids() const;
    /// Owner id of a modality: its group if it belongs to one, else itself.
    std::string owner_of(const std::string& modality_id) const;
    /// Members of an owner (the modality itself for singletons).
    std::vector<std::string> members_of(const std::string& owner) const;
    bool isolated(const std::string& a, const std::string& b) const;
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Places non-overlapping axis-aligned rectangular objects (1x2 .. 3x5 cells);
/// each object's cells share one unit-norm latent vector. The occupied
/// fraction is kept within the configured bounds by re-drawing the layout.
LatentScene gen_scene(RngSeed seed, int scene_id, const WorldConfig& cfg);

/// Convenience overload with explicit dims and object-count range.
LatentScene gen_scene(RngSeed seed, int height, int width, int c_lat, int count_min,
                      int count_max);

/// Realizes a modality: seeds the mix matrix from (seed, "mix", modality_id)
/// and verifies it has full rank.
ModalitySpec realize_modality(const ModalityParams& params, int c_lat, RngSeed seed);

/// Synthesizes what one agent's encoder would produce for a scene: the latent
/// grid is resampled into the agent frame, mixed through the modality map,
/// attenuated with range, noised, clipped to the field of view and sparsified.
FeatureMap observe(const LatentScene& scene, const ModalitySpec& spec, const AgentConfig& agent,
                   RngSeed seed, double cell_size = 1.0);

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

/// Relative path of one stored observation inside a dataset directory.
std::string observation_relpath(int scene_id, int agent_id);

/// Builds the full dataset under out_dir: partitions train scenes so that
/// every isolation pair has disjoint coverage, makes non-isolated group
/// members co-occur, adds an evaluation split where all modalities co-occur,
/// and stores one binary feature file per (scene, agent).
DatasetManifest make_dataset(const DatasetConfig& config, RngSeed seed,
                             const std::string& out_dir);

/// In-memory variant used by tests; skips the observation files.
DatasetManifest plan_dataset(const DatasetConfig& config, RngSeed seed);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Binary observation codec: 16-byte header (H, W, C, reserved as u32 LE)
/// followed by H*W*C row-major f32 values.
void save_observation(const FeatureMap& f, const std::string& path);
FeatureMap load_observation_file(const std::string& path);

/// Read access to a stored dataset. Every observation read goes through
/// load_observation and is recorded, which is what the isolation-guard tests
/// inspect. Scenes are regenerated from the manifest seed instead of stored.
class DatasetReader {
public:
    explicit DatasetReader(std::string dir);

    const DatasetManifest& manifest() const { return manifest_; }
    const std::string& dir() const { return dir_; }

    FeatureMap load_observation(int scene_id, int agent_id) const;
    LatentScene scene(int scene_id) const;

    /// Ground-truth occupancy warped into an agent's frame (training labels).
    std::vector<double> truth_in_frame(int scene_id, const Pose& pose) const;

    std::vector<std::string> accessed_files() const;
    void clear_access_log() const;

private:
    std::string dir_;
    DatasetManifest manifest_;
    mutable std::mutex mutex_;
    mutable std::vector<std::string> accessed_;
};

/// The only door a translator training run gets to the dataset: scenes covered
/// by the source modality in the train split, source-modality observations
/// only. Anything else throws a ConstraintError before any file is touched.
class LocalDataView {
public:
    LocalDataView(const DatasetReader& reader, std::string source_modality);

    const std::string& source_modality() const { return source_; }
    const std::vector<int>& scene_ids() const { return scene_ids_; }

    FeatureMap load(int scene_id) const;
    const AgentConfig& agent(int scene_id) const;
    LatentScene scene(int scene_id) const;
    std::vector<double> truth_in_frame(int scene_id, const Pose& pose) const;
    double cell_size() const;
    const ModalitySpec& modality_spec() const;

private:
    void check_scene(int scene_id) const;

    const DatasetReader& reader_;
    std::string source_;
    std::vector<int> scene_ids_;
    std::set<int> scene_set_;
    std::map<int, AgentConfig> agent_by_scene_;
};

}  // namespace codealign::worldgen
