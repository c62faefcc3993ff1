#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codealign/core.hpp"

namespace codealign::codespace {

using core::FeatureMap;

/// D x C_z table of code embeddings defining a modality or group code space.
struct Codebook {
    std::string owner;
    std::uint32_t d = 0;   // code count
    int c_z = 0;           // embedding dimension
    std::vector<double> codes;  // d x c_z row-major

    std::span<const double> code(std::uint32_t idx) const {
        return {codes.data() + static_cast<std::size_t>(idx) * c_z,
                static_cast<std::size_t>(c_z)};
    }
    std::span<double> code(std::uint32_t idx) {
        return {codes.data() + static_cast<std::size_t>(idx) * c_z,
                static_cast<std::size_t>(c_z)};
    }

    /// D >= 2, entries finite, min pairwise distance > 1e-9.
    void validate() const;
    double min_pairwise_distance() const;
};

/// Affine map from encoder channels into a code space: z = W f + b.
struct Adapter {
    std::string owner;  // modality
    int in_dim = 0;     // C_m
    int out_dim = 0;    // C_z
    std::vector<double> weight;  // out_dim x in_dim row-major
    std::vector<double> bias;    // out_dim

    static Adapter identity(const std::string& owner, int dim);

    void apply(std::span<const double> in, std::span<double> out) const;
    FeatureMap apply(const FeatureMap& f) const;
    std::size_t param_count() const { return weight.size() + bias.size(); }
};

/// Reference binding a code map to the codebook that decodes it.
struct CodebookRef {
    std::string owner;
    std::uint32_t d = 0;
    bool operator==(const CodebookRef&) const = default;
};

/// H x W grid of code indices in [0, D).
struct CodeMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> indices;  // H*W row-major
    CodebookRef codebook_ref;

    bool operator==(const CodeMap&) const = default;
    void validate() const;
};

/// Per-cell logistic detection head: score = sigmoid(w . f + b).
struct DetectionHead {
    std::string owner;
    std::vector<double> weight;
    double bias = 0.0;
    bool frozen = false;

    double logit(std::span<const double> features) const;
    double score(std::span<const double> features) const;
    core::DetectionMap score_map(const FeatureMap& f) const;
};

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

/// Nearest code per cell after the adapter, ties broken by lowest index.
CodeMap quantize(const FeatureMap& f, const Adapter& adapter, const Codebook& book);

/// Nearest-code index of a single adapted vector.
std::uint32_t nearest_code(std::span<const double> adapted, const Codebook& book);

/// Embedding lookup: output channels = C_z.
FeatureMap decode(const CodeMap& map, const Codebook& book);

// ---------------------------------------------------------------------------
// Codebook fitting
// ---------------------------------------------------------------------------

struct LloydResult {
    Codebook book;
    std::size_t reseeded = 0;           // empty clusters re-seeded this step
    double distortion_before = 0.0;     // sum ||f - code(f)||^2 under the input book
    double distortion_after = 0.0;      // same sum under the updated book
};

/// One Lloyd step over a flat feature set (count x c_z). Empty clusters are
/// re-seeded to the features farthest from their assigned codes; distortion
/// never increases except through re-seeding.
LloydResult lloyd_update(const std::vector<double>& features, std::size_t count,
                         const Codebook& book);

double distortion(const std::vector<double>& features, std::size_t count, const Codebook& book);

/// Farthest-point seeding: the first code is a seeded random pick, each
/// following code the feature farthest from all chosen so far.
Codebook kmeanspp_init(const std::vector<double>& features, std::size_t count, int c_z,
                       std::uint32_t d, const std::string& owner, core::RngSeed seed);

// ---------------------------------------------------------------------------
// Trained artifact bundle and its JSON form (codespace_<owner>.json)
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double detection_loss = 0.0;
    double reconstruction_mse = 0.0;
    double eval_ap = 0.0;
    std::size_t lloyd_reseeds = 0;
};

struct CodespaceArtifact {
    std::string owner;
    Codebook book;
    std::map<std::string, Adapter> adapters;  // one per member modality
    DetectionHead head;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<EpochStats> log;

    const Adapter& adapter(const std::string& modality) const;
};

void save_codespace(const CodespaceArtifact& artifact, const std::string& path);
CodespaceArtifact load_codespace(const std::string& path);

}  // namespace codealign::codespace
