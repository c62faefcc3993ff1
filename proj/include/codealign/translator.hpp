#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "codealign/codespace.hpp"
#include "codealign/core.hpp"
#include "codealign/worldgen.hpp"

namespace codealign::translator {

using codespace::Codebook;
using codespace::CodeMap;
using codespace::CodespaceArtifact;
using core::FeatureMap;

/// What the translator consumes: raw encoder output, source-adapter output,
/// or the source code space's own reconstruction (the code-to-code variant).
enum class InputSource { encoded, adapted, codemap };

InputSource input_source_from_string(const std::string& s);
std::string to_string(InputSource s);

/// Per-cell affine classifier from source features to target code indices.
struct TranslatorOneToOne {
    std::string source;  // source modality
    std::string target;  // target owner (modality or group)
    InputSource input_source = InputSource::encoded;
    int in_dim = 0;
    int out_dim = 0;             // D_t
    std::vector<double> weight;  // out_dim x in_dim
    std::vector<double> bias;    // out_dim

    std::size_t param_count() const { return weight.size() + bias.size(); }
};

/// Shared backbone with per-target output heads; parameter cost linear in the
/// number of targets. depth counts affine layers in the backbone with tanh
/// between consecutive layers (none at depth 1, keeping the single-target
/// case an exact affine factorization of a one-to-one translator).
struct TranslatorMultiHead {
    std::string source;
    InputSource input_source = InputSource::encoded;
    int in_dim = 0;
    int hidden = 32;
    int depth = 1;
    std::vector<std::vector<double>> layer_w;  // [0]: hidden x in, rest hidden x hidden
    std::vector<std::vector<double>> layer_b;
    struct Head {
        std::string target;
        int out_dim = 0;
        std::vector<double> weight;  // out_dim x hidden
        std::vector<double> bias;
    };
    std::vector<Head> heads;
    std::map<std::string, double> balance_ema;  // per-target loss EMA

    const Head& head(const std::string& target) const;
    std::size_t param_count() const;
};

TranslatorOneToOne make_one_to_one(const std::string& source, const std::string& target,
                                   int in_dim, std::uint32_t target_d, InputSource input_source,
                                   core::RngSeed seed);

TranslatorMultiHead make_multihead(const std::string& source, int in_dim, int hidden, int depth,
                                   const std::vector<std::pair<std::string, std::uint32_t>>& targets,
                                   InputSource input_source, core::RngSeed seed);

/// Collapses a depth-1 multihead branch into the equivalent flat affine map.
TranslatorOneToOne factored_to_flat(const TranslatorMultiHead& t, const std::string& target);

/// Applies the configured input transform. source_space may be null for
/// InputSource::encoded; the other variants need the source code space.
FeatureMap prepare_input(const FeatureMap& encoded, InputSource input_source,
                         const CodespaceArtifact* source_space, const std::string& modality);

/// H x W x D_t logits.
FeatureMap translate_logits(const FeatureMap& f, const TranslatorOneToOne& t);
FeatureMap translate_logits(const FeatureMap& f, const TranslatorMultiHead& t,
                            const std::string& target);

/// Per-cell argmax over the logits, lowest-index tie-break; the result
/// references the target codebook.
CodeMap translate_hard(const FeatureMap& f, const TranslatorOneToOne& t);
CodeMap translate_hard(const FeatureMap& f, const TranslatorMultiHead& t,
                       const std::string& target);
CodeMap hard_assign(const FeatureMap& logits, const std::string& target_owner,
                    std::uint32_t target_d);

/// Differentiable surrogate: per cell softmax(logits/tau) . codes.
FeatureMap decode_soft(const FeatureMap& logits, const Codebook& book, double tau);

/// Geometric annealing from start to end across the configured epochs.
struct TauSchedule {
    double start = 1.0;
    double end = 0.1;
    double at(int epoch, int total_epochs) const;
};

struct TranslatorTrainConfig {
    int epochs = 30;
    double lr = 0.05;
    TauSchedule tau;
};

struct TrainLog {
    std::vector<double> epoch_loss;
    std::vector<double> step_loss;
};

/// Local-data training: minimizes the frozen target head's detection loss on
/// soft-decoded translations of the source's own observations against the
/// source's own ground truth. The LocalDataView is the entire data surface;
/// target observations are unreachable by construction.
TrainLog train_translator(TranslatorOneToOne& t, const worldgen::LocalDataView& data,
                          const CodespaceArtifact& target_space,
                          const TranslatorTrainConfig& cfg, core::RngSeed seed,
                          const CodespaceArtifact* source_space = nullptr);

/// Same loop driving one branch of a multihead model (the degenerate
/// one-to-one form with factored parameterization).
TrainLog train_translator(TranslatorMultiHead& t, const std::string& target,
                          const worldgen::LocalDataView& data,
                          const CodespaceArtifact& target_space,
                          const TranslatorTrainConfig& cfg, core::RngSeed seed,
                          const CodespaceArtifact* source_space = nullptr);

struct MultiheadTrainConfig {
    TranslatorTrainConfig base;
    bool balancing = false;
    double ema_decay = 0.9;
    double floor_prob = 0.05;
};

struct MultiheadTrainLog {
    TrainLog log;
    std::map<std::string, std::size_t> steps_per_target;
};

/// Each step samples a target (uniformly, or proportionally to the loss EMA
/// when balancing is on) and applies one training step through the backbone
/// and that head.
MultiheadTrainLog train_multihead(TranslatorMultiHead& t, const worldgen::LocalDataView& data,
                                  const std::vector<const CodespaceArtifact*>& targets,
                                  const MultiheadTrainConfig& cfg, core::RngSeed seed,
                                  const CodespaceArtifact* source_space = nullptr);

/// Dense-to-dense comparison baseline: a plain affine feature map trained with
/// the frozen target head's detection loss, no quantization anywhere.
struct DenseMap {
    std::string source;
    std::string target;
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    FeatureMap apply(const FeatureMap& f) const;
    std::size_t param_count() const { return weight.size() + bias.size(); }
};

DenseMap make_dense_map(const std::string& source, const std::string& target, int in_dim,
                        int out_dim, core::RngSeed seed);

TrainLog train_dense_map(DenseMap& m, const worldgen::LocalDataView& data,
                         const CodespaceArtifact& target_space, const TranslatorTrainConfig& cfg,
                         core::RngSeed seed);

// ---------------------------------------------------------------------------
// Serialization: translator_<src>_to_<targets>.json
// ---------------------------------------------------------------------------

using Translator = std::variant<TranslatorOneToOne, TranslatorMultiHead>;

std::string translator_filename(const std::string& source,
                                const std::vector<std::string>& targets);
void save_translator(const Translator& t, const TauSchedule& tau, std::uint64_t seed,
                     const std::string& path);
Translator load_translator(const std::string& path);

}  // namespace codealign::translator
