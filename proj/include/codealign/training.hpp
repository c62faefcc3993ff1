#pragma once

#include <map>
#include <string>
#include <vector>

#include "codealign/codespace.hpp"
#include "codealign/core.hpp"
#include "codealign/worldgen.hpp"

namespace codealign::codespace {

struct PretrainResult {
    DetectionHead head;  // on encoded C_m features, frozen
    double eval_ap = 0.0;
    std::vector<double> loss_curve;  // mean detection loss per epoch
};

/// Trains a per-cell logistic detection head directly on encoded features
/// against ground-truth occupancy warped into the agent frame, then freezes it
/// and reports the single-agent AP on the evaluation split.
PretrainResult pretrain_pipeline(const std::string& modality,
                                 const worldgen::DatasetReader& reader, int epochs, double lr,
                                 core::RngSeed seed);

struct CodespaceTrainConfig {
    std::uint32_t d = 16;
    int c_z = 16;
    double beta_commit = 0.25;
    double lambda_sim = 0.1;
    int epochs = 30;
    double lr = 0.05;
    double smooth_l1_beta = 1.0;
    std::size_t max_lloyd_cells = 400000;  // deterministic stride subsample above this
    bool eval_ap_each_epoch = true;
};

/// Per-scene gradient of the quantized detection pipeline with respect to one
/// adapter: straight-through across the quantizer plus the commitment pull
/// toward the assigned codes. Passing book == nullptr bypasses the quantizer
/// (the D -> infinity surrogate), in which case the gradient equals the
/// unquantized pipeline's exactly.
struct AdapterGrad {
    std::vector<double> d_weight;
    std::vector<double> d_bias;
    double det_loss = 0.0;
    double recon_mse = 0.0;  // mean per-element ||a - q||^2
};

AdapterGrad codespace_grad(const core::FeatureMap& obs, const std::vector<double>& truth,
                           const Adapter& adapter, const Codebook* book,
                           const DetectionHead& head, double beta_commit);

/// Single-modality code space: alternating Lloyd updates of the codebook and
/// gradient steps on the adapter, with the encoder and the (re-fit, frozen)
/// detection head untouched.
CodespaceArtifact train_codespace(const std::string& modality,
                                  const worldgen::DatasetReader& reader,
                                  const PretrainResult& pretrained,
                                  const CodespaceTrainConfig& cfg, core::RngSeed seed);

/// Shared code space for non-isolated modalities: per-member adapters, one
/// codebook, one trainable head, trained on co-occurring scenes with the
/// pairwise feature-similarity term weighted by lambda_sim.
CodespaceArtifact train_group_codespace(const std::string& owner,
                                        const std::vector<std::string>& members,
                                        const worldgen::DatasetReader& reader,
                                        const std::map<std::string, PretrainResult>& pretrained,
                                        const CodespaceTrainConfig& cfg, core::RngSeed seed);

/// Common engine behind both trainers; exposed so the single/group reduction
/// is checkable. A one-member group with head_trainable = true is bit-identical
/// to train_group_codespace; head_trainable = false is train_codespace.
CodespaceArtifact train_codespace_engine(const std::string& owner,
                                         const std::vector<std::string>& members,
                                         const worldgen::DatasetReader& reader,
                                         const std::map<std::string, PretrainResult>& pretrained,
                                         const CodespaceTrainConfig& cfg, core::RngSeed seed,
                                         bool head_trainable);

/// Least-squares re-fit of a pretrained C_m head onto C_z adapted features
/// against its own pre-quantization logits (the frozen-backend realization).
DetectionHead refit_head(const DetectionHead& pretrained_head,
                         const std::vector<core::FeatureMap>& observations,
                         const Adapter& adapter);

}  // namespace codealign::codespace
