// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uniacorn/control.hpp"
#include "uniacorn/eval.hpp"
#include "uniacorn/fusion.hpp"

namespace uniacorn {

enum class RetrainMix { SynthOnly, SynthPlusSource };

std::string to_string(RetrainMix m);
RetrainMix retrain_mix_from_string(const std::string& s);

struct EvaluationConfig {
    FitConfig classifier{1e-3, 8, 64, 0};
    int steering_points = 5;
    int steering_seeds = 16;
    std::optional<double> steering_alpha;  // unset: the generation alpha
    int paired_trials = 32;  // source-mean vs target-mean u, same label map and seed
    std::vector<double> alpha_sweep{0.0, 0.4, 1.0};
    int alpha_sweep_images = 16;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    fs::path output = "runs/default";
    int threads = 1;

    // Shared geometry; copied into every sub-config.
    int height = 64;
    int width = 64;
    int n_classes = 5;

    int n_per_domain = 400;
    DomainSpec source = default_source_spec();
    DomainSpec target = default_target_spec();

    SegmenterConfig segmenter;
    TrainConfig segmenter_train;

    AutoencoderConfig autoencoder;
    FitConfig autoencoder_fit{1e-3, 40, 32, 0};

    BackboneConfig backbone;  // latent shape is derived from the autoencoder
    FitConfig backbone_fit{1e-3, 200, 64, 0};
    ScheduleConfig schedule;

    int hint_channels = 16;
    FitConfig semantic_fit = default_controlnet_fit();
    FitConfig uncertainty_fit = default_controlnet_fit();
    /// Segmenter whose U_H feeds the Gaussian fit and the uncertainty
    /// ControlNet. Empty: the stage-1 segmenter. Point it at a retrained
    /// checkpoint to iterate manually.
    fs::path uncertainty_segmenter;

    double alpha = 0.4;
    int multiplicity = 1;
    int generate_batch = 32;

    RetrainMix retrain_mix = RetrainMix::SynthPlusSource;
    TrainConfig retrain_train;

    EvaluationConfig evaluation;
};

/// Fills unset fields from the defaults (a JSON merge patch onto the
/// default config), then propagates the shared geometry.
PipelineConfig load_pipeline_config(const fs::path& path);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& c);
/// Copies shared geometry into the sub-configs and validates them all.
void finalize(PipelineConfig& c);

// -----------------------------------------------------------------------------
// Manifest
// -----------------------------------------------------------------------------

const std::vector<std::string>& stage_names();
/// Direct prerequisites of a stage.
const std::vector<std::string>& stage_dependencies(const std::string& stage);
std::vector<std::string> parse_stage_list(const std::string& csv);

struct StageRecord {
    bool complete = false;
    std::string fingerprint;
    std::map<std::string, std::string> artifacts;  // path relative to the output root -> sha256
    nlohmann::json metrics = nlohmann::json::object();
    std::string error;
};

struct ExperimentManifest {
    nlohmann::json config;
    std::uint64_t master_seed = 0;
    std::map<std::string, StageRecord> stages;
    nlohmann::json metrics = nlohmann::json::object();

    nlohmann::json to_json() const;
    static ExperimentManifest from_json(const nlohmann::json& j);
    /// Marked complete and every artifact present with a matching checksum.
    bool stage_valid(const std::string& stage, const fs::path& root) const;
};

fs::path manifest_path(const fs::path& root);
std::optional<ExperimentManifest> read_manifest(const fs::path& root);

struct RunOptions {
    /// Stages to execute unconditionally. Empty: run every stage that is not
    /// already complete with a matching fingerprint.
    std::vector<std::string> stages;
    /// Stop after this stage completes, as if the process were interrupted.
    std::string stop_after;
    std::function<void(const std::string&)> log;
};

ExperimentManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {});

// -----------------------------------------------------------------------------
// Step 3 helpers
// -----------------------------------------------------------------------------

/// Concatenation of the synthetic train samples and, for SynthPlusSource,
/// the source train samples. No resampling.
std::vector<const Sample*> training_mixture(const DatasetSplit& synthetic, const DatasetSplit& source, RetrainMix mix);

SegmenterTraining retrain_segmenter(const DatasetSplit& synthetic, const DatasetSplit& source, RetrainMix mix,
                                    const TrainConfig& train, const SegmenterConfig& arch);

/// Linearly spaced conditioned-u values from the source mean to target mean + 2 target std.
std::vector<double> steering_points(const UncertaintyGaussian& source, const UncertaintyGaussian& target, int n);

}  // namespace uniacorn
