// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uniacorn/control.hpp"
#include "uniacorn/domains.hpp"

namespace uniacorn {

/// alpha * r_u + r_s per block. Only the uncertainty residuals are weighted.
ResidualSet fuse_residuals(const ResidualSet& r_u, const ResidualSet& r_s, double alpha);

struct UncertaintySource {
    enum class Mode { Fixed, Gaussian } mode = Mode::Gaussian;
    double fixed_u = 0.0;
    UncertaintyGaussian gaussian;
};

struct FusionConfig {
    double alpha = 0.4;
    int steps = 1000;  // reverse steps; respaced when below the training T
    UncertaintySource uncertainty;
    std::uint64_t seed = 0;
    int multiplicity = 1;
    int batch_size = 32;
};

void validate(const FusionConfig& cfg);

/// Everything dual-control generation needs; all models are read-only here.
struct GenerativeModels {
    Autoencoder autoencoder{nullptr};
    Backbone backbone{nullptr};
    ControlNet semantic{nullptr};
    ControlNet uncertainty{nullptr};
    NoiseSchedule schedule = NoiseSchedule::linear(1000);  // training schedule
};

enum class ControlMode { Dual, SemanticOnly, UncertaintyOnly, Unconditional };

struct GenerationRequest {
    const LabelMap* label_map = nullptr;
    double u = 0.0;
    std::uint64_t seed = 0;
    std::string source_id;
};

struct GenerationRecord {
    std::string id;
    Image image;
    LabelMap label_map;
    MeanUncertainty conditioned_u;
    std::optional<double> measured_u;
    std::uint64_t seed = 0;
    std::string source_id;
};

/// Runs the reverse process for a batch of requests. Each request owns a
/// random stream seeded from `request.seed`.
std::vector<GenerationRecord> generate_batch(std::span<const GenerationRequest> requests, double alpha, int steps,
                                             GenerativeModels& models, ControlMode mode = ControlMode::Dual);

GenerationRecord generate_image(const LabelMap& label_map, MeanUncertainty u, const FusionConfig& cfg,
                                GenerativeModels& models, const std::string& source_id = "000000");

/// One record per (labeled sample, copy) with an independently drawn u and seed stream.
std::vector<GenerationRecord> generate_dataset(std::span<const Sample* const> labeled, const FusionConfig& cfg,
                                               GenerativeModels& models);

/// Fills measured_u with the frozen segmenter's U_H of each generated image.
void measure_records(std::span<GenerationRecord> records, Segmenter& seg);

/// Stores the records as a synthetic labeled dataset (all in the train split)
/// plus generation.csv with (id, source_id, conditioned_u, measured_u, seed).
fs::path save_generated(std::span<const GenerationRecord> records, int n_classes, const fs::path& dir);
DatasetSplit records_to_dataset(std::span<const GenerationRecord> records, int n_classes);

}  // namespace uniacorn
