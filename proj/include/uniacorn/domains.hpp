// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniacorn/common.hpp"

namespace uniacorn {

enum class Domain { SourceLabeled, TargetUnlabeled, SyntheticLabeled };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct Sample {
    Image image;                         // values in [0,1], 8-bit representable
    std::optional<LabelMap> label_map;   // class indices in [0, L)
    Domain domain = Domain::SourceLabeled;
    std::string id;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class DegradationKind { SpeckleNoise, Blur, ContrastGamma, IntensityShift, VerticalWarp };

std::string to_string(DegradationKind k);
DegradationKind degradation_from_string(const std::string& s);

/// One appearance (or, for VerticalWarp, geometric) corruption applied to a
/// rendered image. `strength` is the nominal value: noise std for speckle,
/// kernel sigma in pixels for blur, exponent for gamma, additive offset for
/// the intensity shift, displacement amplitude in pixels for the warp.
struct Degradation {
    DegradationKind kind;
    double strength = 0.0;

    friend bool operator==(const Degradation&, const Degradation&) = default;
};

/// Procedural description of a layered-image domain. Paired source/target
/// specs share every geometry field and differ only in `degradations`.
struct DomainSpec {
    Domain domain = Domain::SourceLabeled;
    int height = 64;
    int width = 64;
    int n_classes = 5;  // background + (n_classes - 1) bands
    int min_thickness = 5;
    int max_thickness = 9;
    double top_min_fraction = 0.15;  // first boundary lies in [min, max] * height
    double top_max_fraction = 0.30;
    double wave_amplitude = 3.0;     // pixels
    double wave_max_frequency = 1.5; // cycles across the image width
    double texture_amplitude = 0.03;
    std::vector<Degradation> degradations;
    double degradation_jitter = 0.5;  // per-image strength factor in [1 - j, 1 + j]
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

void to_json(nlohmann::json& j, const DomainSpec& s);
void from_json(const nlohmann::json& j, DomainSpec& s);

/// Throws ConfigError when the spec cannot produce valid images.
void validate(const DomainSpec& spec);
/// Throws ConfigError unless the specs differ only in appearance.
void validate_pair(const DomainSpec& source, const DomainSpec& target);

DomainSpec default_source_spec(std::uint64_t seed = 0);
DomainSpec default_target_spec(std::uint64_t seed = 0);

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    std::optional<DomainSpec> spec;  // absent for synthetic datasets
    int n_classes = 0;

    size_t size() const { return train.size() + val.size() + test.size(); }
    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

std::string sample_id(int index);

/// Renders sample `index` of the domain with its label map, regardless of
/// which split it lands in. Pure function of (spec, index).
Sample render_sample(const DomainSpec& spec, int index);

DatasetSplit generate_domain(const DomainSpec& spec, int n);

/// Writes images/<id>.png, labels/<id>.png and manifest.json; returns the manifest path.
fs::path save_dataset(const DatasetSplit& split, const fs::path& dir);
DatasetSplit load_dataset(const fs::path& dir);

/// Checks every Sample / DatasetSplit invariant; throws ValidationError.
void validate_dataset(const DatasetSplit& split);

std::vector<const Sample*> all_samples(const DatasetSplit& split);

}  // namespace uniacorn
