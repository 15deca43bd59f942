// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "uniacorn/segmentation.hpp"

namespace uniacorn {

/// Per-pixel entropy in nats; each value lies in [0, ln L].
using EntropyMap = Grid<double>;

/// Normalized mean image uncertainty, always in [0, 100].
class MeanUncertainty {
public:
    MeanUncertainty() = default;
    explicit MeanUncertainty(double v);
    double value() const { return value_; }
    friend bool operator==(const MeanUncertainty&, const MeanUncertainty&) = default;

private:
    double value_ = 0.0;
};

/// Constant control image carrying one MeanUncertainty in raw [0,100] units.
struct UncertaintyControlImage {
    Grid<float> pixels;
    double value() const { return pixels.data.empty() ? 0.0 : pixels.data.front(); }
};

struct UncertaintyGaussian {
    double mean = 0.0;
    double std = 1.0;
    int n_fit = 0;
};

void to_json(nlohmann::json& j, const UncertaintyGaussian& g);
void from_json(const nlohmann::json& j, UncertaintyGaussian& g);

EntropyMap pixelwise_entropy(const ProbabilityMap& p);
MeanUncertainty mean_uncertainty(const EntropyMap& h, int n_classes);
UncertaintyControlImage make_control_image(MeanUncertainty u, int height, int width);

/// U_H of every image under a frozen segmenter.
std::vector<double> measure_uncertainty(Segmenter& seg, std::span<const Image* const> images);

/// Mean and sample (n-1) standard deviation; throws ValidationError for fewer
/// than two values or a zero spread.
UncertaintyGaussian fit_gaussian(std::span<const double> values);

struct UncertaintyFit {
    UncertaintyGaussian gaussian;
    std::vector<std::string> ids;
    std::vector<double> values;
};

UncertaintyFit fit_gaussian(std::span<const Sample* const> samples, Segmenter& seg);

/// One draw from the Gaussian, clamped to [0,100].
MeanUncertainty sample_uncertainty(const UncertaintyGaussian& g, std::mt19937_64& rng);

/// Writes <stem>.csv (id,u_h) and <stem>.json (mean, std, n).
void write_uncertainty_report(const fs::path& stem, const UncertaintyFit& fit);
UncertaintyGaussian read_gaussian(const fs::path& json_path);

}  // namespace uniacorn
