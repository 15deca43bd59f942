// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace uniacorn {

MeanUncertainty::MeanUncertainty(double v) : value_(v) {
    UNIACORN_EXPECT(std::isfinite(v) && v >= 0.0 && v <= 100.0, ContractError,
                    "mean uncertainty must lie in [0,100], got " + std::to_string(v));
}

void to_json(nlohmann::json& j, const UncertaintyGaussian& g) {
    j = {{"mean", g.mean}, {"std", g.std}, {"n", g.n_fit}};
}

void from_json(const nlohmann::json& j, UncertaintyGaussian& g) {
    g.mean = j.at("mean").get<double>();
    g.std = j.at("std").get<double>();
    g.n_fit = j.value("n", 0);
}

EntropyMap pixelwise_entropy(const ProbabilityMap& p) {
    EntropyMap h(p.height, p.width);
    const int L = p.n_classes;
    for (size_t px = 0; px < p.pixels(); ++px) {
        double acc = 0.0;
        for (int c = 0; c < L; ++c) {
            const double v = p.values[px * L + c];
            if (v > 0.0) acc -= v * std::log(v);
        }
        h.data[px] = std::clamp(acc, 0.0, std::log(static_cast<double>(L)));
    }
    return h;
}

MeanUncertainty mean_uncertainty(const EntropyMap& h, int n_classes) {
    UNIACORN_EXPECT(n_classes >= 2, ContractError, "mean_uncertainty needs at least two labels");
    UNIACORN_EXPECT(!h.data.empty(), ContractError, "mean_uncertainty of an empty entropy map");
    double sum = 0.0;
    for (double v : h.data) sum += v;
    const double u = 100.0 * sum / (static_cast<double>(h.size()) * std::log(static_cast<double>(n_classes)));
    return MeanUncertainty(std::clamp(u, 0.0, 100.0));
}

UncertaintyControlImage make_control_image(MeanUncertainty u, int height, int width) {
    return {Grid<float>(height, width, static_cast<float>(u.value()))};
}

std::vector<double> measure_uncertainty(Segmenter& seg, std::span<const Image* const> images) {
    std::vector<double> out;
    out.reserve(images.size());
    for (size_t b = 0; b < images.size(); b += 64) {
        auto chunk = images.subspan(b, std::min<size_t>(64, images.size() - b));
        for (const auto& p : predict_probs(seg, chunk))
            out.push_back(mean_uncertainty(pixelwise_entropy(p), p.n_classes).value());
    }
    return out;
}

UncertaintyGaussian fit_gaussian(std::span<const double> values) {
    UNIACORN_EXPECT(values.size() >= 2, ValidationError, "fit_gaussian needs at least two values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (values.size() - 1));
    if (!(sd > 0.0)) throw ValidationError("degenerate uncertainty distribution: all values identical");
    return {mean, sd, static_cast<int>(values.size())};
}

UncertaintyFit fit_gaussian(std::span<const Sample* const> samples, Segmenter& seg) {
    UncertaintyFit fit;
    std::vector<const Image*> imgs;
    for (const auto* s : samples) {
        fit.ids.push_back(s->id);
        imgs.push_back(&s->image);
    }
    fit.values = measure_uncertainty(seg, imgs);
    fit.gaussian = fit_gaussian(fit.values);
    return fit;
}

MeanUncertainty sample_uncertainty(const UncertaintyGaussian& g, std::mt19937_64& rng) {
    UNIACORN_EXPECT(g.std > 0.0, ContractError, "uncertainty Gaussian needs std > 0");
    std::normal_distribution<double> dist(g.mean, g.std);
    return MeanUncertainty(std::clamp(dist(rng), 0.0, 100.0));
}

void write_uncertainty_report(const fs::path& stem, const UncertaintyFit& fit) {
    std::string csv = "id,u_h\n";
    char buf[160];
    for (size_t k = 0; k < fit.values.size(); ++k) {
        std::snprintf(buf, sizeof buf, ",%.10g\n", fit.values[k]);
        csv += fit.ids[k] + buf;
    }
    fs::path csv_path = stem, json_path = stem;
    csv_path += ".csv";
    json_path += ".json";
    write_file_atomic(csv_path, csv);
    write_file_atomic(json_path, nlohmann::json(fit.gaussian).dump(2));
}

UncertaintyGaussian read_gaussian(const fs::path& json_path) {
    auto g = nlohmann::json::parse(read_text_file(json_path)).get<UncertaintyGaussian>();
    UNIACORN_EXPECT(g.std > 0.0, ValidationError, "Gaussian in " + json_path.string() + " has std <= 0");
    return g;
}

}  // namespace uniacorn
