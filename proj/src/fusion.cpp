// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/fusion.hpp"

#include <cstdio>
#include <random>

namespace uniacorn {

ResidualSet fuse_residuals(const ResidualSet& r_u, const ResidualSet& r_s, double alpha) {
    UNIACORN_EXPECT(r_u.blocks.size() == r_s.blocks.size(), ContractError, "residual sets differ in block count");
    ResidualSet out;
    out.blocks.reserve(r_s.blocks.size());
    for (size_t k = 0; k < r_s.blocks.size(); ++k) {
        UNIACORN_EXPECT(r_u.blocks[k].sizes() == r_s.blocks[k].sizes(), ContractError,
                        "residual shape mismatch in block " + std::to_string(k));
        out.blocks.push_back(alpha * r_u.blocks[k] + r_s.blocks[k]);
    }
    return out;
}

void validate(const FusionConfig& cfg) {
    UNIACORN_EXPECT(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, ConfigError, "alpha must lie in [0,1]");
    UNIACORN_EXPECT(cfg.steps >= 1, ConfigError, "steps must be >= 1");
    UNIACORN_EXPECT(cfg.multiplicity >= 1, ConfigError, "multiplicity must be >= 1");
    UNIACORN_EXPECT(cfg.batch_size >= 1, ConfigError, "batch_size must be >= 1");
    if (cfg.uncertainty.mode == UncertaintySource::Mode::Fixed) {
        UNIACORN_EXPECT(cfg.uncertainty.fixed_u >= 0.0 && cfg.uncertainty.fixed_u <= 100.0, ConfigError,
                        "fixed u must lie in [0,100]");
    } else {
        UNIACORN_EXPECT(cfg.uncertainty.gaussian.std > 0.0, ConfigError, "uncertainty Gaussian needs std > 0");
    }
}

namespace {

void require_models(const GenerativeModels& m, ControlMode mode) {
    UNIACORN_EXPECT(!m.autoencoder.is_empty(), ConfigError, "generation needs a trained autoencoder");
    UNIACORN_EXPECT(!m.backbone.is_empty(), ConfigError, "generation needs a trained backbone");
    if (mode == ControlMode::Dual || mode == ControlMode::SemanticOnly)
        UNIACORN_EXPECT(!m.semantic.is_empty(), ConfigError, "generation needs the semantic ControlNet");
    if (mode == ControlMode::Dual || mode == ControlMode::UncertaintyOnly)
        UNIACORN_EXPECT(!m.uncertainty.is_empty(), ConfigError, "generation needs the uncertainty ControlNet");
}

}  // namespace

std::vector<GenerationRecord> generate_batch(std::span<const GenerationRequest> requests, double alpha, int steps,
                                             GenerativeModels& models, ControlMode mode) {
    UNIACORN_EXPECT(!requests.empty(), ContractError, "empty generation batch");
    UNIACORN_EXPECT(alpha >= 0.0 && alpha <= 1.0, ContractError, "alpha must lie in [0,1]");
    require_models(models, mode);
    torch::NoGradGuard no_grad;

    std::vector<const LabelMap*> labels;
    std::vector<double> us;
    std::vector<torch::Generator> gens;
    for (const auto& r : requests) {
        UNIACORN_EXPECT(r.label_map != nullptr, ContractError, "generation request without a label map");
        labels.push_back(r.label_map);
        us.push_back(MeanUncertainty(r.u).value());
        gens.push_back(make_generator(r.seed));
    }

    const auto sampling = models.schedule.respaced(std::min(steps, models.schedule.steps()));
    ControlHook hook;
    if (mode != ControlMode::Unconditional) {
        torch::Tensor sem_enc, unc_enc;
        const bool use_sem = mode == ControlMode::Dual || mode == ControlMode::SemanticOnly;
        const bool use_unc = mode == ControlMode::Dual || mode == ControlMode::UncertaintyOnly;
        if (use_sem) {
            models.semantic->eval();
            sem_enc = models.semantic->encode_condition(semantic_condition(labels, models.semantic->cfg.n_classes));
        }
        if (use_unc) {
            models.uncertainty->eval();
            unc_enc = models.uncertainty->encode_condition(
                uncertainty_condition(us, models.uncertainty->cfg.image_height, models.uncertainty->cfg.image_width));
        }
        // Both ControlNets see the same z_t at every step.
        hook = [&models, sem_enc, unc_enc, use_sem, use_unc, alpha](const torch::Tensor& z, const torch::Tensor& t) {
            if (use_sem && use_unc) {
                auto r_s = models.semantic->forward_encoded(z, t, sem_enc);
                auto r_u = models.uncertainty->forward_encoded(z, t, unc_enc);
                return fuse_residuals(r_u, r_s, alpha);
            }
            if (use_sem) return models.semantic->forward_encoded(z, t, sem_enc);
            auto r_u = models.uncertainty->forward_encoded(z, t, unc_enc);
            for (auto& b : r_u.blocks) b = alpha * b;
            return r_u;
        };
    }
    auto z = ddpm_sample(models.backbone, sampling, gens, hook);
    auto images = decode_latents(models.autoencoder, z);

    std::vector<GenerationRecord> out;
    out.reserve(requests.size());
    for (size_t k = 0; k < requests.size(); ++k) {
        GenerationRecord rec;
        rec.image = std::move(images[k]);
        rec.label_map = *requests[k].label_map;
        rec.conditioned_u = MeanUncertainty(us[k]);
        rec.seed = requests[k].seed;
        rec.source_id = requests[k].source_id;
        rec.id = "syn-" + requests[k].source_id;
        out.push_back(std::move(rec));
    }
    return out;
}

GenerationRecord generate_image(const LabelMap& label_map, MeanUncertainty u, const FusionConfig& cfg,
                                GenerativeModels& models, const std::string& source_id) {
    validate(cfg);
    GenerationRequest req{&label_map, u.value(), derive_seed(cfg.seed, source_id + "/noise"), source_id};
    return std::move(generate_batch({&req, 1}, cfg.alpha, cfg.steps, models).front());
}

std::vector<GenerationRecord> generate_dataset(std::span<const Sample* const> labeled, const FusionConfig& cfg,
                                               GenerativeModels& models) {
    validate(cfg);
    UNIACORN_EXPECT(!labeled.empty(), ContractError, "generate_dataset needs labeled samples");
    std::vector<GenerationRequest> requests;
    std::vector<std::string> ids;
    for (const auto* s : labeled) {
        UNIACORN_EXPECT(s->label_map.has_value(), ContractError, "sample " + s->id + " has no label map");
        for (int copy = 0; copy < cfg.multiplicity; ++copy) {
            const std::string key = cfg.multiplicity == 1 ? s->id : s->id + "-" + std::to_string(copy);
            double u = cfg.uncertainty.fixed_u;
            if (cfg.uncertainty.mode == UncertaintySource::Mode::Gaussian) {
                std::mt19937_64 rng(derive_seed(cfg.seed, key + "/u"));
                u = sample_uncertainty(cfg.uncertainty.gaussian, rng).value();
            }
            requests.push_back({&*s->label_map, u, derive_seed(cfg.seed, key + "/noise"), s->id});
            ids.push_back("syn-" + key);
        }
    }
    std::vector<GenerationRecord> out;
    out.reserve(requests.size());
    for (size_t b = 0; b < requests.size(); b += cfg.batch_size) {
        const size_t n = std::min<size_t>(cfg.batch_size, requests.size() - b);
        try {
            auto part = generate_batch(std::span(requests).subspan(b, n), cfg.alpha, cfg.steps, models);
            for (auto& r : part) out.push_back(std::move(r));
        } catch (const Error& e) {
            throw Error("generation failed for source " + requests[b].source_id + " (batch of " + std::to_string(n) +
                        "): " + e.what());
        }
    }
    for (size_t k = 0; k < out.size(); ++k) out[k].id = ids[k];
    return out;
}

void measure_records(std::span<GenerationRecord> records, Segmenter& seg) {
    std::vector<const Image*> imgs;
    for (const auto& r : records) imgs.push_back(&r.image);
    auto values = measure_uncertainty(seg, imgs);
    for (size_t k = 0; k < records.size(); ++k) records[k].measured_u = values[k];
}

DatasetSplit records_to_dataset(std::span<const GenerationRecord> records, int n_classes) {
    DatasetSplit ds;
    ds.n_classes = n_classes;
    for (const auto& r : records) {
        Sample s;
        s.id = r.id;
        s.domain = Domain::SyntheticLabeled;
        s.image = r.image;
        for (auto& v : s.image.data) v = std::clamp(v, 0.0f, 1.0f);
        s.label_map = r.label_map;
        ds.train.push_back(std::move(s));
    }
    return ds;
}

fs::path save_generated(std::span<const GenerationRecord> records, int n_classes, const fs::path& dir) {
    auto manifest = save_dataset(records_to_dataset(records, n_classes), dir);
    std::string csv = "id,source_id,conditioned_u,measured_u,seed\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, ",%.10g,%s,%llu\n", r.conditioned_u.value(),
                      r.measured_u ? std::to_string(*r.measured_u).c_str() : "",
                      static_cast<unsigned long long>(r.seed));
        csv += r.id + "," + r.source_id + buf;
    }
    write_file_atomic(dir / "generation.csv", csv);
    return manifest;
}

}  // namespace uniacorn
