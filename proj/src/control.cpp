// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/control.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace uniacorn {

namespace F = torch::nn::functional;

std::string to_string(ControlKind k) { return k == ControlKind::Semantic ? "semantic" : "uncertainty"; }

ControlKind control_kind_from_string(const std::string& s) {
    if (s == "semantic") return ControlKind::Semantic;
    if (s == "uncertainty") return ControlKind::Uncertainty;
    throw ConfigError("unknown ControlNet kind '" + s + "' (expected semantic|uncertainty)");
}

ControlSignal ControlSignal::semantic(LabelMap labels) { return ControlSignal(std::move(labels)); }

ControlSignal ControlSignal::uncertainty(UncertaintyControlImage image) {
    for (float v : image.pixels.data)
        UNIACORN_EXPECT(v >= 0.0f && v <= 100.0f, ContractError, "uncertainty control value outside [0,100]");
    return ControlSignal(std::move(image));
}

ControlKind ControlSignal::kind() const {
    return std::holds_alternative<LabelMap>(value_) ? ControlKind::Semantic : ControlKind::Uncertainty;
}

const LabelMap& ControlSignal::labels() const {
    UNIACORN_EXPECT(kind() == ControlKind::Semantic, ContractError, "control signal is not semantic");
    return std::get<LabelMap>(value_);
}

const UncertaintyControlImage& ControlSignal::uncertainty_image() const {
    UNIACORN_EXPECT(kind() == ControlKind::Uncertainty, ContractError, "control signal is not an uncertainty image");
    return std::get<UncertaintyControlImage>(value_);
}

void to_json(nlohmann::json& j, const ControlNetConfig& c) {
    j = {{"kind", to_string(c.kind)},
         {"backbone", c.backbone},
         {"n_classes", c.n_classes},
         {"image_height", c.image_height},
         {"image_width", c.image_width},
         {"hint_channels", c.hint_channels}};
}

void from_json(const nlohmann::json& j, ControlNetConfig& c) {
    c.kind = control_kind_from_string(j.at("kind").get<std::string>());
    c.backbone = j.at("backbone").get<BackboneConfig>();
    c.n_classes = j.at("n_classes").get<int>();
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
    c.hint_channels = j.value("hint_channels", 16);
}

SemanticControlEncoderImpl::SemanticControlEncoderImpl(int n_classes, int hint, int out, int steps) {
    nn::Sequential s;
    s->push_back(nn::Conv2d(nn::Conv2dOptions(n_classes, hint, 3).padding(1)));
    s->push_back(nn::SiLU());
    for (int k = 0; k < steps; ++k) {
        s->push_back(nn::Conv2d(nn::Conv2dOptions(hint, hint, 3).stride(2).padding(1)));
        s->push_back(nn::SiLU());
    }
    s->push_back(nn::Conv2d(nn::Conv2dOptions(hint, out, 3).padding(1)));
    body = register_module("body", s);
}

torch::Tensor SemanticControlEncoderImpl::forward(const torch::Tensor& onehot) { return body->forward(onehot); }

UncertaintyControlEncoderImpl::UncertaintyControlEncoderImpl(int hint, int out, int lh, int lw)
    : latent_height(lh), latent_width(lw) {
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(1, hint, 3).padding(1)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(hint, out, 3).padding(1)));
}

torch::Tensor UncertaintyControlEncoderImpl::forward(const torch::Tensor& control_image) {
    auto x = control_image / 50.0 - 1.0;
    x = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({latent_height, latent_width}));
    return conv2(torch::silu(conv1(x)));
}

namespace {

int downsample_steps(int image_size, int latent_size) {
    int steps = 0;
    while ((latent_size << steps) < image_size) ++steps;
    UNIACORN_EXPECT((latent_size << steps) == image_size, ConfigError,
                    "image size must be a power-of-two multiple of the latent size");
    return steps;
}

}  // namespace

ControlNetImpl::ControlNetImpl(const ControlNetConfig& cfg_) : cfg(cfg_) {
    const auto& b = cfg.backbone;
    time_embed = register_module("time_embed", TimeEmbedding(b.channels[0] * 2, b.time_dim));
    down = register_module("down", DownPath(b));
    if (cfg.kind == ControlKind::Semantic) {
        const int steps = downsample_steps(cfg.image_height, b.latent_height);
        UNIACORN_EXPECT(steps == downsample_steps(cfg.image_width, b.latent_width), ConfigError,
                        "anisotropic downsampling is not supported");
        semantic_encoder = register_module(
            "semantic_encoder", SemanticControlEncoder(cfg.n_classes, cfg.hint_channels, b.channels[0], steps));
    } else {
        uncertainty_encoder = register_module(
            "uncertainty_encoder",
            UncertaintyControlEncoder(cfg.hint_channels, b.channels[0], b.latent_height, b.latent_width));
    }
    BackboneImpl probe(b);
    for (const auto& shape : probe.injection_shapes()) {
        auto conv = nn::Conv2d(nn::Conv2dOptions(shape[0], shape[0], 1));
        torch::NoGradGuard no_grad;
        conv->weight.zero_();
        conv->bias.zero_();
        projections->push_back(conv);
    }
    register_module("projections", projections);
}

torch::Tensor ControlNetImpl::encode_condition(const torch::Tensor& condition) {
    if (cfg.kind == ControlKind::Semantic) {
        UNIACORN_EXPECT(condition.dim() == 4 && condition.size(1) == cfg.n_classes, ContractError,
                        "semantic ControlNet expects a one-hot [B,L,H,W] condition");
        return semantic_encoder(condition);
    }
    UNIACORN_EXPECT(condition.dim() == 4 && condition.size(1) == 1, ContractError,
                    "uncertainty ControlNet expects a [B,1,H,W] control image");
    return uncertainty_encoder(condition);
}

ResidualSet ControlNetImpl::forward_encoded(const torch::Tensor& z_t, const torch::Tensor& t,
                                            const torch::Tensor& encoded) {
    auto feats = down(z_t, time_embed(t), encoded);
    ResidualSet out;
    out.blocks.reserve(feats.size());
    for (size_t k = 0; k < feats.size(); ++k) out.blocks.push_back(projections[k]->as<nn::Conv2d>()->forward(feats[k]));
    return out;
}

ControlNet make_controlnet(Backbone& backbone, ControlKind kind, int n_classes, int image_height, int image_width,
                           int hint_channels) {
    ControlNetConfig cfg{kind, backbone->cfg, n_classes, image_height, image_width, hint_channels};
    ControlNet cn(cfg);
    copy_parameters(*backbone->time_embed, *cn->time_embed);
    copy_parameters(*backbone->down, *cn->down);
    return cn;
}

torch::Tensor semantic_condition(std::span<const LabelMap* const> labels, int n_classes) {
    auto t = labels_to_tensor(labels);
    UNIACORN_EXPECT(t.max().item<std::int64_t>() < n_classes, ContractError, "label value >= n_classes in condition");
    return one_hot_labels(t, n_classes);
}

torch::Tensor uncertainty_condition(std::span<const double> values, int height, int width) {
    std::vector<float> v(values.begin(), values.end());
    for (float x : v) UNIACORN_EXPECT(x >= 0.0f && x <= 100.0f, ContractError, "uncertainty condition outside [0,100]");
    return torch::tensor(v).view({static_cast<long>(v.size()), 1, 1, 1}).expand({-1, 1, height, width}).contiguous();
}

torch::Tensor condition_tensor(const ControlSignal& c, int n_classes) {
    if (c.kind() == ControlKind::Semantic) {
        const LabelMap* one[] = {&c.labels()};
        return semantic_condition(one, n_classes);
    }
    const auto& img = c.uncertainty_image().pixels;
    Image as_image(img.height, img.width);
    as_image.data.assign(img.data.begin(), img.data.end());
    const Image* one[] = {&as_image};
    return images_to_tensor(one);
}

ResidualSet controlnet_residuals(ControlNet& cn, const torch::Tensor& z_t, const ControlSignal& c, int t) {
    UNIACORN_EXPECT(c.kind() == cn->cfg.kind, ContractError,
                    "control signal kind " + to_string(c.kind()) + " does not match ControlNet kind " +
                        to_string(cn->cfg.kind));
    torch::NoGradGuard no_grad;
    auto z = z_t.dim() == 3 ? z_t.unsqueeze(0) : z_t;
    auto tt = torch::full({z.size(0)}, t, torch::kInt64);
    auto cond = condition_tensor(c, cn->cfg.n_classes);
    if (cond.size(0) != z.size(0)) cond = cond.expand({z.size(0), -1, -1, -1});
    return cn->forward(z, tt, cond);
}

ControlNetTraining train_controlnet(Backbone& backbone, ControlKind kind, const torch::Tensor& latents,
                                   const torch::Tensor& conditions, const NoiseSchedule& schedule, const FitConfig& cfg,
                                   int n_classes, int image_height, int image_width) {
    validate(cfg);
    UNIACORN_EXPECT(latents.size(0) == conditions.size(0) && latents.size(0) > 0, ContractError,
                    "need one condition per latent");
    torch::manual_seed(cfg.seed);
    ControlNetTraining out;
    out.model = make_controlnet(backbone, kind, n_classes, image_height, image_width);
    auto& cn = out.model;

    backbone->eval();
    std::vector<bool> grad_flags;
    for (auto& p : backbone->parameters()) {
        grad_flags.push_back(p.requires_grad());
        p.set_requires_grad(false);
    }
    cn->train();
    torch::optim::Adam opt(cn->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    auto gen = make_generator(derive_seed(cfg.seed, "controlnet/noise"));
    std::mt19937_64 rng(derive_seed(cfg.seed, "controlnet/shuffle"));
    const long N = latents.size(0);
    std::vector<int64_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            double total = 0;
            long seen = 0;
            for (long b = 0; b < N; b += cfg.batch_size) {
                const long n = std::min<long>(cfg.batch_size, N - b);
                auto idx = torch::from_blob(order.data() + b, {n}, torch::kInt64).clone();
                auto z0 = latents.index_select(0, idx);
                auto cond = conditions.index_select(0, idx);
                auto t = torch::randint(1, schedule.steps() + 1, {n}, gen, torch::kInt64);
                auto noise = torch::randn(z0.sizes(), gen);
                auto zt = forward_diffuse(z0, t, noise, schedule);
                auto residuals = cn->forward(zt, t, cond);
                auto loss = F::mse_loss(backbone->forward(zt, t, &residuals), noise);
                check_finite(loss, to_string(kind) + " ControlNet training epoch " + std::to_string(epoch));
                opt.zero_grad();
                loss.backward();
                opt.step();
                total += loss.item<double>() * n;
                seen += n;
            }
            out.loss_curve.push_back(total / seen);
        }
    } catch (...) {
        size_t k = 0;
        for (auto& p : backbone->parameters()) p.set_requires_grad(grad_flags[k++]);
        throw;
    }
    size_t k = 0;
    for (auto& p : backbone->parameters()) p.set_requires_grad(grad_flags[k++]);
    cn->eval();
    return out;
}

ControlNetTraining train_semantic_controlnet(Backbone& backbone, const torch::Tensor& latents,
                                             std::span<const LabelMap* const> labels, int n_classes,
                                             const NoiseSchedule& schedule, const FitConfig& cfg) {
    UNIACORN_EXPECT(!labels.empty(), ContractError, "semantic ControlNet needs labeled samples");
    auto cond = semantic_condition(labels, n_classes);
    return train_controlnet(backbone, ControlKind::Semantic, latents, cond, schedule, cfg, n_classes,
                            labels[0]->height, labels[0]->width);
}

ControlNetTraining train_uncertainty_controlnet(Backbone& backbone, const torch::Tensor& latents,
                                                std::span<const double> u_values, int image_height, int image_width,
                                                const NoiseSchedule& schedule, const FitConfig& cfg) {
    auto cond = uncertainty_condition(u_values, image_height, image_width);
    return train_controlnet(backbone, ControlKind::Uncertainty, latents, cond, schedule, cfg, 0, image_height,
                            image_width);
}

void save_controlnet(const fs::path& path, ControlNet& cn, const ControlNetProvenance& provenance) {
    nlohmann::json meta{{"kind", "controlnet"},
                        {"arch", cn->cfg},
                        {"backbone_sha256", provenance.backbone_sha256}};
    if (cn->cfg.kind == ControlKind::Uncertainty) meta["segmenter_sha256"] = provenance.segmenter_sha256;
    save_checkpoint(path, *cn, meta);
}

ControlNet load_controlnet(const fs::path& path, ControlNetProvenance* provenance) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "controlnet") throw LoadError(path.string() + " is not a ControlNet checkpoint");
    ControlNet cn(meta.at("arch").get<ControlNetConfig>());
    load_checkpoint_weights(path, *cn);
    cn->eval();
    if (provenance) {
        provenance->backbone_sha256 = meta.value("backbone_sha256", "");
        provenance->segmenter_sha256 = meta.value("segmenter_sha256", "");
    }
    return cn;
}

FitConfig default_controlnet_fit() { return FitConfig{2.5e-5, 150, 32, 0}; }

}  // namespace uniacorn
