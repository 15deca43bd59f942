// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "uniacorn/diffusion.hpp"
#include "uniacorn/uncertainty.hpp"

namespace uniacorn {

enum class ControlKind { Semantic, Uncertainty };

std::string to_string(ControlKind k);
ControlKind control_kind_from_string(const std::string& s);

/// Exactly one of a label map (semantic) or a constant uncertainty image.
class ControlSignal {
public:
    static ControlSignal semantic(LabelMap labels);
    static ControlSignal uncertainty(UncertaintyControlImage image);

    ControlKind kind() const;
    const LabelMap& labels() const;
    const UncertaintyControlImage& uncertainty_image() const;

private:
    explicit ControlSignal(std::variant<LabelMap, UncertaintyControlImage> v) : value_(std::move(v)) {}
    std::variant<LabelMap, UncertaintyControlImage> value_;
};

struct ControlNetConfig {
    ControlKind kind = ControlKind::Semantic;
    BackboneConfig backbone;
    int n_classes = 5;       // semantic condition channels
    int image_height = 64;   // condition resolution
    int image_width = 64;
    int hint_channels = 16;
};

void to_json(nlohmann::json& j, const ControlNetConfig& c);
void from_json(const nlohmann::json& j, ControlNetConfig& c);

/// E_S: one-hot label map -> features at latent resolution through strided convs.
struct SemanticControlEncoderImpl : nn::Module {
    SemanticControlEncoderImpl(int n_classes, int hint_channels, int out_channels, int downsample_steps);
    torch::Tensor forward(const torch::Tensor& onehot);
    nn::Sequential body{nullptr};
};
TORCH_MODULE(SemanticControlEncoder);

/// Constant [0,100] image -> [-1,1] -> pooled to latent size -> two convs.
struct UncertaintyControlEncoderImpl : nn::Module {
    UncertaintyControlEncoderImpl(int hint_channels, int out_channels, int latent_height, int latent_width);
    torch::Tensor forward(const torch::Tensor& control_image);
    nn::Conv2d conv1{nullptr}, conv2{nullptr};
    int latent_height, latent_width;
};
TORCH_MODULE(UncertaintyControlEncoder);

/// Trainable copy of the backbone's time embedding, conv_in, down and mid
/// blocks, plus one zero-initialized 1x1 projection per injection point.
struct ControlNetImpl : nn::Module {
    explicit ControlNetImpl(const ControlNetConfig& cfg);

    /// Condition tensor -> features added after conv_in. Semantic: one-hot
    /// [B,L,H,W]; uncertainty: raw control image [B,1,H,W].
    torch::Tensor encode_condition(const torch::Tensor& condition);
    ResidualSet forward_encoded(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& encoded);
    ResidualSet forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& condition) {
        return forward_encoded(z_t, t, encode_condition(condition));
    }

    ControlNetConfig cfg;
    TimeEmbedding time_embed{nullptr};
    DownPath down{nullptr};
    SemanticControlEncoder semantic_encoder{nullptr};
    UncertaintyControlEncoder uncertainty_encoder{nullptr};
    nn::ModuleList projections;
};
TORCH_MODULE(ControlNet);

/// Builds a ControlNet whose copied blocks start from the backbone's weights.
ControlNet make_controlnet(Backbone& backbone, ControlKind kind, int n_classes, int image_height, int image_width,
                           int hint_channels = 16);

torch::Tensor semantic_condition(std::span<const LabelMap* const> labels, int n_classes);
torch::Tensor uncertainty_condition(std::span<const double> values, int height, int width);
torch::Tensor condition_tensor(const ControlSignal& c, int n_classes);

/// Residuals of one ControlNet for a single latent at step t.
ResidualSet controlnet_residuals(ControlNet& cn, const torch::Tensor& z_t, const ControlSignal& c, int t);

/// Published ControlNet optimizer settings: 150 epochs at lr 2.5e-5.
FitConfig default_controlnet_fit();

struct ControlNetTraining {
    ControlNet model{nullptr};
    std::vector<double> loss_curve;
};

/// Noise-prediction training of a ControlNet against a frozen backbone.
/// `conditions` holds one condition tensor row per latent.
ControlNetTraining train_controlnet(Backbone& backbone, ControlKind kind, const torch::Tensor& latents,
                                   const torch::Tensor& conditions, const NoiseSchedule& schedule, const FitConfig& cfg,
                                   int n_classes, int image_height, int image_width);

ControlNetTraining train_semantic_controlnet(Backbone& backbone, const torch::Tensor& latents,
                                             std::span<const LabelMap* const> labels, int n_classes,
                                             const NoiseSchedule& schedule, const FitConfig& cfg);

/// `u_values` are the cached U_H of every latent's source image under the frozen segmenter.
ControlNetTraining train_uncertainty_controlnet(Backbone& backbone, const torch::Tensor& latents,
                                                std::span<const double> u_values, int image_height, int image_width,
                                                const NoiseSchedule& schedule, const FitConfig& cfg);

struct ControlNetProvenance {
    std::string backbone_sha256;
    std::string segmenter_sha256;  // uncertainty ControlNets only
};

void save_controlnet(const fs::path& path, ControlNet& cn, const ControlNetProvenance& provenance);
ControlNet load_controlnet(const fs::path& path, ControlNetProvenance* provenance = nullptr);

}  // namespace uniacorn
