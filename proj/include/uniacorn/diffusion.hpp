// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "uniacorn/nn_blocks.hpp"

namespace uniacorn {

// -----------------------------------------------------------------------------
// Noise schedule
// -----------------------------------------------------------------------------

/// Discrete forward-noising schedule. Steps are 1-based: beta(t), alpha_bar(t)
/// for t in [1, steps()]. `model_step(t)` is the time index the noise
/// predictor was trained with; it differs from t only in respaced schedules.
class NoiseSchedule {
public:
    /// Linear betas from beta_start to beta_end. For T != 1000 both ends are
    /// scaled by 1000 / T so alpha_bar(T) stays near zero.
    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 2e-2);

    /// Evenly strided subsequence of `steps` time steps with betas recomputed
    /// from the retained alpha_bar values.
    NoiseSchedule respaced(int steps) const;

    int steps() const { return static_cast<int>(betas_.size()); }
    int train_steps() const { return train_steps_; }
    double beta(int t) const;
    double alpha_bar(int t) const;
    int model_step(int t) const;

private:
    NoiseSchedule(std::vector<double> betas, std::vector<int> model_steps, int train_steps, bool increasing = true);
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
    std::vector<int> model_steps_;
    int train_steps_ = 0;
};

struct ScheduleConfig {
    int train_steps = 1000;
    int sample_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise.
torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& noise, const NoiseSchedule& schedule);
/// Batched variant with one step per leading-dimension entry (`t` is int64 [B]).
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise,
                              const NoiseSchedule& schedule);

/// Optimizer settings shared by the generative models.
struct FitConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);
void validate(const FitConfig& c);

// -----------------------------------------------------------------------------
// Autoencoder
// -----------------------------------------------------------------------------

struct AutoencoderConfig {
    int height = 64;
    int width = 64;
    int downsample = 4;       // spatial factor f, a power of two
    int latent_channels = 4;  // C_z
    std::vector<int> channels{32, 64, 64};  // log2(f) + 1 stages
    bool identity = false;    // pixel-space diffusion for debugging

    int latent_height() const { return identity ? height : height / downsample; }
    int latent_width() const { return identity ? width : width / downsample; }
    int latent_depth() const { return identity ? 1 : latent_channels; }
};

void to_json(nlohmann::json& j, const AutoencoderConfig& c);
void from_json(const nlohmann::json& j, AutoencoderConfig& c);
void validate(const AutoencoderConfig& c);

struct AutoencoderImpl : nn::Module {
    explicit AutoencoderImpl(const AutoencoderConfig& cfg);

    /// [B,1,H,W] in [0,1] -> [B,C_z,H/f,W/f], divided by the fitted latent scale.
    torch::Tensor encode(const torch::Tensor& x);
    /// Inverse of encode; output clamped to [0,1] outside training.
    torch::Tensor decode(const torch::Tensor& z);
    torch::Tensor forward(const torch::Tensor& x) { return decode(encode(x)); }

    AutoencoderConfig cfg;
    nn::Sequential encoder{nullptr}, decoder{nullptr};
    torch::Tensor latent_scale;
};
TORCH_MODULE(Autoencoder);

struct AutoencoderTraining {
    Autoencoder model{nullptr};
    std::vector<double> loss_curve;  // mean L1 per epoch
    double heldout_mae = 0.0;
};

AutoencoderTraining train_autoencoder(std::span<const Image* const> train, std::span<const Image* const> heldout,
                                      const AutoencoderConfig& arch, const FitConfig& cfg);
double reconstruction_mae(Autoencoder& ae, std::span<const Image* const> images);
torch::Tensor encode_images(Autoencoder& ae, std::span<const Image* const> images, int batch_size = 128);
std::vector<Image> decode_latents(Autoencoder& ae, const torch::Tensor& z);

void save_autoencoder(const fs::path& path, Autoencoder& ae);
Autoencoder load_autoencoder(const fs::path& path);

// -----------------------------------------------------------------------------
// Time-conditioned noise predictor
// -----------------------------------------------------------------------------

struct BackboneConfig {
    int latent_channels = 4;
    int latent_height = 16;
    int latent_width = 16;
    std::vector<int> channels{32, 64};
    int time_dim = 128;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Per-injection-point residuals added to the backbone's skip and mid
/// activations. Order matches Backbone::injection_shapes().
struct ResidualSet {
    std::vector<torch::Tensor> blocks;
};

/// conv_in, one residual block per level with stride-2 downsampling between
/// levels, and the mid block. Emits one activation per injection point:
/// [conv_in, level_0, ..., level_{n-1}, mid].
struct DownPathImpl : nn::Module {
    explicit DownPathImpl(const BackboneConfig& cfg);
    std::vector<torch::Tensor> forward(const torch::Tensor& z, const torch::Tensor& temb,
                                       const torch::Tensor& cond = {});

    nn::Conv2d conv_in{nullptr};
    nn::ModuleList levels, downsamplers;
    ResBlock mid1{nullptr}, mid2{nullptr};
};
TORCH_MODULE(DownPath);

struct UpPathImpl : nn::Module {
    explicit UpPathImpl(const BackboneConfig& cfg);
    torch::Tensor forward(const std::vector<torch::Tensor>& feats, const torch::Tensor& temb);

    nn::ModuleList levels, upsamplers;
    ResBlock final_block{nullptr};
    nn::GroupNorm norm_out{nullptr};
    nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(UpPath);

struct BackboneImpl : nn::Module {
    explicit BackboneImpl(const BackboneConfig& cfg);

    /// Predicts the noise in z_t; residuals, when given, are added to the
    /// matching down/mid activations before the up path consumes them.
    torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const ResidualSet* residuals = nullptr);

    /// [C, h, w] of every injection point, in ResidualSet order.
    std::vector<std::vector<int64_t>> injection_shapes() const;

    BackboneConfig cfg;
    TimeEmbedding time_embed{nullptr};
    DownPath down{nullptr};
    UpPath up{nullptr};
};
TORCH_MODULE(Backbone);

struct BackboneTraining {
    Backbone model{nullptr};
    std::vector<double> loss_curve;  // mean MSE per epoch
};

/// Noise-prediction training with t drawn uniformly from [1, T].
BackboneTraining train_ddpm(const torch::Tensor& latents, const NoiseSchedule& schedule, const BackboneConfig& arch,
                            const FitConfig& cfg);
/// One optimizer step on a fixed batch; returns (loss before, loss after) on that batch
/// with the same t and noise.
std::pair<double, double> ddpm_descent_step(Backbone& model, torch::optim::Optimizer& opt, const torch::Tensor& z0,
                                            const NoiseSchedule& schedule, std::uint64_t seed);

void save_backbone(const fs::path& path, Backbone& model);
Backbone load_backbone(const fs::path& path);

/// Supplies residuals for the current latent batch at one reverse step.
/// Arguments: z_t [B,C,h,w] and the model time step as an int64 [B] tensor.
using ControlHook = std::function<ResidualSet(const torch::Tensor& z_t, const torch::Tensor& t)>;

/// Ancestral DDPM sampling from pure noise. Each batch entry draws all of its
/// noise from its own generator, so trajectories are independent of batching
/// order. Returns the final latent batch.
torch::Tensor ddpm_sample(Backbone& model, const NoiseSchedule& schedule, std::vector<torch::Generator>& generators,
                          const ControlHook& hook = {});

}  // namespace uniacorn
