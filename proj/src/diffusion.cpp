// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace uniacorn {

namespace F = torch::nn::functional;

// -----------------------------------------------------------------------------
// NoiseSchedule
// -----------------------------------------------------------------------------

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::vector<int> model_steps, int train_steps,
                             bool increasing)
    : betas_(std::move(betas)), model_steps_(std::move(model_steps)), train_steps_(train_steps) {
    UNIACORN_EXPECT(!betas_.empty(), ConfigError, "noise schedule needs at least one step");
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (size_t k = 0; k < betas_.size(); ++k) {
        UNIACORN_EXPECT(betas_[k] > 0.0 && betas_[k] < 1.0, ConfigError, "betas must lie in (0,1)");
        if (k > 0 && increasing) UNIACORN_EXPECT(betas_[k] > betas_[k - 1], ConfigError, "betas must be strictly increasing");
        prod *= 1.0 - betas_[k];
        alpha_bars_[k] = prod;
        if (k > 0) UNIACORN_EXPECT(alpha_bars_[k] < alpha_bars_[k - 1], ConfigError, "alpha_bar must decrease");
    }
}

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    UNIACORN_EXPECT(T >= 2, ConfigError, "noise schedule needs T >= 2");
    UNIACORN_EXPECT(beta_start > 0 && beta_end > beta_start, ConfigError, "need 0 < beta_start < beta_end");
    const double scale = 1000.0 / T;
    std::vector<double> betas(T);
    std::vector<int> steps(T);
    for (int k = 0; k < T; ++k) {
        betas[k] = scale * (beta_start + (beta_end - beta_start) * k / (T - 1));
        steps[k] = k + 1;
    }
    UNIACORN_EXPECT(betas.back() < 1.0, ConfigError, "scaled beta_end must stay below 1; raise T");
    return NoiseSchedule(std::move(betas), std::move(steps), T);
}

NoiseSchedule NoiseSchedule::respaced(int count) const {
    const int T = steps();
    UNIACORN_EXPECT(count >= 1 && count <= T, ConfigError, "respaced step count must be in [1, T]");
    if (count == T) return *this;
    std::vector<int> kept;
    for (int k = 0; k < count; ++k) {
        // Evenly strided, ending at T; uneven strides can break beta monotonicity.
        const int t = static_cast<int>(std::lround(static_cast<double>(k + 1) * T / count));
        if (kept.empty() || kept.back() != t) kept.push_back(t);
    }
    std::vector<double> betas;
    std::vector<int> model_steps;
    double prev = 1.0;
    for (int t : kept) {
        betas.push_back(1.0 - alpha_bar(t) / prev);
        prev = alpha_bar(t);
        model_steps.push_back(model_step(t));
    }
    return NoiseSchedule(std::move(betas), std::move(model_steps), train_steps_, false);
}

double NoiseSchedule::beta(int t) const {
    UNIACORN_EXPECT(t >= 1 && t <= steps(), ContractError, "time step out of range");
    return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    UNIACORN_EXPECT(t >= 1 && t <= steps(), ContractError, "time step out of range");
    return alpha_bars_[t - 1];
}

int NoiseSchedule::model_step(int t) const {
    UNIACORN_EXPECT(t >= 1 && t <= steps(), ContractError, "time step out of range");
    return model_steps_[t - 1];
}

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
    j = {{"train_steps", c.train_steps},
         {"sample_steps", c.sample_steps},
         {"beta_start", c.beta_start},
         {"beta_end", c.beta_end}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
    ScheduleConfig d;
    c.train_steps = j.value("train_steps", d.train_steps);
    c.sample_steps = j.value("sample_steps", c.train_steps);
    c.beta_start = j.value("beta_start", d.beta_start);
    c.beta_end = j.value("beta_end", d.beta_end);
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& noise,
                              const NoiseSchedule& schedule) {
    UNIACORN_EXPECT(t >= 1 && t <= schedule.steps(), ContractError,
                    "forward_diffuse: t=" + std::to_string(t) + " outside [1," + std::to_string(schedule.steps()) + "]");
    UNIACORN_EXPECT(z0.sizes() == noise.sizes(), ContractError, "forward_diffuse: noise shape differs from z0");
    const double ab = schedule.alpha_bar(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * noise;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise,
                              const NoiseSchedule& schedule) {
    UNIACORN_EXPECT(t.dim() == 1 && t.size(0) == z0.size(0), ContractError, "forward_diffuse: need one t per sample");
    std::vector<float> a(t.size(0)), b(t.size(0));
    auto tt = t.to(torch::kInt64).contiguous();
    for (long k = 0; k < t.size(0); ++k) {
        const auto step = static_cast<int>(tt.data_ptr<std::int64_t>()[k]);
        UNIACORN_EXPECT(step >= 1 && step <= schedule.steps(), ContractError, "forward_diffuse: t out of range");
        const double ab = schedule.alpha_bar(step);
        a[k] = static_cast<float>(std::sqrt(ab));
        b[k] = static_cast<float>(std::sqrt(1.0 - ab));
    }
    auto shape = std::vector<int64_t>(z0.dim(), 1);
    shape[0] = t.size(0);
    auto ta = torch::tensor(a).view(shape).to(z0.dtype());
    auto tb = torch::tensor(b).view(shape).to(z0.dtype());
    return ta * z0 + tb * noise;
}

void to_json(nlohmann::json& j, const FitConfig& c) {
    j = {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FitConfig& c) {
    FitConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
}

void validate(const FitConfig& c) {
    UNIACORN_EXPECT(c.learning_rate > 0, ConfigError, "learning_rate must be > 0");
    UNIACORN_EXPECT(c.epochs >= 1, ConfigError, "epochs must be >= 1");
    UNIACORN_EXPECT(c.batch_size >= 1, ConfigError, "batch_size must be >= 1");
}

// -----------------------------------------------------------------------------
// Autoencoder
// -----------------------------------------------------------------------------

void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
    j = {{"height", c.height},
         {"width", c.width},
         {"downsample", c.downsample},
         {"latent_channels", c.latent_channels},
         {"channels", c.channels},
         {"identity", c.identity}};
}

void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
    AutoencoderConfig d;
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.downsample = j.value("downsample", d.downsample);
    c.latent_channels = j.value("latent_channels", d.latent_channels);
    c.channels = j.value("channels", d.channels);
    c.identity = j.value("identity", d.identity);
}

namespace {

int log2_exact(int f) {
    int n = 0;
    while ((1 << n) < f) ++n;
    return (1 << n) == f ? n : -1;
}

struct ResUnitImpl : nn::Module {
    explicit ResUnitImpl(int ch) { block = register_module("block", ResBlock(ch, ch, 0)); }
    torch::Tensor forward(const torch::Tensor& x) { return block(x); }
    ResBlock block{nullptr};
};
TORCH_MODULE(ResUnit);

}  // namespace

void validate(const AutoencoderConfig& c) {
    if (c.identity) return;
    const int n = log2_exact(c.downsample);
    UNIACORN_EXPECT(n >= 0, ConfigError, "autoencoder downsample factor must be a power of two");
    UNIACORN_EXPECT(c.height % c.downsample == 0 && c.width % c.downsample == 0, ConfigError,
                    "downsample factor " + std::to_string(c.downsample) + " does not divide image size " +
                        std::to_string(c.height) + "x" + std::to_string(c.width));
    UNIACORN_EXPECT(static_cast<int>(c.channels.size()) == n + 1, ConfigError,
                    "autoencoder needs log2(downsample) + 1 channel entries");
    UNIACORN_EXPECT(c.latent_channels >= 1, ConfigError, "latent_channels must be >= 1");
}

AutoencoderImpl::AutoencoderImpl(const AutoencoderConfig& cfg_) : cfg(cfg_) {
    validate(cfg);
    latent_scale = register_buffer("latent_scale", torch::ones({1}));
    if (cfg.identity) return;
    const auto& ch = cfg.channels;
    const int n = static_cast<int>(ch.size()) - 1;
    nn::Sequential enc;
    enc->push_back(nn::Conv2d(nn::Conv2dOptions(1, ch[0], 3).padding(1)));
    for (int s = 0; s < n; ++s) {
        enc->push_back(nn::SiLU());
        enc->push_back(nn::Conv2d(nn::Conv2dOptions(ch[s], ch[s + 1], 4).stride(2).padding(1)));
        enc->push_back(ResUnit(ch[s + 1]));
    }
    enc->push_back(nn::GroupNorm(group_count(ch[n]), ch[n]));
    enc->push_back(nn::SiLU());
    enc->push_back(nn::Conv2d(nn::Conv2dOptions(ch[n], cfg.latent_channels, 3).padding(1)));
    encoder = register_module("encoder", enc);

    nn::Sequential dec;
    dec->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.latent_channels, ch[n], 3).padding(1)));
    dec->push_back(ResUnit(ch[n]));
    for (int s = n - 1; s >= 0; --s) {
        dec->push_back(nn::Upsample(
            nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
        dec->push_back(nn::Conv2d(nn::Conv2dOptions(ch[s + 1], ch[s], 3).padding(1)));
        dec->push_back(ResUnit(ch[s]));
    }
    dec->push_back(nn::GroupNorm(group_count(ch[0]), ch[0]));
    dec->push_back(nn::SiLU());
    dec->push_back(nn::Conv2d(nn::Conv2dOptions(ch[0], 1, 3).padding(1)));
    decoder = register_module("decoder", dec);
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& x) {
    UNIACORN_EXPECT(x.dim() == 4 && x.size(1) == 1 && x.size(2) == cfg.height && x.size(3) == cfg.width,
                    ContractError, "autoencoder input must be [B,1,H,W] at the configured size");
    if (cfg.identity) return (x * 2.0 - 1.0) / latent_scale;
    return encoder->forward(x * 2.0 - 1.0) / latent_scale;
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& z) {
    auto raw = z * latent_scale;
    if (cfg.identity) return ((raw + 1.0) * 0.5).clamp(0.0, 1.0);
    auto out = torch::sigmoid(decoder->forward(raw));
    return out;
}

double reconstruction_mae(Autoencoder& ae, std::span<const Image* const> images) {
    torch::NoGradGuard no_grad;
    ae->eval();
    double total = 0;
    size_t count = 0;
    for (size_t b = 0; b < images.size(); b += 128) {
        auto x = images_to_tensor(images.subspan(b, std::min<size_t>(128, images.size() - b)));
        total += (ae->forward(x) - x).abs().sum().item<double>();
        count += x.numel();
    }
    return count ? total / count : 0.0;
}

AutoencoderTraining train_autoencoder(std::span<const Image* const> train, std::span<const Image* const> heldout,
                                      const AutoencoderConfig& arch, const FitConfig& cfg) {
    validate(cfg);
    UNIACORN_EXPECT(!train.empty(), ContractError, "train_autoencoder needs images");
    torch::manual_seed(cfg.seed);
    AutoencoderTraining out;
    out.model = Autoencoder(arch);
    auto& ae = out.model;
    if (!arch.identity) {
        torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
        std::mt19937_64 rng(derive_seed(cfg.seed, "autoencoder/shuffle"));
        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            ae->train();
            std::shuffle(order.begin(), order.end(), rng);
            double total = 0;
            size_t seen = 0;
            for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
                std::vector<const Image*> batch;
                for (size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(train[order[k]]);
                auto x = images_to_tensor(batch);
                auto loss = (ae->forward(x) - x).abs().mean();
                check_finite(loss, "autoencoder training epoch " + std::to_string(epoch));
                opt.zero_grad();
                loss.backward();
                opt.step();
                total += loss.item<double>() * batch.size();
                seen += batch.size();
            }
            out.loss_curve.push_back(total / seen);
        }
    }
    // Latents are rescaled to unit variance for the diffusion model.
    {
        torch::NoGradGuard no_grad;
        ae->eval();
        ae->latent_scale.fill_(1.0);
        auto z = encode_images(ae, train);
        const double sd = z.std().item<double>();
        if (std::isfinite(sd) && sd > 1e-6) ae->latent_scale.fill_(sd);
    }
    out.heldout_mae = reconstruction_mae(ae, heldout.empty() ? train : heldout);
    return out;
}

torch::Tensor encode_images(Autoencoder& ae, std::span<const Image* const> images, int batch_size) {
    torch::NoGradGuard no_grad;
    ae->eval();
    std::vector<torch::Tensor> parts;
    for (size_t b = 0; b < images.size(); b += batch_size)
        parts.push_back(ae->encode(images_to_tensor(images.subspan(b, std::min<size_t>(batch_size, images.size() - b)))));
    return torch::cat(parts, 0);
}

std::vector<Image> decode_latents(Autoencoder& ae, const torch::Tensor& z) {
    torch::NoGradGuard no_grad;
    ae->eval();
    auto x = ae->decode(z).clamp(0.0, 1.0);
    std::vector<Image> out;
    for (long b = 0; b < x.size(0); ++b) {
        Image img = tensor_to_image(x[b]);
        for (auto& v : img.data) {
            if (!std::isfinite(v)) v = 0.0f;
        }
        out.push_back(std::move(img));
    }
    return out;
}

void save_autoencoder(const fs::path& path, Autoencoder& ae) {
    save_checkpoint(path, *ae, {{"kind", "autoencoder"}, {"arch", ae->cfg}});
}

Autoencoder load_autoencoder(const fs::path& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "autoencoder") throw LoadError(path.string() + " is not an autoencoder checkpoint");
    Autoencoder ae(meta.at("arch").get<AutoencoderConfig>());
    load_checkpoint_weights(path, *ae);
    ae->eval();
    return ae;
}

// -----------------------------------------------------------------------------
// Backbone
// -----------------------------------------------------------------------------

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"latent_channels", c.latent_channels},
         {"latent_height", c.latent_height},
         {"latent_width", c.latent_width},
         {"channels", c.channels},
         {"time_dim", c.time_dim}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    BackboneConfig d;
    c.latent_channels = j.value("latent_channels", d.latent_channels);
    c.latent_height = j.value("latent_height", d.latent_height);
    c.latent_width = j.value("latent_width", d.latent_width);
    c.channels = j.value("channels", d.channels);
    c.time_dim = j.value("time_dim", d.time_dim);
}

DownPathImpl::DownPathImpl(const BackboneConfig& cfg) {
    const auto& ch = cfg.channels;
    UNIACORN_EXPECT(!ch.empty(), ConfigError, "backbone needs at least one level");
    const int factor = 1 << (ch.size() - 1);
    UNIACORN_EXPECT(cfg.latent_height % factor == 0 && cfg.latent_width % factor == 0, ConfigError,
                    "latent size must be divisible by 2^(levels-1)");
    conv_in = register_module("conv_in", nn::Conv2d(nn::Conv2dOptions(cfg.latent_channels, ch[0], 3).padding(1)));
    int in = ch[0];
    for (size_t i = 0; i < ch.size(); ++i) {
        levels->push_back(ResBlock(in, ch[i], cfg.time_dim));
        in = ch[i];
        if (i + 1 < ch.size()) downsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(in, in, 3).stride(2).padding(1)));
    }
    register_module("levels", levels);
    register_module("downsamplers", downsamplers);
    mid1 = register_module("mid1", ResBlock(in, in, cfg.time_dim));
    mid2 = register_module("mid2", ResBlock(in, in, cfg.time_dim));
}

std::vector<torch::Tensor> DownPathImpl::forward(const torch::Tensor& z, const torch::Tensor& temb,
                                                 const torch::Tensor& cond) {
    std::vector<torch::Tensor> feats;
    auto h = conv_in(z);
    if (cond.defined()) h = h + cond;
    feats.push_back(h);
    for (size_t i = 0; i < levels->size(); ++i) {
        h = levels[i]->as<ResBlock>()->forward(h, temb);
        feats.push_back(h);
        if (i < downsamplers->size()) h = downsamplers[i]->as<nn::Conv2d>()->forward(h);
    }
    h = mid2(mid1(h, temb), temb);
    feats.push_back(h);
    return feats;
}

UpPathImpl::UpPathImpl(const BackboneConfig& cfg) {
    const auto& ch = cfg.channels;
    const int n = static_cast<int>(ch.size());
    for (int i = n - 1; i >= 0; --i) {
        const int in = (i == n - 1 ? ch[n - 1] : ch[i + 1]) + ch[i];
        levels->push_back(ResBlock(in, ch[i], cfg.time_dim));
        if (i > 0) {
            upsamplers->push_back(nn::Sequential(
                nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)),
                nn::Conv2d(nn::Conv2dOptions(ch[i], ch[i], 3).padding(1))));
        }
    }
    register_module("levels", levels);
    register_module("upsamplers", upsamplers);
    final_block = register_module("final_block", ResBlock(2 * ch[0], ch[0], cfg.time_dim));
    norm_out = register_module("norm_out", nn::GroupNorm(group_count(ch[0]), ch[0]));
    conv_out = register_module("conv_out", nn::Conv2d(nn::Conv2dOptions(ch[0], cfg.latent_channels, 3).padding(1)));
}

torch::Tensor UpPathImpl::forward(const std::vector<torch::Tensor>& feats, const torch::Tensor& temb) {
    const int n = static_cast<int>(levels->size());
    auto h = feats.back();
    for (int k = 0; k < n; ++k) {
        const int i = n - 1 - k;
        h = levels[k]->as<ResBlock>()->forward(torch::cat({h, feats[i + 1]}, 1), temb);
        if (i > 0) h = upsamplers[k]->as<nn::Sequential>()->forward(h);
    }
    h = final_block(torch::cat({h, feats[0]}, 1), temb);
    return conv_out(torch::silu(norm_out(h)));
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg_) : cfg(cfg_) {
    time_embed = register_module("time_embed", TimeEmbedding(cfg.channels[0] * 2, cfg.time_dim));
    down = register_module("down", DownPath(cfg));
    up = register_module("up", UpPath(cfg));
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const ResidualSet* residuals) {
    auto temb = time_embed(t);
    auto feats = down(z_t, temb);
    if (residuals) {
        UNIACORN_EXPECT(residuals->blocks.size() == feats.size(), ContractError,
                        "residual set has " + std::to_string(residuals->blocks.size()) + " blocks, backbone expects " +
                            std::to_string(feats.size()));
        for (size_t k = 0; k < feats.size(); ++k) {
            UNIACORN_EXPECT(residuals->blocks[k].sizes() == feats[k].sizes(), ContractError,
                            "residual shape mismatch at injection point " + std::to_string(k));
            feats[k] = feats[k] + residuals->blocks[k];
        }
    }
    return up(feats, temb);
}

std::vector<std::vector<int64_t>> BackboneImpl::injection_shapes() const {
    std::vector<std::vector<int64_t>> shapes;
    const auto& ch = cfg.channels;
    shapes.push_back({ch[0], cfg.latent_height, cfg.latent_width});
    for (size_t i = 0; i < ch.size(); ++i)
        shapes.push_back({ch[i], cfg.latent_height >> i, cfg.latent_width >> i});
    const size_t last = ch.size() - 1;
    shapes.push_back({ch[last], cfg.latent_height >> last, cfg.latent_width >> last});
    return shapes;
}

namespace {

torch::Tensor noise_prediction_loss(Backbone& model, const torch::Tensor& z0, const torch::Tensor& t,
                                    const torch::Tensor& noise, const NoiseSchedule& schedule) {
    auto zt = forward_diffuse(z0, t, noise, schedule);
    return F::mse_loss(model(zt, t), noise);
}

}  // namespace

BackboneTraining train_ddpm(const torch::Tensor& latents, const NoiseSchedule& schedule, const BackboneConfig& arch,
                            const FitConfig& cfg) {
    validate(cfg);
    UNIACORN_EXPECT(latents.dim() == 4 && latents.size(0) > 0, ContractError, "train_ddpm needs [N,C,h,w] latents");
    UNIACORN_EXPECT(latents.size(1) == arch.latent_channels && latents.size(2) == arch.latent_height &&
                        latents.size(3) == arch.latent_width,
                    ContractError, "latent shape does not match backbone configuration");
    torch::manual_seed(cfg.seed);
    BackboneTraining out;
    out.model = Backbone(arch);
    auto& model = out.model;
    model->train();
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    auto gen = make_generator(derive_seed(cfg.seed, "ddpm/noise"));
    std::mt19937_64 rng(derive_seed(cfg.seed, "ddpm/shuffle"));
    const long N = latents.size(0);
    std::vector<int64_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        long seen = 0;
        for (long b = 0; b < N; b += cfg.batch_size) {
            const long n = std::min<long>(cfg.batch_size, N - b);
            auto idx = torch::from_blob(order.data() + b, {n}, torch::kInt64).clone();
            auto z0 = latents.index_select(0, idx);
            auto t = torch::randint(1, schedule.steps() + 1, {n}, gen, torch::kInt64);
            auto noise = torch::randn(z0.sizes(), gen);
            auto loss = noise_prediction_loss(model, z0, t, noise, schedule);
            check_finite(loss, "ddpm training epoch " + std::to_string(epoch));
            opt.zero_grad();
            loss.backward();
            opt.step();
            total += loss.item<double>() * n;
            seen += n;
        }
        out.loss_curve.push_back(total / seen);
    }
    model->eval();
    return out;
}

std::pair<double, double> ddpm_descent_step(Backbone& model, torch::optim::Optimizer& opt, const torch::Tensor& z0,
                                            const NoiseSchedule& schedule, std::uint64_t seed) {
    auto gen = make_generator(seed);
    auto t = torch::randint(1, schedule.steps() + 1, {z0.size(0)}, gen, torch::kInt64);
    auto noise = torch::randn(z0.sizes(), gen);
    auto loss = noise_prediction_loss(model, z0, t, noise, schedule);
    const double before = loss.item<double>();
    opt.zero_grad();
    loss.backward();
    opt.step();
    torch::NoGradGuard no_grad;
    return {before, noise_prediction_loss(model, z0, t, noise, schedule).item<double>()};
}

void save_backbone(const fs::path& path, Backbone& model) {
    save_checkpoint(path, *model, {{"kind", "backbone"}, {"arch", model->cfg}});
}

Backbone load_backbone(const fs::path& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "backbone") throw LoadError(path.string() + " is not a backbone checkpoint");
    Backbone model(meta.at("arch").get<BackboneConfig>());
    load_checkpoint_weights(path, *model);
    model->eval();
    return model;
}

torch::Tensor ddpm_sample(Backbone& model, const NoiseSchedule& schedule, std::vector<torch::Generator>& generators,
                          const ControlHook& hook) {
    UNIACORN_EXPECT(!generators.empty(), ContractError, "ddpm_sample needs one generator per trajectory");
    torch::NoGradGuard no_grad;
    model->eval();
    const auto& c = model->cfg;
    const long B = static_cast<long>(generators.size());
    auto draw = [&] {
        std::vector<torch::Tensor> parts;
        parts.reserve(B);
        for (auto& g : generators) parts.push_back(torch::randn({1, c.latent_channels, c.latent_height, c.latent_width}, g));
        return torch::cat(parts, 0);
    };
    auto z = draw();
    for (int k = schedule.steps(); k >= 1; --k) {
        auto t = torch::full({B}, schedule.model_step(k), torch::kInt64);
        torch::Tensor eps;
        if (hook) {
            ResidualSet residuals = hook(z, t);
            eps = model(z, t, &residuals);
        } else {
            eps = model(z, t);
        }
        const double beta = schedule.beta(k);
        const double ab = schedule.alpha_bar(k);
        const double ab_prev = k > 1 ? schedule.alpha_bar(k - 1) : 1.0;
        z = (z - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(1.0 - beta);
        if (k > 1) {
            const double var = beta * (1.0 - ab_prev) / (1.0 - ab);
            z = z + std::sqrt(var) * draw();
        }
    }
    return z;
}

}  // namespace uniacorn
