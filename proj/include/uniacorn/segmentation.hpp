// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uniacorn/domains.hpp"
#include "uniacorn/nn_blocks.hpp"

namespace uniacorn {

struct SegmenterConfig {
    int n_classes = 5;
    int height = 64;
    int width = 64;
    std::vector<int> channels{16, 32, 64};  // one entry per U-Net level

    friend bool operator==(const SegmenterConfig&, const SegmenterConfig&) = default;
};

void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);

struct ConvBlockImpl : nn::Module {
    ConvBlockImpl(int in_ch, int out_ch);
    torch::Tensor forward(const torch::Tensor& x);
    nn::Sequential body{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Plain encoder/decoder U-Net producing per-pixel class logits.
struct UNetImpl : nn::Module {
    explicit UNetImpl(const SegmenterConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);  // [B,1,H,W] in [0,1] -> [B,L,H,W] logits

    nn::ModuleList encoders, decoders, upconvs;
    nn::Conv2d head{nullptr};
};
TORCH_MODULE(UNet);

/// Trained (or freshly initialized) segmentation network together with its
/// architecture hyperparameters.
class Segmenter {
public:
    explicit Segmenter(SegmenterConfig cfg);

    const SegmenterConfig& config() const { return cfg_; }
    UNet& net() { return net_; }
    const UNet& net() const { return net_; }

    torch::Tensor logits(const torch::Tensor& images);
    /// Softmax probabilities in float64, [B,L,H,W]; no gradient.
    torch::Tensor probabilities(const torch::Tensor& images);

    void save(const fs::path& path);
    static Segmenter load(const fs::path& path);

private:
    SegmenterConfig cfg_;
    UNet net_;
};

/// Per-pixel class distribution, pixel-major: values[(i * W + j) * L + c].
struct ProbabilityMap {
    int n_classes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ProbabilityMap() = default;
    ProbabilityMap(int L, int H, int W) : n_classes(L), height(H), width(W), values(static_cast<size_t>(L) * H * W) {}
    double& at(int i, int j, int c) { return values[(static_cast<size_t>(i) * width + j) * n_classes + c]; }
    double at(int i, int j, int c) const { return values[(static_cast<size_t>(i) * width + j) * n_classes + c]; }
    size_t pixels() const { return static_cast<size_t>(height) * width; }
};

ProbabilityMap to_probability_map(const torch::Tensor& lhw);  // [L,H,W]
torch::Tensor to_tensor(const ProbabilityMap& p);             // [1,L,H,W] float64
void validate(const ProbabilityMap& p, double tol = 1e-5);

/// Soft-Dice loss: 1 - mean over classes of (2*sum(p*g) + eps) / (sum p + sum g + eps),
/// sums taken over the whole batch. `probs` is [B,L,H,W]; `target` is [B,H,W] int64.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double smooth = 1e-6);
double dice_loss(const ProbabilityMap& pred, const LabelMap& target, double smooth = 1e-6);

struct TrainConfig {
    double learning_rate = 1e-4;
    int max_epochs = 400;
    int early_stopping_patience = 20;
    int batch_size = 16;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void validate(const TrainConfig& cfg);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double val_miou = 0;
};

struct SegmenterTraining {
    Segmenter model;
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double best_val_miou = 0;
};

/// Trains on any mix of labeled samples (real, synthetic or both) and returns
/// the checkpoint with the best validation mean IoU.
SegmenterTraining train_segmenter(std::span<const Sample* const> train, std::span<const Sample* const> val,
                                  const TrainConfig& cfg, const SegmenterConfig& arch);
SegmenterTraining train_segmenter(const DatasetSplit& data, const TrainConfig& cfg, const SegmenterConfig& arch);

void write_training_log(const fs::path& path, const std::vector<EpochLog>& log);

ProbabilityMap predict_probs(Segmenter& seg, const Image& image);
std::vector<ProbabilityMap> predict_probs(Segmenter& seg, std::span<const Image* const> images, int batch_size = 64);
std::vector<LabelMap> predict_labels(Segmenter& seg, std::span<const Image* const> images, int batch_size = 64);

}  // namespace uniacorn
