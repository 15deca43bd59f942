// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "uniacorn/common.hpp"

namespace uniacorn {

namespace nn = torch::nn;

// -----------------------------------------------------------------------------
// Tensor conversions between the plain grids of the data layer and NCHW tensors.
// -----------------------------------------------------------------------------
torch::Tensor images_to_tensor(std::span<const Image* const> images);     // [B,1,H,W] float
torch::Tensor labels_to_tensor(std::span<const LabelMap* const> labels);  // [B,H,W] int64
torch::Tensor one_hot_labels(const torch::Tensor& labels, int n_classes); // [B,L,H,W] float
Image tensor_to_image(const torch::Tensor& chw);                           // [1,H,W] or [H,W]
LabelMap tensor_to_labels(const torch::Tensor& hw);

// Sinusoidal embedding of integer time steps, [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

struct TimeEmbeddingImpl : nn::Module {
    TimeEmbeddingImpl(int base_dim, int out_dim);
    torch::Tensor forward(const torch::Tensor& t);

    int base_dim;
    nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TimeEmbedding);

/// GroupNorm-SiLU-Conv residual block with an optional additive time embedding.
struct ResBlockImpl : nn::Module {
    ResBlockImpl(int in_ch, int out_ch, int temb_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

    nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    nn::Conv2d conv1{nullptr}, conv2{nullptr};
    nn::Linear temb_proj{nullptr};
    nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

int group_count(int channels);

// -----------------------------------------------------------------------------
// Self-describing checkpoints: one archive holding the weights of a module and
// a JSON string with the hyperparameters needed to rebuild it.
// -----------------------------------------------------------------------------
void save_checkpoint(const fs::path& path, nn::Module& module, const nlohmann::json& meta);
nlohmann::json read_checkpoint_meta(const fs::path& path);
void load_checkpoint_weights(const fs::path& path, nn::Module& module);

/// Copies parameters and buffers by name; shapes must agree.
void copy_parameters(const nn::Module& from, nn::Module& to);
void set_requires_grad(nn::Module& module, bool flag);
bool parameters_equal(const nn::Module& a, const nn::Module& b);

/// Deterministic per-stream generator for CPU tensor randomness.
torch::Generator make_generator(std::uint64_t seed);

void check_finite(const torch::Tensor& loss, const std::string& context);

}  // namespace uniacorn
