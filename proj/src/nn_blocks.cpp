// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/nn_blocks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace uniacorn {

namespace F = torch::nn::functional;

torch::Tensor images_to_tensor(std::span<const Image* const> images) {
    UNIACORN_EXPECT(!images.empty(), ContractError, "empty image batch");
    const int H = images[0]->height, W = images[0]->width;
    auto out = torch::empty({static_cast<long>(images.size()), 1, H, W}, torch::kFloat32);
    auto* dst = out.data_ptr<float>();
    for (size_t b = 0; b < images.size(); ++b) {
        UNIACORN_EXPECT(images[b]->height == H && images[b]->width == W, ContractError,
                        "images in a batch must share a size");
        std::copy(images[b]->data.begin(), images[b]->data.end(), dst + b * H * W);
    }
    return out;
}

torch::Tensor labels_to_tensor(std::span<const LabelMap* const> labels) {
    UNIACORN_EXPECT(!labels.empty(), ContractError, "empty label batch");
    const int H = labels[0]->height, W = labels[0]->width;
    auto out = torch::empty({static_cast<long>(labels.size()), H, W}, torch::kInt64);
    auto* dst = out.data_ptr<std::int64_t>();
    for (size_t b = 0; b < labels.size(); ++b) {
        UNIACORN_EXPECT(labels[b]->height == H && labels[b]->width == W, ContractError,
                        "label maps in a batch must share a size");
        std::copy(labels[b]->data.begin(), labels[b]->data.end(), dst + b * H * W);
    }
    return out;
}

torch::Tensor one_hot_labels(const torch::Tensor& labels, int n_classes) {
    return F::one_hot(labels, n_classes).permute({0, 3, 1, 2}).to(torch::kFloat32).contiguous();
}

Image tensor_to_image(const torch::Tensor& chw) {
    auto t = chw.detach().to(torch::kFloat32).contiguous();
    if (t.dim() == 3) t = t.squeeze(0);
    UNIACORN_EXPECT(t.dim() == 2, ContractError, "expected a single-channel image tensor");
    Image img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
    std::copy(t.data_ptr<float>(), t.data_ptr<float>() + t.numel(), img.data.begin());
    return img;
}

LabelMap tensor_to_labels(const torch::Tensor& hw) {
    auto t = hw.detach().to(torch::kUInt8).contiguous();
    UNIACORN_EXPECT(t.dim() == 2, ContractError, "expected an HxW label tensor");
    LabelMap lm(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
    std::copy(t.data_ptr<std::uint8_t>(), t.data_ptr<std::uint8_t>() + t.numel(), lm.data.begin());
    return lm;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
    auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

TimeEmbeddingImpl::TimeEmbeddingImpl(int base_dim_, int out_dim) : base_dim(base_dim_) {
    fc1 = register_module("fc1", nn::Linear(base_dim, out_dim));
    fc2 = register_module("fc2", nn::Linear(out_dim, out_dim));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& t) {
    return fc2(torch::silu(fc1(timestep_embedding(t, base_dim))));
}

int group_count(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, int temb_dim) {
    norm1 = register_module("norm1", nn::GroupNorm(group_count(in_ch), in_ch));
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
    norm2 = register_module("norm2", nn::GroupNorm(group_count(out_ch), out_ch));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
    if (temb_dim > 0) temb_proj = register_module("temb_proj", nn::Linear(temb_dim, out_ch));
    if (in_ch != out_ch) skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1(torch::silu(norm1(x)));
    if (temb_proj && temb.defined()) h = h + temb_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(torch::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

void save_checkpoint(const fs::path& path, nn::Module& module, const nlohmann::json& meta) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    module.save(archive);
    archive.write("uniacorn_meta", c10::IValue(meta.dump()));
    fs::path tmp = path;
    tmp += ".tmp";
    try {
        archive.save_to(tmp.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    fs::rename(tmp, path);
}

nlohmann::json read_checkpoint_meta(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError("checkpoint missing: " + path.string());
    torch::serialize::InputArchive archive;
    c10::IValue meta;
    try {
        archive.load_from(path.string());
        if (!archive.try_read("uniacorn_meta", meta)) throw LoadError("checkpoint has no metadata: " + path.string());
    } catch (const c10::Error& e) {
        throw LoadError("corrupt checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    return nlohmann::json::parse(meta.toStringRef());
}

void load_checkpoint_weights(const fs::path& path, nn::Module& module) {
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
        module.load(archive);
    } catch (const c10::Error& e) {
        throw LoadError("cannot load weights from " + path.string() + ": " + e.what_without_backtrace());
    }
}

void copy_parameters(const nn::Module& from, nn::Module& to) {
    torch::NoGradGuard no_grad;
    auto src = from.named_parameters(true);
    for (auto& p : to.named_parameters(true)) {
        const auto* s = src.find(p.key());
        UNIACORN_EXPECT(s != nullptr, ContractError, "parameter " + p.key() + " missing in source module");
        UNIACORN_EXPECT(s->sizes() == p.value().sizes(), ContractError, "shape mismatch for " + p.key());
        p.value().copy_(*s);
    }
    auto src_buf = from.named_buffers(true);
    for (auto& b : to.named_buffers(true)) {
        if (const auto* s = src_buf.find(b.key())) b.value().copy_(*s);
    }
}

void set_requires_grad(nn::Module& module, bool flag) {
    for (auto& p : module.parameters(true)) p.set_requires_grad(flag);
}

bool parameters_equal(const nn::Module& a, const nn::Module& b) {
    auto pa = a.named_parameters(true);
    auto pb = b.named_parameters(true);
    if (pa.size() != pb.size()) return false;
    for (const auto& p : pa) {
        const auto* q = pb.find(p.key());
        if (!q || !torch::equal(p.value(), *q)) return false;
    }
    return true;
}

torch::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

void check_finite(const torch::Tensor& loss, const std::string& context) {
    const double v = loss.item<double>();
    if (!std::isfinite(v)) throw TrainingError("non-finite loss (" + std::to_string(v) + ") during " + context);
}

}  // namespace uniacorn
