// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "uniacorn/eval.hpp"

namespace uniacorn {

namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const SegmenterConfig& c) {
    j = {{"n_classes", c.n_classes}, {"height", c.height}, {"width", c.width}, {"channels", c.channels}};
}

void from_json(const nlohmann::json& j, SegmenterConfig& c) {
    SegmenterConfig d;
    c.n_classes = j.value("n_classes", d.n_classes);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.channels = j.value("channels", d.channels);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"max_epochs", c.max_epochs},
         {"early_stopping_patience", c.early_stopping_patience},
         {"batch_size", c.batch_size},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.early_stopping_patience = j.value("early_stopping_patience", d.early_stopping_patience);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
}

void validate(const TrainConfig& cfg) {
    UNIACORN_EXPECT(cfg.learning_rate > 0, ConfigError, "learning_rate must be > 0");
    UNIACORN_EXPECT(cfg.max_epochs >= 1, ConfigError, "max_epochs must be >= 1");
    UNIACORN_EXPECT(cfg.batch_size >= 1, ConfigError, "batch_size must be >= 1");
    UNIACORN_EXPECT(cfg.early_stopping_patience >= 1, ConfigError, "early_stopping_patience must be >= 1");
}

ConvBlockImpl::ConvBlockImpl(int in_ch, int out_ch) {
    body = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)),
                               nn::GroupNorm(group_count(out_ch), out_ch), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)),
                               nn::GroupNorm(group_count(out_ch), out_ch), nn::ReLU()));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return body->forward(x); }

UNetImpl::UNetImpl(const SegmenterConfig& cfg) {
    UNIACORN_EXPECT(!cfg.channels.empty(), ConfigError, "segmenter needs at least one level");
    const int levels = static_cast<int>(cfg.channels.size());
    const int factor = 1 << (levels - 1);
    UNIACORN_EXPECT(cfg.height % factor == 0 && cfg.width % factor == 0, ConfigError,
                    "segmenter input size must be divisible by 2^(levels-1)");
    int in = 1;
    for (int c : cfg.channels) {
        encoders->push_back(ConvBlock(in, c));
        in = c;
    }
    for (int l = levels - 1; l > 0; --l) {
        upconvs->push_back(
            nn::ConvTranspose2d(nn::ConvTranspose2dOptions(cfg.channels[l], cfg.channels[l - 1], 2).stride(2)));
        decoders->push_back(ConvBlock(2 * cfg.channels[l - 1], cfg.channels[l - 1]));
    }
    register_module("encoders", encoders);
    register_module("upconvs", upconvs);
    register_module("decoders", decoders);
    head = register_module("head", nn::Conv2d(nn::Conv2dOptions(cfg.channels[0], cfg.n_classes, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> skips;
    auto h = x * 2.0 - 1.0;
    for (size_t l = 0; l < encoders->size(); ++l) {
        if (l > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
        h = encoders[l]->as<ConvBlock>()->forward(h);
        skips.push_back(h);
    }
    for (size_t k = 0; k < decoders->size(); ++k) {
        h = upconvs[k]->as<nn::ConvTranspose2d>()->forward(h);
        h = decoders[k]->as<ConvBlock>()->forward(torch::cat({h, skips[skips.size() - 2 - k]}, 1));
    }
    return head(h);
}

Segmenter::Segmenter(SegmenterConfig cfg) : cfg_(std::move(cfg)), net_(cfg_) {
    UNIACORN_EXPECT(cfg_.n_classes >= 2, ConfigError, "segmenter needs n_classes >= 2");
}

torch::Tensor Segmenter::logits(const torch::Tensor& images) {
    UNIACORN_EXPECT(images.dim() == 4 && images.size(1) == 1 && images.size(2) == cfg_.height &&
                        images.size(3) == cfg_.width,
                    ContractError,
                    "segmenter expects [B,1," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                        "] input");
    return net_->forward(images);
}

torch::Tensor Segmenter::probabilities(const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    return torch::softmax(logits(images).to(torch::kFloat64), 1);
}

void Segmenter::save(const fs::path& path) {
    save_checkpoint(path, *net_, {{"kind", "segmenter"}, {"arch", cfg_}});
}

Segmenter Segmenter::load(const fs::path& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "segmenter") throw LoadError(path.string() + " is not a segmenter checkpoint");
    Segmenter seg(meta.at("arch").get<SegmenterConfig>());
    load_checkpoint_weights(path, *seg.net_);
    return seg;
}

ProbabilityMap to_probability_map(const torch::Tensor& lhw) {
    auto t = lhw.detach().to(torch::kFloat64).permute({1, 2, 0}).contiguous();
    ProbabilityMap p(static_cast<int>(lhw.size(0)), static_cast<int>(lhw.size(1)), static_cast<int>(lhw.size(2)));
    std::copy(t.data_ptr<double>(), t.data_ptr<double>() + t.numel(), p.values.begin());
    return p;
}

torch::Tensor to_tensor(const ProbabilityMap& p) {
    auto t = torch::from_blob(const_cast<double*>(p.values.data()), {p.height, p.width, p.n_classes}, torch::kFloat64);
    return t.permute({2, 0, 1}).unsqueeze(0).clone();
}

void validate(const ProbabilityMap& p, double tol) {
    UNIACORN_EXPECT(p.values.size() == p.pixels() * p.n_classes, ContractError, "probability map size mismatch");
    for (size_t px = 0; px < p.pixels(); ++px) {
        double sum = 0;
        for (int c = 0; c < p.n_classes; ++c) {
            const double v = p.values[px * p.n_classes + c];
            UNIACORN_EXPECT(v >= 0.0 && std::isfinite(v), ContractError, "probabilities must be finite and >= 0");
            sum += v;
        }
        UNIACORN_EXPECT(std::abs(sum - 1.0) <= tol, ContractError, "per-pixel probabilities must sum to 1");
    }
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double smooth) {
    UNIACORN_EXPECT(probs.dim() == 4 && target.dim() == 3, ContractError, "dice_loss expects [B,L,H,W] and [B,H,W]");
    UNIACORN_EXPECT(probs.size(0) == target.size(0) && probs.size(2) == target.size(1) &&
                        probs.size(3) == target.size(2),
                    ContractError, "dice_loss shape mismatch");
    const int L = static_cast<int>(probs.size(1));
    UNIACORN_EXPECT(target.numel() == 0 || target.max().item<std::int64_t>() < L, ContractError,
                    "dice_loss target value >= n_classes");
    auto onehot = one_hot_labels(target, L).to(probs.dtype());
    auto inter = (probs * onehot).sum({0, 2, 3});
    auto denom = probs.sum({0, 2, 3}) + onehot.sum({0, 2, 3});
    auto dice = (2.0 * inter + smooth) / (denom + smooth);
    return 1.0 - dice.mean();
}

double dice_loss(const ProbabilityMap& pred, const LabelMap& target, double smooth) {
    UNIACORN_EXPECT(pred.height == target.height && pred.width == target.width, ContractError,
                    "dice_loss shape mismatch");
    auto probs = to_tensor(pred);
    auto labels = torch::from_blob(const_cast<std::uint8_t*>(target.data.data()), {1, target.height, target.width},
                                   torch::kUInt8)
                      .to(torch::kInt64);
    return dice_loss(probs, labels, smooth).item<double>();
}

namespace {

torch::Tensor batch_images(std::span<const Sample* const> samples, std::span<const size_t> idx) {
    std::vector<const Image*> imgs;
    for (auto i : idx) imgs.push_back(&samples[i]->image);
    return images_to_tensor(imgs);
}

torch::Tensor batch_labels(std::span<const Sample* const> samples, std::span<const size_t> idx) {
    std::vector<const LabelMap*> lbls;
    for (auto i : idx) lbls.push_back(&*samples[i]->label_map);
    return labels_to_tensor(lbls);
}

double validation_miou(Segmenter& seg, std::span<const Sample* const> val, int n_classes) {
    std::vector<const Image*> imgs;
    for (const auto* s : val) imgs.push_back(&s->image);
    auto preds = predict_labels(seg, imgs);
    IoUCounts counts(n_classes);
    for (size_t k = 0; k < val.size(); ++k) counts.add(preds[k], *val[k]->label_map);
    return counts.report().mean_all;
}

}  // namespace

SegmenterTraining train_segmenter(std::span<const Sample* const> train, std::span<const Sample* const> val,
                                  const TrainConfig& cfg, const SegmenterConfig& arch) {
    validate(cfg);
    UNIACORN_EXPECT(!train.empty(), ContractError, "train_segmenter needs training samples");
    for (const auto* s : train)
        UNIACORN_EXPECT(s->label_map.has_value(), ContractError, "training sample " + s->id + " is unlabeled");
    for (const auto* s : val)
        UNIACORN_EXPECT(s->label_map.has_value(), ContractError, "validation sample " + s->id + " is unlabeled");

    torch::manual_seed(cfg.seed);
    SegmenterTraining out{Segmenter(arch), {}, 0, -1.0};
    auto& seg = out.model;
    torch::optim::Adam opt(seg.net()->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    std::mt19937_64 rng(derive_seed(cfg.seed, "segmenter/shuffle"));

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<torch::Tensor> best_state;
    auto snapshot = [&] {
        best_state.clear();
        for (const auto& p : seg.net()->parameters()) best_state.push_back(p.detach().clone());
    };
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        seg.net()->train();
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        size_t seen = 0;
        for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::span<const size_t> idx(order.data() + b, std::min<size_t>(cfg.batch_size, order.size() - b));
            auto x = batch_images(train, idx);
            auto y = batch_labels(train, idx);
            auto loss = dice_loss(torch::softmax(seg.logits(x), 1), y);
            check_finite(loss, "segmenter training epoch " + std::to_string(epoch));
            opt.zero_grad();
            loss.backward();
            opt.step();
            total += loss.item<double>() * idx.size();
            seen += idx.size();
        }
        seg.net()->eval();
        const double miou = val.empty() ? 0.0 : validation_miou(seg, val, arch.n_classes);
        out.log.push_back({epoch, total / seen, miou});
        if (miou > out.best_val_miou) {
            out.best_val_miou = miou;
            out.best_epoch = epoch;
            since_best = 0;
            snapshot();
        } else if (++since_best >= cfg.early_stopping_patience) {
            break;
        }
    }
    {
        torch::NoGradGuard no_grad;
        auto params = seg.net()->parameters();
        for (size_t k = 0; k < params.size(); ++k) params[k].copy_(best_state[k]);
    }
    return out;
}

SegmenterTraining train_segmenter(const DatasetSplit& data, const TrainConfig& cfg, const SegmenterConfig& arch) {
    std::vector<const Sample*> train, val;
    for (const auto& s : data.train) train.push_back(&s);
    for (const auto& s : data.val) val.push_back(&s);
    return train_segmenter(train, val, cfg, arch);
}

void write_training_log(const fs::path& path, const std::vector<EpochLog>& log) {
    std::string text = "epoch,train_loss,val_miou\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.8f,%.8f\n", e.epoch, e.train_loss, e.val_miou);
        text += buf;
    }
    write_file_atomic(path, text);
}

std::vector<ProbabilityMap> predict_probs(Segmenter& seg, std::span<const Image* const> images, int batch_size) {
    std::vector<ProbabilityMap> out;
    out.reserve(images.size());
    seg.net()->eval();
    for (size_t b = 0; b < images.size(); b += batch_size) {
        auto chunk = images.subspan(b, std::min<size_t>(batch_size, images.size() - b));
        auto probs = seg.probabilities(images_to_tensor(chunk));
        for (long k = 0; k < probs.size(0); ++k) out.push_back(to_probability_map(probs[k]));
    }
    return out;
}

ProbabilityMap predict_probs(Segmenter& seg, const Image& image) {
    const Image* one[] = {&image};
    return std::move(predict_probs(seg, one).front());
}

std::vector<LabelMap> predict_labels(Segmenter& seg, std::span<const Image* const> images, int batch_size) {
    std::vector<LabelMap> out;
    out.reserve(images.size());
    seg.net()->eval();
    torch::NoGradGuard no_grad;
    for (size_t b = 0; b < images.size(); b += batch_size) {
        auto chunk = images.subspan(b, std::min<size_t>(batch_size, images.size() - b));
        auto pred = seg.logits(images_to_tensor(chunk)).argmax(1);
        for (long k = 0; k < pred.size(0); ++k) out.push_back(tensor_to_labels(pred[k]));
    }
    return out;
}

}  // namespace uniacorn
