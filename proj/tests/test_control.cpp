// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "helpers.hpp"

using namespace uniacorn;
using testing::TempDir;

namespace {

BackboneConfig tiny_backbone() {
    BackboneConfig b;
    b.latent_channels = 4;
    b.latent_height = b.latent_width = 8;
    b.channels = {8, 16};
    b.time_dim = 16;
    return b;
}

std::vector<LabelMap> some_labels(int n) {
    auto ds = generate_domain(testing::small_spec(Domain::SourceLabeled, 4), std::max(n, 10));
    std::vector<LabelMap> out;
    for (const auto* s : all_samples(ds)) {
        if (static_cast<int>(out.size()) == n) break;
        out.push_back(*s->label_map);
    }
    return out;
}

}  // namespace

TEST_SUITE("control") {

TEST_CASE("control signals hold exactly one kind") {
    auto labels = some_labels(1);
    auto s = ControlSignal::semantic(labels[0]);
    CHECK(s.kind() == ControlKind::Semantic);
    CHECK(s.labels() == labels[0]);
    CHECK_THROWS_AS(s.uncertainty_image(), ContractError);

    auto u = ControlSignal::uncertainty(make_control_image(MeanUncertainty(12.5), 32, 32));
    CHECK(u.kind() == ControlKind::Uncertainty);
    CHECK(u.uncertainty_image().value() == doctest::Approx(12.5));
    CHECK_THROWS_AS(u.labels(), ContractError);

    UncertaintyControlImage bad{Grid<float>(4, 4, 120.0f)};
    CHECK_THROWS_AS(ControlSignal::uncertainty(bad), ContractError);
    CHECK(control_kind_from_string(to_string(ControlKind::Uncertainty)) == ControlKind::Uncertainty);
    CHECK_THROWS(control_kind_from_string("depth"));
}

TEST_CASE("condition tensors: one-hot labels and raw-valued constants") {
    auto labels = some_labels(2);
    std::vector<const LabelMap*> ptrs{&labels[0], &labels[1]};
    auto onehot = semantic_condition(ptrs, 5);
    CHECK(onehot.sizes() == torch::IntArrayRef({2, 5, 32, 32}));
    CHECK(torch::allclose(onehot.sum(1), torch::ones({2, 32, 32})));
    CHECK(onehot[0][labels[0].at(20, 7)][20][7].item<float>() == 1.0f);

    const std::vector<double> us{3.0, 40.0};
    auto uc = uncertainty_condition(us, 32, 32);
    CHECK(uc.sizes() == torch::IntArrayRef({2, 1, 32, 32}));
    CHECK(uc[1].min().item<float>() == doctest::Approx(40.0));
    CHECK(uc[1].max().item<float>() == doctest::Approx(40.0));
}

TEST_CASE("zero-initialized ControlNets emit zero residuals and leave the backbone unchanged") {
    torch::manual_seed(0);
    Backbone bb(tiny_backbone());
    bb->eval();
    auto labels = some_labels(1);
    for (auto kind : {ControlKind::Semantic, ControlKind::Uncertainty}) {
        auto cn = make_controlnet(bb, kind, 5, 32, 32, 4);
        cn->eval();
        auto z = torch::randn({1, 4, 8, 8});
        auto signal = kind == ControlKind::Semantic
                          ? ControlSignal::semantic(labels[0])
                          : ControlSignal::uncertainty(make_control_image(MeanUncertainty(30.0), 32, 32));
        auto r = controlnet_residuals(cn, z, signal, 7);
        CHECK(r.blocks.size() == bb->injection_shapes().size());
        for (const auto& b : r.blocks) CHECK(b.abs().max().item<float>() == 0.0f);
        torch::NoGradGuard ng;
        auto t = torch::full({1}, 7, torch::kInt64);
        CHECK(torch::equal(bb->forward(z, t, &r), bb->forward(z, t)));
    }
}

TEST_CASE("copied blocks start from the backbone weights") {
    torch::manual_seed(0);
    Backbone bb(tiny_backbone());
    auto cn = make_controlnet(bb, ControlKind::Semantic, 5, 32, 32, 4);
    auto src = bb->down->named_parameters();
    auto dst = cn->down->named_parameters();
    REQUIRE(src.size() == dst.size());
    for (const auto& item : src) CHECK(torch::equal(item.value(), dst[item.key()]));
}

TEST_CASE("a signal of the wrong kind is rejected") {
    torch::manual_seed(0);
    Backbone bb(tiny_backbone());
    auto cn = make_controlnet(bb, ControlKind::Uncertainty, 5, 32, 32, 4);
    auto labels = some_labels(1);
    auto z = torch::randn({1, 4, 8, 8});
    CHECK_THROWS_AS(controlnet_residuals(cn, z, ControlSignal::semantic(labels[0]), 3), ContractError);
}

TEST_CASE("training moves only the ControlNet") {
    torch::manual_seed(0);
    Backbone bb(tiny_backbone());
    std::vector<torch::Tensor> before;
    for (const auto& p : bb->parameters()) before.push_back(p.detach().clone());
    auto labels = some_labels(8);
    std::vector<const LabelMap*> ptrs;
    for (const auto& l : labels) ptrs.push_back(&l);
    auto latents = torch::randn({8, 4, 8, 8});
    auto sched = NoiseSchedule::linear(50);
    auto fit = train_semantic_controlnet(bb, latents, ptrs, 5, sched, {1e-3, 2, 4, 3});
    CHECK(fit.loss_curve.size() == 2);
    auto after = bb->parameters();
    REQUIRE(after.size() == before.size());
    for (size_t k = 0; k < before.size(); ++k) CHECK(torch::equal(after[k], before[k]));

    // The projections have left zero, so the ControlNet now contributes.
    double total = 0;
    for (const auto& p : fit.model->projections->parameters()) total += p.abs().sum().item<double>();
    CHECK(total > 0.0);

    const std::vector<double> us(8, 25.0);
    auto ufit = train_uncertainty_controlnet(bb, latents, us, 32, 32, sched, {1e-3, 1, 4, 3});
    CHECK(ufit.model->cfg.kind == ControlKind::Uncertainty);
    for (size_t k = 0; k < before.size(); ++k) CHECK(torch::equal(bb->parameters()[k], before[k]));
}

TEST_CASE("checkpoint round trip keeps provenance") {
    torch::manual_seed(0);
    Backbone bb(tiny_backbone());
    auto cn = make_controlnet(bb, ControlKind::Uncertainty, 5, 32, 32, 4);
    TempDir tmp("cn");
    save_controlnet(tmp.path() / "cn.pt", cn, {"abc", "def"});
    ControlNetProvenance prov;
    auto back = load_controlnet(tmp.path() / "cn.pt", &prov);
    CHECK(prov.backbone_sha256 == "abc");
    CHECK(prov.segmenter_sha256 == "def");
    CHECK(back->cfg.kind == ControlKind::Uncertainty);
    auto a = cn->parameters();
    auto b = back->parameters();
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) CHECK(torch::equal(a[k], b[k]));
}

TEST_CASE("published optimizer defaults") {
    auto f = default_controlnet_fit();
    CHECK(f.learning_rate == doctest::Approx(2.5e-5));
    CHECK(f.epochs == 150);
}

}  // TEST_SUITE
