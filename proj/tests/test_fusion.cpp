// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include "helpers.hpp"

using namespace uniacorn;
using testing::TempDir;

namespace {

/// Untrained 32x32 models whose ControlNet projections are perturbed off zero.
GenerativeModels tiny_models() {
    torch::manual_seed(0);
    AutoencoderConfig ae;
    ae.height = ae.width = 32;
    ae.channels = {8, 8, 8};
    BackboneConfig bb;
    bb.latent_channels = 4;
    bb.latent_height = bb.latent_width = 8;
    bb.channels = {8, 16};
    bb.time_dim = 16;
    GenerativeModels m;
    m.autoencoder = Autoencoder(ae);
    m.autoencoder->eval();
    m.backbone = Backbone(bb);
    m.backbone->eval();
    m.semantic = make_controlnet(m.backbone, ControlKind::Semantic, 5, 32, 32, 4);
    m.uncertainty = make_controlnet(m.backbone, ControlKind::Uncertainty, 5, 32, 32, 4);
    torch::NoGradGuard ng;
    for (auto* cn : {&m.semantic, &m.uncertainty})
        for (auto& p : (*cn)->projections->parameters()) p.normal_(0.0, 0.2);
    m.schedule = NoiseSchedule::linear(50);
    return m;
}

DatasetSplit labeled_source(int n) { return generate_domain(testing::small_spec(Domain::SourceLabeled, 6), n); }

ResidualSet random_set(std::uint64_t seed) {
    auto g = make_generator(seed);
    ResidualSet r;
    r.blocks = {torch::randn({2, 3, 4, 4}, g), torch::randn({2, 5, 2, 2}, g)};
    return r;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("fusion weights only the uncertainty residuals") {
    auto r_u = random_set(1);
    auto r_s = random_set(2);
    auto zero = fuse_residuals(r_u, r_s, 0.0);
    for (size_t k = 0; k < r_s.blocks.size(); ++k) CHECK(torch::equal(zero.blocks[k], r_s.blocks[k]));

    ResidualSet none;
    for (const auto& b : r_s.blocks) none.blocks.push_back(torch::zeros_like(b));
    auto one = fuse_residuals(r_u, none, 1.0);
    for (size_t k = 0; k < r_u.blocks.size(); ++k) CHECK(torch::equal(one.blocks[k], r_u.blocks[k]));

    auto mid = fuse_residuals(r_u, r_s, 0.4);
    for (size_t k = 0; k < r_u.blocks.size(); ++k) {
        auto a = r_u.blocks[k].contiguous();
        auto s = r_s.blocks[k].contiguous();
        auto f = mid.blocks[k].contiguous();
        for (int64_t i = 0; i < a.numel(); ++i) {
            const double expect = 0.4 * a.data_ptr<float>()[i] + s.data_ptr<float>()[i];
            CHECK(f.data_ptr<float>()[i] == doctest::Approx(expect).epsilon(1e-6));
        }
    }

    ResidualSet short_set;
    short_set.blocks = {r_s.blocks[0]};
    CHECK_THROWS_AS(fuse_residuals(r_u, short_set, 0.4), ContractError);
    ResidualSet bad_shape = r_s;
    bad_shape.blocks[1] = torch::zeros({2, 5, 3, 3});
    CHECK_THROWS_AS(fuse_residuals(r_u, bad_shape, 0.4), ContractError);
}

TEST_CASE("alpha zero reproduces semantic-only generation exactly") {
    auto m = tiny_models();
    auto ds = labeled_source(10);
    std::vector<GenerationRequest> req;
    for (int k = 0; k < 3; ++k) req.push_back({&*ds.train[k].label_map, 5.0 + 20 * k, 100u + k, ds.train[k].id});
    auto dual = generate_batch(req, 0.0, 10, m, ControlMode::Dual);
    auto sem = generate_batch(req, 0.0, 10, m, ControlMode::SemanticOnly);
    for (size_t k = 0; k < req.size(); ++k) CHECK(dual[k].image == sem[k].image);

    // With a nonzero weight the uncertainty branch changes the result.
    auto weighted = generate_batch(req, 1.0, 10, m, ControlMode::Dual);
    CHECK_FALSE(weighted[0].image == dual[0].image);
}

TEST_CASE("generated records keep their label maps and sizes") {
    auto m = tiny_models();
    auto ds = labeled_source(10);
    std::vector<const Sample*> labeled;
    for (const auto& s : ds.train) labeled.push_back(&s);
    FusionConfig cfg;
    cfg.steps = 8;
    cfg.multiplicity = 2;
    cfg.batch_size = 5;
    cfg.seed = 9;
    cfg.uncertainty.gaussian = {20.0, 4.0, 10};
    auto recs = generate_dataset(labeled, cfg, m);
    REQUIRE(recs.size() == 2 * labeled.size());
    std::set<std::string> ids;
    for (size_t k = 0; k < recs.size(); ++k) {
        const auto& src = *labeled[k / 2];
        CHECK(recs[k].source_id == src.id);
        CHECK(recs[k].label_map == *src.label_map);
        CHECK(recs[k].image.height == 32);
        CHECK(ids.insert(recs[k].id).second);
        CHECK((recs[k].conditioned_u.value() >= 0.0 && recs[k].conditioned_u.value() <= 100.0));
    }
    // Copies of one source draw distinct u and noise.
    CHECK(recs[0].conditioned_u.value() != recs[1].conditioned_u.value());
    CHECK(recs[0].seed != recs[1].seed);
}

TEST_CASE("generation is deterministic and independent of batch size") {
    auto m = tiny_models();
    auto ds = labeled_source(10);
    std::vector<const Sample*> labeled;
    for (int k = 0; k < 4; ++k) labeled.push_back(&ds.train[k]);
    FusionConfig cfg;
    cfg.steps = 6;
    cfg.seed = 3;
    cfg.uncertainty.gaussian = {15.0, 3.0, 10};
    cfg.batch_size = 4;
    auto a = generate_dataset(labeled, cfg, m);
    auto b = generate_dataset(labeled, cfg, m);
    cfg.batch_size = 1;
    auto c = generate_dataset(labeled, cfg, m);
    for (size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].image == b[k].image);
        CHECK(a[k].conditioned_u == c[k].conditioned_u);
        double max_diff = 0;
        for (size_t i = 0; i < a[k].image.data.size(); ++i)
            max_diff = std::max<double>(max_diff, std::abs(a[k].image.data[i] - c[k].image.data[i]));
        CHECK(max_diff < 1e-3);
    }
}

TEST_CASE("fixed and Gaussian uncertainty sources") {
    auto m = tiny_models();
    auto ds = labeled_source(40);
    std::vector<const Sample*> labeled;
    for (const auto& s : ds.train) labeled.push_back(&s);
    FusionConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = 32;
    cfg.uncertainty.mode = UncertaintySource::Mode::Fixed;
    cfg.uncertainty.fixed_u = 37.5;
    for (const auto& r : generate_dataset(labeled, cfg, m)) CHECK(r.conditioned_u.value() == 37.5);

    cfg.uncertainty.mode = UncertaintySource::Mode::Gaussian;
    cfg.uncertainty.gaussian = {10.89, 2.71, 100};
    std::vector<double> us;
    for (const auto& r : generate_dataset(labeled, cfg, m)) us.push_back(r.conditioned_u.value());
    auto fit = fit_gaussian(std::span<const double>(us));
    // 32 draws: the mean lies within four standard errors.
    CHECK(std::abs(fit.mean - 10.89) < 4 * 2.71 / std::sqrt(32.0));
    CHECK((fit.std > 1.5 && fit.std < 4.5));
}

TEST_CASE("invalid configurations and missing models") {
    FusionConfig cfg;
    cfg.alpha = 1.5;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.uncertainty.mode = UncertaintySource::Mode::Fixed;
    cfg.uncertainty.fixed_u = 120;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.multiplicity = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);

    auto m = tiny_models();
    m.uncertainty = nullptr;
    auto ds = labeled_source(10);
    GenerationRequest req{&*ds.train[0].label_map, 10.0, 1, ds.train[0].id};
    CHECK_THROWS_AS(generate_batch({&req, 1}, 0.4, 4, m, ControlMode::Dual), ConfigError);
    CHECK_NOTHROW(generate_batch({&req, 1}, 0.4, 4, m, ControlMode::SemanticOnly));
}

TEST_CASE("saved synthetic datasets load back with their generation log") {
    auto m = tiny_models();
    auto ds = labeled_source(10);
    std::vector<const Sample*> labeled{&ds.train[0], &ds.train[1], &ds.train[2]};
    FusionConfig cfg;
    cfg.steps = 4;
    cfg.uncertainty.gaussian = {12.0, 2.0, 5};
    auto recs = generate_dataset(labeled, cfg, m);
    SegmenterConfig arch;
    arch.height = arch.width = 32;
    arch.channels = {8, 16};
    Segmenter seg(arch);
    measure_records(recs, seg);
    for (const auto& r : recs) CHECK(r.measured_u.has_value());

    TempDir tmp("gen");
    save_generated(recs, 5, tmp.path());
    auto back = load_dataset(tmp.path());
    CHECK(back.train.size() == 3);
    for (size_t k = 0; k < 3; ++k) {
        CHECK(back.train[k].domain == Domain::SyntheticLabeled);
        CHECK(*back.train[k].label_map == recs[k].label_map);
    }
    std::ifstream csv(tmp.path() / "generation.csv");
    std::string line;
    int rows = 0;
    std::getline(csv, line);
    CHECK(line == "id,source_id,conditioned_u,measured_u,seed");
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 3);
}

}  // TEST_SUITE
