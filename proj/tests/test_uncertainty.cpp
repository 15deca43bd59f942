// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "helpers.hpp"

using namespace uniacorn;
using testing::TempDir;

namespace {

ProbabilityMap constant_probs(std::vector<double> dist, int H, int W) {
    ProbabilityMap p(static_cast<int>(dist.size()), H, W);
    for (size_t px = 0; px < p.pixels(); ++px)
        for (size_t c = 0; c < dist.size(); ++c) p.values[px * dist.size() + c] = dist[c];
    return p;
}

}  // namespace

TEST_SUITE("uncertainty") {

TEST_CASE("entropy of reference distributions") {
    for (int L : {2, 3, 5}) {
        auto h = pixelwise_entropy(constant_probs(std::vector<double>(L, 1.0 / L), 3, 4));
        for (double v : h.data) CHECK(v == doctest::Approx(std::log(L)).epsilon(1e-9));
        CHECK(mean_uncertainty(h, L).value() == doctest::Approx(100.0).epsilon(1e-9));
    }
    auto one_hot = pixelwise_entropy(constant_probs({0.0, 1.0, 0.0}, 2, 2));
    for (double v : one_hot.data) CHECK(v == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(mean_uncertainty(one_hot, 3).value() == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    auto coin = pixelwise_entropy(constant_probs({0.5, 0.5}, 2, 2));
    for (double v : coin.data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("mean uncertainty of a half-certain map is 50") {
    // Half the pixels uniform over L=4, half one-hot.
    ProbabilityMap p(4, 2, 2);
    for (int c = 0; c < 4; ++c) p.at(0, 0, c) = p.at(0, 1, c) = 0.25;
    p.at(1, 0, 2) = 1.0;
    p.at(1, 1, 3) = 1.0;
    CHECK(mean_uncertainty(pixelwise_entropy(p), 4).value() == doctest::Approx(50.0).epsilon(1e-9));
}

TEST_CASE("entropy stays within [0, ln L] for random distributions") {
    std::mt19937_64 rng(5);
    std::gamma_distribution<double> g(0.3, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int L = 2 + trial % 6;
        ProbabilityMap p(L, 4, 4);
        for (size_t px = 0; px < p.pixels(); ++px) {
            double s = 0;
            for (int c = 0; c < L; ++c) s += p.values[px * L + c] = g(rng) + 1e-12;
            for (int c = 0; c < L; ++c) p.values[px * L + c] /= s;
        }
        auto h = pixelwise_entropy(p);
        for (double v : h.data) {
            CHECK(v >= 0.0);
            CHECK(v <= std::log(L) + 1e-12);
        }
        const double u = mean_uncertainty(h, L).value();
        CHECK((u >= 0.0 && u <= 100.0));
    }
}

TEST_CASE("contract errors") {
    EntropyMap h(2, 2, 0.0);
    CHECK_THROWS_AS(mean_uncertainty(h, 1), ContractError);
    CHECK_THROWS_AS(mean_uncertainty(EntropyMap{}, 3), ContractError);
    CHECK_THROWS_AS(MeanUncertainty(101.0), ContractError);
    CHECK_THROWS_AS(MeanUncertainty(-0.5), ContractError);
    CHECK_THROWS_AS(MeanUncertainty(std::nan("")), ContractError);
}

TEST_CASE("control image is constant and carries raw units") {
    auto img = make_control_image(MeanUncertainty(10.89), 64, 64);
    CHECK(img.pixels.data.size() == 4096);
    for (float v : img.pixels.data) CHECK(v == doctest::Approx(10.89).epsilon(1e-6));
    CHECK(img.value() == doctest::Approx(10.89).epsilon(1e-6));
}

TEST_CASE("Gaussian fit uses the sample standard deviation") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    auto g = fit_gaussian(std::span<const double>(v));
    CHECK(g.mean == doctest::Approx(2.5));
    CHECK(g.std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    CHECK(g.n_fit == 4);

    const std::vector<double> one{3.0};
    CHECK_THROWS_AS(fit_gaussian(std::span<const double>(one)), ValidationError);
    const std::vector<double> flat{3.0, 3.0, 3.0};
    CHECK_THROWS_AS(fit_gaussian(std::span<const double>(flat)), ValidationError);
}

TEST_CASE("sampled uncertainty follows the fitted Gaussian") {
    UncertaintyGaussian g{10.89, 2.71, 100};
    std::mt19937_64 rng(123);
    const int n = 10000;
    std::vector<double> draws;
    for (int i = 0; i < n; ++i) draws.push_back(sample_uncertainty(g, rng).value());
    auto back = fit_gaussian(std::span<const double>(draws));
    CHECK(std::abs(back.mean - 10.89) < 0.1);
    CHECK(std::abs(back.std - 2.71) < 0.1);
}

TEST_CASE("sampled uncertainty is clamped to [0,100]") {
    UncertaintyGaussian g{50.0, 500.0, 2};
    std::mt19937_64 rng(1);
    int at_bounds = 0;
    for (int i = 0; i < 1000; ++i) {
        const double u = sample_uncertainty(g, rng).value();
        CHECK((u >= 0.0 && u <= 100.0));
        at_bounds += u == 0.0 || u == 100.0;
    }
    CHECK(at_bounds > 500);
}

TEST_CASE("segmenter-measured uncertainty lies in range and the report round-trips") {
    SegmenterConfig arch;
    arch.height = arch.width = 32;
    arch.channels = {8, 16};
    torch::manual_seed(0);
    Segmenter seg(arch);
    auto ds = generate_domain(testing::small_spec(Domain::TargetUnlabeled, 3), 10);
    auto samples = all_samples(ds);
    auto fit = fit_gaussian(std::span<const Sample* const>(samples), seg);
    CHECK(fit.values.size() == 10);
    CHECK(fit.ids.size() == 10);
    for (double u : fit.values) CHECK((u >= 0.0 && u <= 100.0));

    TempDir tmp("unc");
    write_uncertainty_report(tmp.path() / "target_u", fit);
    CHECK(fs::exists(tmp.path() / "target_u.csv"));
    auto g = read_gaussian(tmp.path() / "target_u.json");
    CHECK(g.mean == doctest::Approx(fit.gaussian.mean));
    CHECK(g.std == doctest::Approx(fit.gaussian.std));
    CHECK(g.n_fit == 10);
}

}  // TEST_SUITE
