// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <random>

#include "helpers.hpp"

using namespace uniacorn;
using testing::TempDir;

namespace {

LabelMap grid(int h, int w, std::initializer_list<std::uint8_t> v) {
    LabelMap m(h, w);
    m.data.assign(v.begin(), v.end());
    return m;
}

int count_lines(const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    int n = 0;
    while (std::getline(f, line)) ++n;
    return n;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("Jaccard on a hand-checked 2x2 example") {
    auto pred = grid(2, 2, {0, 1, 1, 1});
    auto truth = grid(2, 2, {0, 0, 1, 1});
    auto j = jaccard(pred, truth, 2);
    CHECK(j[0] == doctest::Approx(0.5));
    CHECK(j[1] == doctest::Approx(2.0 / 3.0));
    // A class absent from both maps counts as perfect agreement.
    auto j3 = jaccard(pred, truth, 3);
    CHECK(j3[2] == 1.0);
    CHECK_THROWS_AS(jaccard(pred, grid(1, 2, {0, 0}), 2), ContractError);
}

TEST_CASE("Jaccard properties: identity, symmetry, range") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> lab(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        LabelMap a(5, 7), b(5, 7);
        for (auto& v : a.data) v = static_cast<std::uint8_t>(lab(rng));
        for (auto& v : b.data) v = static_cast<std::uint8_t>(lab(rng));
        for (double v : jaccard(a, a, 4)) CHECK(v == 1.0);
        auto ab = jaccard(a, b, 4);
        auto ba = jaccard(b, a, 4);
        for (int c = 0; c < 4; ++c) {
            CHECK(ab[c] == ba[c]);
            CHECK((ab[c] >= 0.0 && ab[c] <= 1.0));
        }
    }
}

TEST_CASE("micro aggregation equals Jaccard of the concatenated maps") {
    auto p1 = grid(2, 2, {0, 1, 1, 2});
    auto t1 = grid(2, 2, {0, 1, 2, 2});
    auto p2 = grid(2, 2, {2, 2, 0, 1});
    auto t2 = grid(2, 2, {2, 0, 0, 1});
    IoUCounts counts(3);
    counts.add(p1, t1);
    counts.add(p2, t2);
    auto r = counts.report();
    auto cat_p = grid(2, 4, {0, 1, 1, 2, 2, 2, 0, 1});
    auto cat_t = grid(2, 4, {0, 1, 2, 2, 2, 0, 0, 1});
    auto expect = jaccard(cat_p, cat_t, 3);
    for (int c = 0; c < 3; ++c) CHECK(r.per_label[c] == doctest::Approx(expect[c]));
    CHECK(r.mean_all == doctest::Approx((expect[0] + expect[1] + expect[2]) / 3));
    CHECK(r.mean_foreground == doctest::Approx((expect[1] + expect[2]) / 2));
}

TEST_CASE("Frechet distance: closed forms") {
    // Diagonal covariances: sum (sqrt a - sqrt b)^2 plus the squared mean gap.
    auto ma = torch::tensor({0.0, 1.0, 2.0}, torch::kFloat64);
    auto mb = torch::tensor({1.0, 1.0, 0.0}, torch::kFloat64);
    auto ca = torch::diag(torch::tensor({1.0, 4.0, 9.0}, torch::kFloat64));
    auto cb = torch::diag(torch::tensor({4.0, 1.0, 9.0}, torch::kFloat64));
    const double expect = (1 + 0 + 4) + (1.0 + 1.0 + 0.0);
    CHECK(frechet_from_moments(ma, ca, mb, cb) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(frechet_from_moments(ma, ca, ma, ca) == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));

    // Sample-based estimate converges to the population value.
    auto g = make_generator(4);
    const int n = 200000;
    auto a = torch::randn({n, 3}, g, torch::kFloat64) * torch::tensor({1.0, 2.0, 3.0}, torch::kFloat64) + ma;
    auto b = torch::randn({n, 3}, g, torch::kFloat64) * torch::tensor({2.0, 1.0, 3.0}, torch::kFloat64) + mb;
    CHECK(frechet_distance(a, b) == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("Frechet distance: identity, symmetry, non-negativity") {
    auto g = make_generator(8);
    auto a = torch::randn({300, 4}, g, torch::kFloat64);
    auto mix = torch::randn({4, 4}, g, torch::kFloat64);
    auto b = torch::randn({300, 4}, g, torch::kFloat64).matmul(mix) + 0.5;
    CHECK(frechet_distance(a, a) < 1e-6);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-6));
    CHECK(frechet_distance(a, b) > 0.0);
    CHECK_THROWS_AS(frechet_distance(a, torch::randn({10, 3}, torch::kFloat64)), ContractError);
}

TEST_CASE("domain classifier features and extractor id") {
    auto src = generate_domain(testing::small_spec(Domain::SourceLabeled, 1), 40);
    auto tgt = generate_domain(testing::small_spec(Domain::TargetUnlabeled, 1), 40);
    std::vector<const Image*> s, t, hs, ht;
    for (const auto& x : src.train) s.push_back(&x.image);
    for (const auto& x : tgt.train) t.push_back(&x.image);
    for (const auto& x : src.test) hs.push_back(&x.image);
    for (const auto& x : tgt.test) ht.push_back(&x.image);
    auto fit = train_domain_classifier(s, t, hs, ht, {3e-3, 5, 16, 1});
    CHECK((fit.heldout_accuracy >= 0.0 && fit.heldout_accuracy <= 1.0));
    auto f = extract_features(fit.model, hs);
    CHECK(f.sizes() == torch::IntArrayRef({static_cast<int64_t>(hs.size()), 32}));

    TempDir tmp("clf");
    save_domain_classifier(tmp.path() / "clf.pt", fit.model);
    const auto id = extractor_id(tmp.path() / "clf.pt");
    CHECK(id.rfind("domain-classifier/v1/", 0) == 0);
    auto back = load_domain_classifier(tmp.path() / "clf.pt");
    CHECK(torch::allclose(extract_features(back, hs), f));
    auto rep = frechet_distance(back, id, "source", hs, "target", ht);
    CHECK(rep.extractor == id);
    CHECK(rep.dataset_a == "source");
    CHECK(rep.distance >= 0.0);
    std::vector<const Image*> one{hs[0]};
    CHECK_THROWS_AS(frechet_distance(back, id, "a", one, "b", ht), ContractError);
}

TEST_CASE("Spearman rank correlation") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> up{2, 4, 8, 16, 32};
    const std::vector<double> down{5, 4, 3, 2, 1};
    CHECK(spearman(x, up) == doctest::Approx(1.0));
    CHECK(spearman(x, down) == doctest::Approx(-1.0));
    // Ties use average ranks: y ranks (1.5, 1.5, 3, 4, 5); the Pearson
    // correlation of those ranks with 1..5 is 0.9747 to four places.
    const std::vector<double> tied{7, 7, 8, 9, 10};
    CHECK(spearman(x, tied) == doctest::Approx(0.97467943).epsilon(1e-6));
    const std::vector<double> flat{3, 3, 3, 3, 3};
    CHECK(spearman(x, flat) == 0.0);
    const std::vector<double> short_y{1, 2};
    CHECK_THROWS_AS(spearman(x, short_y), ContractError);
}

TEST_CASE("uncertainty summaries") {
    auto s = summarize_uncertainty("gen", {10.0, 20.0, 30.0});
    CHECK(s.mean == doctest::Approx(20.0));
    CHECK(s.std == doctest::Approx(10.0));
    CHECK(s.n == 3);
    CHECK_FALSE(s.degenerate);
    int total = 0;
    for (int c : s.histogram) total += c;
    CHECK(total == 3);
    CHECK(s.histogram.size() == 50);

    auto one = summarize_uncertainty("single", {42.0});
    CHECK(one.degenerate);
    CHECK(one.std == 0.0);
    CHECK_THROWS_AS(summarize_uncertainty("none", {}), ContractError);
}

TEST_CASE("report emission") {
    IoUReport r;
    r.per_label = {0.9, 0.8, 0.7, 0.6, 0.5};
    r.mean_all = 0.7;
    r.mean_foreground = 0.65;
    ReportBundle bundle;
    bundle.iou = {{"T0", r}, {"T1", r}};
    bundle.frechet = {{"domain-classifier/v1/abc", 1.5, "generated", "target"}};
    bundle.uncertainty = {summarize_uncertainty("target", {10, 12, 14})};
    bundle.alpha_sweep = {{0.0, 8.0, 0.6}, {1.0, 12.0, 0.5}};
    TempDir tmp("report");
    auto files = emit_report(bundle, tmp.path());
    for (const auto* name : {"iou.csv", "iou.png", "frechet.csv", "uncertainty.csv", "uncertainty_hist.png",
                             "alpha_sweep.csv", "alpha_sweep.png", "summary.json"}) {
        CHECK_MESSAGE(fs::exists(tmp.path() / name), name);
    }
    CHECK(files.size() == 8);
    // Header, one row per label, then the two means.
    CHECK(count_lines(tmp.path() / "iou.csv") == 1 + 5 + 2);
    auto summary = nlohmann::json::parse(read_text_file(tmp.path() / "summary.json"));
    CHECK(summary["frechet"][0]["extractor"] == "domain-classifier/v1/abc");

    TempDir empty("report-empty");
    CHECK(emit_report(ReportBundle{}, empty.path()).empty());
    CHECK(fs::is_empty(empty.path()));

    TempDir partial("report-partial");
    ReportBundle only_u;
    only_u.uncertainty = {summarize_uncertainty("single", {5.0})};
    auto some = emit_report(only_u, partial.path());
    CHECK(fs::exists(partial.path() / "uncertainty.csv"));
    CHECK_FALSE(fs::exists(partial.path() / "iou.csv"));
}

TEST_CASE("segmenter evaluation requires labels") {
    SegmenterConfig arch;
    arch.height = arch.width = 32;
    arch.channels = {8, 16};
    Segmenter seg(arch);
    auto tgt = generate_domain(testing::small_spec(Domain::TargetUnlabeled, 2), 20);
    auto rep = evaluate_segmenter(seg, tgt);
    CHECK(rep.per_label.size() == 5);
    std::vector<const Sample*> unlabeled{&tgt.train[0]};
    CHECK_THROWS_AS(evaluate_segmenter(seg, std::span<const Sample* const>(unlabeled)), ContractError);
}

}  // TEST_SUITE
