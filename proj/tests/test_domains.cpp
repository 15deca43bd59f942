// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "uniacorn/image_io.hpp"

using namespace uniacorn;
using testing::small_spec;
using testing::TempDir;

TEST_SUITE("domains") {

TEST_CASE("clean spec yields labeled layered images") {
    auto spec = small_spec(Domain::SourceLabeled, 3);
    auto ds = generate_domain(spec, 10);
    CHECK(ds.size() == 10);
    for (const auto* s : all_samples(ds)) {
        REQUIRE(s->label_map.has_value());
        CHECK(s->domain == Domain::SourceLabeled);
        CHECK(s->image.height == 32);
        // Row 0 is background; labels never decrease going down a column.
        for (int j = 0; j < 32; ++j) {
            CHECK(s->label_map->at(0, j) == 0);
            int prev = 0;
            for (int i = 0; i < 32; ++i) {
                const int v = s->label_map->at(i, j);
                CHECK((v >= prev || v == 0));
                if (v != 0) prev = v;
            }
        }
    }
}

TEST_CASE("generation is a pure function of (spec, n)") {
    auto spec = small_spec(Domain::TargetUnlabeled, 11);
    CHECK(generate_domain(spec, 12) == generate_domain(spec, 12));
    auto other = spec;
    other.seed = 12;
    CHECK_FALSE(generate_domain(spec, 12) == generate_domain(other, 12));
}

TEST_CASE("paired specs share label maps pixel for pixel") {
    auto src = small_spec(Domain::SourceLabeled, 5);
    auto tgt = small_spec(Domain::TargetUnlabeled, 5);
    tgt.degradations = {{DegradationKind::Blur, 2.0}, {DegradationKind::SpeckleNoise, 0.3}};
    for (int i = 0; i < 8; ++i) {
        auto a = render_sample(src, i);
        auto b = render_sample(tgt, i);
        REQUIRE(a.label_map.has_value());
        REQUIRE(b.label_map.has_value());
        CHECK(*a.label_map == *b.label_map);
        CHECK_FALSE(a.image == b.image);
    }
}

TEST_CASE("target labels exist only in the test split") {
    auto ds = generate_domain(small_spec(Domain::TargetUnlabeled, 2), 30);
    for (const auto& s : ds.train) CHECK_FALSE(s.label_map.has_value());
    for (const auto& s : ds.val) CHECK_FALSE(s.label_map.has_value());
    REQUIRE_FALSE(ds.test.empty());
    for (const auto& s : ds.test) CHECK(s.label_map.has_value());
}

TEST_CASE("splits are disjoint and follow the configured fractions") {
    auto spec = small_spec(Domain::SourceLabeled, 9);
    auto ds = generate_domain(spec, 50);
    std::set<std::string> ids;
    for (const auto* s : all_samples(ds)) CHECK(ids.insert(s->id).second);
    CHECK(ds.train.size() == 40);
    CHECK(ds.val.size() == 5);
    CHECK(ds.test.size() == 5);
}

TEST_CASE("every class occurs and all pixels lie in [0,1]") {
    for (auto d : {Domain::SourceLabeled, Domain::TargetUnlabeled}) {
        auto ds = generate_domain(small_spec(d, 4), 20);
        std::set<int> classes;
        for (const auto* s : all_samples(ds)) {
            for (float v : s->image.data) CHECK((v >= 0.0f && v <= 1.0f));
            if (s->label_map)
                for (auto v : s->label_map->data) classes.insert(v);
        }
        CHECK(classes.size() == 5);
    }
}

TEST_CASE("spec validation") {
    auto spec = small_spec(Domain::SourceLabeled, 0);
    spec.max_thickness = 40;
    CHECK_THROWS_AS(validate(spec), ConfigError);
    CHECK_THROWS_AS(generate_domain(spec, 10), ConfigError);

    auto src = small_spec(Domain::SourceLabeled, 0);
    auto tgt = small_spec(Domain::TargetUnlabeled, 0);
    CHECK_NOTHROW(validate_pair(src, tgt));
    tgt.degradations.clear();
    CHECK_THROWS_AS(validate_pair(src, tgt), ConfigError);
    tgt = small_spec(Domain::TargetUnlabeled, 0);
    tgt.min_thickness = 4;
    CHECK_THROWS_AS(validate_pair(src, tgt), ConfigError);
    src.degradations = {{DegradationKind::Blur, 1.0}};
    CHECK_THROWS_AS(validate(src), ConfigError);

    CHECK_THROWS_AS(generate_domain(small_spec(Domain::SourceLabeled, 0), 2), ContractError);
}

TEST_CASE("default specs are valid at 64x64") {
    CHECK_NOTHROW(validate_pair(default_source_spec(), default_target_spec()));
}

TEST_CASE("spec JSON round trip") {
    auto spec = small_spec(Domain::TargetUnlabeled, 77);
    nlohmann::json j = spec;
    CHECK(j.get<DomainSpec>() == spec);
}

TEST_CASE("save/load round trip and manifest replay") {
    TempDir tmp("domains");
    auto ds = generate_domain(small_spec(Domain::TargetUnlabeled, 8), 10);
    auto manifest = save_dataset(ds, tmp.path());
    CHECK(fs::exists(manifest));
    int n_images = 0, n_labels = 0;
    for (auto& e : fs::directory_iterator(tmp.path() / "images")) n_images += e.path().extension() == ".png";
    for (auto& e : fs::directory_iterator(tmp.path() / "labels")) n_labels += e.path().extension() == ".png";
    CHECK(n_images == 10);
    CHECK(n_labels == static_cast<int>(ds.test.size()));

    auto loaded = load_dataset(tmp.path());
    CHECK(loaded == ds);

    // Regenerating from the stored spec reproduces the loaded data.
    REQUIRE(loaded.spec.has_value());
    CHECK(generate_domain(*loaded.spec, 10) == loaded);
}

TEST_CASE("label maps are stored as indices") {
    TempDir tmp("domains-idx");
    auto ds = generate_domain(small_spec(Domain::SourceLabeled, 8), 5);
    save_dataset(ds, tmp.path());
    auto raw = read_png(tmp.path() / "labels" / (ds.train[0].id + ".png"));
    CHECK(raw.channels == 1);
    CHECK(raw.pixels == ds.train[0].label_map->data);
}

TEST_CASE("load errors name the sample") {
    TempDir tmp("domains-err");
    auto ds = generate_domain(small_spec(Domain::SourceLabeled, 8), 5);
    save_dataset(ds, tmp.path());
    const auto victim = ds.train[0].id;
    {
        std::ofstream f(tmp.path() / "images" / (victim + ".png"), std::ios::binary | std::ios::app);
        f << "garbage";
    }
    try {
        (void)load_dataset(tmp.path());
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }
    fs::remove(tmp.path() / "images" / (victim + ".png"));
    CHECK_THROWS_AS(load_dataset(tmp.path()), LoadError);
    CHECK_THROWS_AS(load_dataset(tmp.path() / "missing"), LoadError);
}

TEST_CASE("label values >= L are a validation error") {
    TempDir tmp("domains-l");
    auto ds = generate_domain(small_spec(Domain::SourceLabeled, 8), 5);
    save_dataset(ds, tmp.path());
    auto j = nlohmann::json::parse(read_text_file(tmp.path() / "manifest.json"));
    j["n_classes"] = 3;
    write_file_atomic(tmp.path() / "manifest.json", j.dump());
    CHECK_THROWS_AS(load_dataset(tmp.path()), ValidationError);
}

TEST_CASE("photometric degradations change appearance only") {
    auto src = small_spec(Domain::SourceLabeled, 1);
    for (auto kind : {DegradationKind::SpeckleNoise, DegradationKind::Blur, DegradationKind::ContrastGamma,
                      DegradationKind::IntensityShift}) {
        auto tgt = small_spec(Domain::TargetUnlabeled, 1);
        tgt.degradations = {{kind, 0.5}};
        auto a = render_sample(src, 3);
        auto b = render_sample(tgt, 3);
        CHECK(*a.label_map == *b.label_map);
        CHECK_FALSE(a.image == b.image);
    }
}

TEST_CASE("vertical warp moves image and labels together") {
    auto src = small_spec(Domain::SourceLabeled, 1);
    auto tgt = small_spec(Domain::TargetUnlabeled, 1);
    tgt.top_min_fraction = 0.15;
    tgt.degradations = {{DegradationKind::VerticalWarp, 1.0}};
    CHECK_NOTHROW(validate(tgt));
    src.top_min_fraction = 0.15;
    auto a = render_sample(src, 4);
    auto b = render_sample(tgt, 4);
    // Column-wise the warped label column is a shift of the clean one, and
    // the clean image column follows the same shift.
    int shifted_columns = 0;
    for (int j = 0; j < 32; ++j) {
        bool found = false;
        for (int d = -3; d <= 3 && !found; ++d) {
            bool ok = true;
            for (int i = 3; i < 29 && ok; ++i) {
                ok = b.label_map->at(i, j) == a.label_map->at(i - d, j) && b.image.at(i, j) == a.image.at(i - d, j);
            }
            if (ok) {
                found = true;
                shifted_columns += d != 0;
            }
        }
        CHECK(found);
    }
    CHECK(shifted_columns > 0);
}

}  // TEST_SUITE
