// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "helpers.hpp"

using namespace uniacorn;
using testing::smoke_config;
using testing::TempDir;

namespace {

struct StageLog {
    std::set<std::string> ran, skipped;
    RunOptions options(RunOptions o = {}) {
        o.log = [this](const std::string& m) {
            const auto close = m.find(']');
            const auto stage = m.substr(1, close - 1);
            if (m.find("running") != std::string::npos) ran.insert(stage);
            if (m.find("skipped") != std::string::npos) skipped.insert(stage);
        };
        return o;
    }
};

PipelineConfig finalized(PipelineConfig c) {
    finalize(c);
    return c;
}

std::string manifest_text(const fs::path& root) { return read_text_file(manifest_path(root)); }

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config JSON round trip and partial overrides") {
    auto c = finalized(smoke_config("/tmp/x"));
    auto back = pipeline_config_from_json(to_json(c));
    finalize(back);
    CHECK(to_json(back) == to_json(c));

    auto patched = pipeline_config_from_json(nlohmann::json::parse(R"({"generate": {"alpha": 0.7}, "seed": 3})"));
    CHECK(patched.alpha == doctest::Approx(0.7));
    CHECK(patched.seed == 3);
    CHECK(patched.n_per_domain == PipelineConfig{}.n_per_domain);

    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"generate": {"alpha": "high"}})")),
                    ConfigError);
    auto bad = smoke_config("/tmp/x");
    bad.alpha = 2.0;
    CHECK_THROWS_AS(finalize(bad), ConfigError);
    bad = smoke_config("/tmp/x");
    bad.schedule.sample_steps = 500;
    CHECK_THROWS_AS(finalize(bad), ConfigError);

    CHECK_FALSE(patched.evaluation.steering_alpha.has_value());
    auto steer = pipeline_config_from_json(nlohmann::json::parse(R"({"evaluate": {"steering_alpha": 1.0}})"));
    REQUIRE(steer.evaluation.steering_alpha.has_value());
    CHECK(*steer.evaluation.steering_alpha == 1.0);
    CHECK(pipeline_config_from_json(to_json(steer)).evaluation.steering_alpha == steer.evaluation.steering_alpha);
    steer.evaluation.steering_alpha = 1.5;
    CHECK_THROWS_AS(finalize(steer), ConfigError);
}

TEST_CASE("finalize derives distinct stage seeds from the master seed") {
    auto a = finalized(smoke_config("/tmp/x", 1));
    auto b = finalized(smoke_config("/tmp/x", 2));
    CHECK(a.segmenter_train.seed != a.retrain_train.seed);
    CHECK(a.segmenter_train.seed != b.segmenter_train.seed);
    CHECK(a.source.seed != a.target.seed);
    CHECK(a.backbone.latent_height == a.height / a.autoencoder.downsample);
}

TEST_CASE("stage graph and stage lists") {
    const auto& names = stage_names();
    CHECK(names.size() == 10);
    CHECK(names.front() == "data");
    CHECK(names.back() == "evaluate");
    // Every dependency precedes its stage.
    for (size_t k = 0; k < names.size(); ++k)
        for (const auto& d : stage_dependencies(names[k]))
            CHECK(std::find(names.begin(), names.begin() + k, d) != names.begin() + k);
    CHECK((parse_stage_list("generate, evaluate") == std::vector<std::string>{"generate", "evaluate"}));
    CHECK_THROWS_AS(parse_stage_list("generate,bogus"), ConfigError);
    CHECK_THROWS_AS(stage_dependencies("bogus"), ConfigError);
}

TEST_CASE("retraining mixtures and steering points") {
    auto src = generate_domain(testing::small_spec(Domain::SourceLabeled, 1), 20);
    DatasetSplit syn;
    syn.n_classes = 5;
    syn.train = {src.train[0], src.train[1], src.train[2]};
    CHECK(training_mixture(syn, src, RetrainMix::SynthOnly).size() == 3);
    CHECK(training_mixture(syn, src, RetrainMix::SynthPlusSource).size() == 3 + src.train.size());
    CHECK_THROWS_AS(training_mixture(DatasetSplit{}, src, RetrainMix::SynthOnly), ContractError);
    CHECK(retrain_mix_from_string("synth-only") == RetrainMix::SynthOnly);
    CHECK(to_string(RetrainMix::SynthPlusSource) == "synth_plus_source");

    auto pts = steering_points({5.0, 1.0, 10}, {10.0, 2.0, 10}, 5);
    REQUIRE(pts.size() == 5);
    CHECK(pts.front() == doctest::Approx(5.0));
    CHECK(pts.back() == doctest::Approx(14.0));
    for (size_t k = 1; k < pts.size(); ++k) CHECK(pts[k] - pts[k - 1] == doctest::Approx(2.25));
    CHECK_THROWS_AS(steering_points({5.0, 1.0, 10}, {10.0, 2.0, 10}, 1), ContractError);
}

TEST_CASE("end-to-end smoke run is resumable, selective and reproducible") {
    TempDir tmp("pipe");
    const auto root = tmp.path() / "a";
    auto cfg = smoke_config(root);

    StageLog first;
    auto m = run_pipeline(cfg, first.options());
    CHECK(first.ran.size() == 10);
    for (const auto& s : stage_names()) CHECK(m.stages.at(s).complete);
    for (const auto* key : {"t0_target_miou", "t1_target_miou", "frechet_generated_target", "frechet_source_target",
                            "steering_spearman", "semantic_retention_miou", "labels_identical"})
        CHECK_MESSAGE(m.metrics.contains(key), key);
    CHECK(m.metrics["labels_identical"] == true);
    CHECK(fs::exists(root / "evaluate" / "metrics.json"));
    CHECK(fs::exists(root / "evaluate" / "iou.csv"));
    const auto reference = manifest_text(root);

    SUBCASE("an unchanged rerun skips everything") {
        StageLog again;
        run_pipeline(cfg, again.options());
        CHECK(again.ran.empty());
        CHECK(again.skipped.size() == 10);
        CHECK(manifest_text(root) == reference);
    }

    SUBCASE("editing alpha reruns only downstream of generation") {
        cfg.alpha = 0.9;
        StageLog edit;
        run_pipeline(cfg, edit.options());
        CHECK(edit.ran.count("generate"));
        CHECK(edit.ran.count("evaluate"));
        for (const auto& s : edit.ran) CHECK((s == "generate" || s == "retrain" || s == "evaluate"));
        for (const auto* s : {"data", "seg", "ae", "ddpm", "cn_semantic", "cn_uncertainty", "gaussian_fit"})
            CHECK(edit.skipped.count(s));
    }

    SUBCASE("forced stages require current prerequisites") {
        cfg.backbone_fit.epochs += 1;
        RunOptions o;
        o.stages = {"generate"};
        try {
            run_pipeline(cfg, o);
            FAIL("expected ContractError");
        } catch (const ContractError& e) {
            CHECK(std::string(e.what()).find("ddpm") != std::string::npos);
        }
    }

    SUBCASE("pointing the uncertainty stages at the retrained segmenter reruns only their descendants") {
        const auto ckpt = tmp.path() / "iter1_segmenter.pt";
        fs::copy_file(root / "retrain" / "segmenter.pt", ckpt);
        cfg.uncertainty_segmenter = ckpt;
        StageLog iter;
        run_pipeline(cfg, iter.options());
        for (const auto* s : {"gaussian_fit", "cn_uncertainty", "generate", "retrain", "evaluate"})
            CHECK(iter.ran.count(s));
        for (const auto* s : {"data", "seg", "ae", "ddpm", "cn_semantic"}) CHECK(iter.skipped.count(s));
        cfg.uncertainty_segmenter = tmp.path() / "missing.pt";
        CHECK_THROWS_AS(run_pipeline(cfg), ConfigError);
    }

    SUBCASE("a corrupted artifact invalidates its stage") {
        write_file_atomic(root / "gaussian_fit" / "target_u.json", "{}");
        StageLog repair;
        run_pipeline(cfg, repair.options());
        CHECK(repair.ran.count("gaussian_fit"));
        CHECK(repair.skipped.count("ddpm"));
    }

    SUBCASE("an interrupted run resumes to the same manifest") {
        const auto root_b = tmp.path() / "b";
        auto cfg_b = smoke_config(root_b);
        RunOptions o;
        o.stop_after = "cn_semantic";
        auto partial = run_pipeline(cfg_b, o);
        CHECK(partial.stages.at("cn_semantic").complete);
        CHECK_FALSE(partial.stages.at("generate").complete);
        StageLog resume;
        run_pipeline(cfg_b, resume.options());
        CHECK(resume.skipped.count("ddpm"));
        CHECK(resume.ran.count("evaluate"));
        CHECK(manifest_text(root_b) == reference);
    }

    SUBCASE("a different master seed changes the results") {
        const auto root_c = tmp.path() / "c";
        run_pipeline(smoke_config(root_c, 8));
        CHECK(manifest_text(root_c) != reference);
    }
}

TEST_CASE("same seed into a fresh directory reproduces the manifest byte for byte") {
    TempDir tmp("pipe-repro");
    auto cfg = smoke_config(tmp.path() / "one");
    cfg.n_per_domain = 30;
    run_pipeline(cfg);
    auto cfg2 = cfg;
    cfg2.output = tmp.path() / "two";
    run_pipeline(cfg2);
    CHECK(manifest_text(tmp.path() / "one") == manifest_text(tmp.path() / "two"));
}

}  // TEST_SUITE
