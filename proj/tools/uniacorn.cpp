// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "uniacorn/image_io.hpp"
#include "uniacorn/pipeline.hpp"

using namespace uniacorn;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string stages;
    std::string stop_after;
    std::optional<int> threads;
};

PipelineConfig make_config(const Globals& g) {
    PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.output = g.out;
    if (g.threads) cfg.threads = *g.threads;
    return cfg;
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

int run_stages(PipelineConfig cfg, std::vector<std::string> stages, const std::string& stop_after) {
    RunOptions opts;
    opts.stages = std::move(stages);
    opts.stop_after = stop_after;
    opts.log = log_line;
    auto manifest = run_pipeline(cfg, opts);
    if (!manifest.metrics.empty()) std::cout << manifest.metrics.dump(2) << "\n";
    std::cerr << "manifest: " << manifest_path(cfg.output).string() << "\n";
    return 0;
}

// A dataset directory (manifest.json) or a directory of indexed label PNGs.
std::vector<Sample> load_label_source(const fs::path& dir) {
    std::vector<Sample> out;
    if (fs::exists(dir / "manifest.json")) {
        auto ds = load_dataset(dir);
        for (auto* s : all_samples(ds))
            if (s->label_map) out.push_back(*s);
        std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
        return out;
    }
    UNIACORN_EXPECT(fs::is_directory(dir), IoError, "label directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        auto raw = read_png(f);
        UNIACORN_EXPECT(raw.channels == 1, LoadError, f.string() + ": label maps must be single-channel");
        Sample s;
        s.id = f.stem().string();
        LabelMap m(raw.height, raw.width);
        m.data = raw.pixels;
        s.label_map = std::move(m);
        s.image = Image(raw.height, raw.width);
        out.push_back(std::move(s));
    }
    UNIACORN_EXPECT(!out.empty(), LoadError, "no label maps found in " + dir.string());
    return out;
}

struct GenerateArgs {
    std::string labels, gaussian, out, models;
    double alpha = 0.4;
    int steps = 1000;
    int multiplicity = 1;
    std::optional<double> fixed_u;
    std::vector<double> alpha_sweep;
};

int run_generate(const PipelineConfig& cfg, const GenerateArgs& a) {
    UNIACORN_EXPECT(!a.out.empty(), ConfigError, "generate needs --out");
    UNIACORN_EXPECT(a.fixed_u.has_value() != !a.gaussian.empty(), ConfigError,
                    "generate needs exactly one of --gaussian or --fixed-u");
    const fs::path root = a.models.empty() ? cfg.output : fs::path(a.models);
    GenerativeModels m;
    m.autoencoder = load_autoencoder(root / "ae/autoencoder.pt");
    m.backbone = load_backbone(root / "ddpm/backbone.pt");
    m.semantic = load_controlnet(root / "cn_semantic/controlnet.pt");
    m.uncertainty = load_controlnet(root / "cn_uncertainty/controlnet.pt");
    m.schedule = NoiseSchedule::linear(cfg.schedule.train_steps, cfg.schedule.beta_start, cfg.schedule.beta_end);

    FusionConfig fc;
    fc.alpha = a.alpha;
    fc.steps = std::min(a.steps, m.schedule.steps());
    fc.seed = derive_seed(cfg.seed, "cli/generate");
    fc.multiplicity = a.multiplicity;
    fc.batch_size = cfg.generate_batch;
    if (a.fixed_u) {
        fc.uncertainty.mode = UncertaintySource::Mode::Fixed;
        fc.uncertainty.fixed_u = *a.fixed_u;
    } else {
        fc.uncertainty.mode = UncertaintySource::Mode::Gaussian;
        fc.uncertainty.gaussian = read_gaussian(a.gaussian);
    }
    auto labeled = load_label_source(a.labels);
    std::vector<const Sample*> ptrs;
    for (const auto& s : labeled) ptrs.push_back(&s);
    std::optional<Segmenter> seg;
    if (fs::exists(root / "seg/segmenter.pt")) seg = Segmenter::load(root / "seg/segmenter.pt");
    auto emit = [&](const fs::path& dir) {
        auto records = generate_dataset(ptrs, fc, m);
        if (seg) measure_records(records, *seg);
        save_generated(records, m.semantic->cfg.n_classes, dir);
        std::cerr << "wrote " << records.size() << " images to " << dir.string() << "\n";
    };
    if (a.alpha_sweep.empty()) {
        emit(a.out);
        return 0;
    }
    // Same seeds and u draws at every alpha; only the fusion weight changes.
    for (double alpha : a.alpha_sweep) {
        fc.alpha = alpha;
        char name[32];
        std::snprintf(name, sizeof name, "alpha_%.2f", alpha);
        emit(fs::path(a.out) / name);
    }
    return 0;
}

struct EvaluateArgs {
    std::string seg, test, uncertainty, out, extractor;
    std::vector<std::string> frechet;
};

std::vector<const Image*> images_of(const DatasetSplit& ds) {
    std::vector<const Image*> out;
    for (auto* s : all_samples(ds)) out.push_back(&s->image);
    return out;
}

int run_evaluate(const PipelineConfig& cfg, const EvaluateArgs& a) {
    UNIACORN_EXPECT(!a.out.empty(), ConfigError, "evaluate needs --out");
    ReportBundle bundle;
    std::optional<Segmenter> seg;
    if (!a.seg.empty()) seg = Segmenter::load(a.seg);
    if (!a.test.empty()) {
        UNIACORN_EXPECT(seg.has_value(), ConfigError, "--test needs --seg");
        auto ds = load_dataset(a.test);
        std::vector<const Sample*> test;
        for (const auto& s : ds.test) test.push_back(&s);
        if (test.empty()) test = all_samples(ds);
        bundle.iou.emplace_back(fs::path(a.test).filename().string(), evaluate_segmenter(*seg, test));
    }
    if (!a.frechet.empty()) {
        const fs::path ckpt = a.extractor.empty() ? cfg.output / "evaluate/domain_classifier.pt" : fs::path(a.extractor);
        UNIACORN_EXPECT(fs::exists(ckpt), ConfigError,
                        "--frechet needs a feature extractor checkpoint (--extractor or a completed evaluate stage)");
        auto clf = load_domain_classifier(ckpt);
        auto da = load_dataset(a.frechet[0]);
        auto db = load_dataset(a.frechet[1]);
        bundle.frechet.push_back(frechet_distance(clf, extractor_id(ckpt), a.frechet[0], images_of(da), a.frechet[1],
                                                  images_of(db)));
    }
    if (!a.uncertainty.empty()) {
        UNIACORN_EXPECT(seg.has_value(), ConfigError, "--uncertainty needs --seg");
        auto ds = load_dataset(a.uncertainty);
        bundle.uncertainty.push_back(dataset_uncertainty(a.uncertainty, images_of(ds), *seg));
    }
    auto files = emit_report(bundle, a.out);
    if (files.empty()) {
        std::cerr << "nothing to evaluate\n";
        return 3;
    }
    for (const auto& f : files) std::cout << f.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty-aware dual-control latent diffusion for segmentation under domain shift"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Pipeline config (JSON)");
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out", g.out, "Experiment output root");
    app.add_option("--stages", g.stages, "Comma-separated stages to run (run-all)");
    app.add_option("--stop-after", g.stop_after, "Stop after this stage (simulated interruption)");
    app.add_option("--threads", g.threads, "Intra-op threads");

    struct StageCommand {
        const char* name;
        const char* stage;
        const char* help;
    };
    const StageCommand simple[] = {
        {"gen-data", "data", "Render the source and target domains"},
        {"train-seg", "seg", "Train the source-only segmenter"},
        {"train-ae", "ae", "Train the latent autoencoder"},
        {"train-ddpm", "ddpm", "Train the latent noise predictor"},
        {"fit-uncertainty", "gaussian_fit", "Fit the target-domain uncertainty Gaussian"},
    };
    std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
    for (const auto& c : simple) stage_cmds.emplace_back(app.add_subcommand(c.name, c.help), c.stage);

    auto* cn = app.add_subcommand("train-cn", "Train a ControlNet against the frozen backbone");
    std::string kind;
    cn->add_option("--kind", kind, "semantic or uncertainty")->required()->check(CLI::IsMember({"semantic", "uncertainty"}));

    auto* gen = app.add_subcommand("generate", "Sample labeled images with dual control");
    GenerateArgs ga;
    gen->add_option("--labels", ga.labels, "Dataset or label-map directory");
    gen->add_option("--gaussian", ga.gaussian, "Uncertainty Gaussian (JSON)");
    gen->add_option("--alpha", ga.alpha, "Uncertainty residual weight")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--steps", ga.steps, "Reverse steps")->check(CLI::PositiveNumber);
    gen->add_option("--out", ga.out, "Output dataset directory");
    gen->add_option("--multiplicity", ga.multiplicity, "Images per label map")->check(CLI::PositiveNumber);
    gen->add_option("--fixed-u", ga.fixed_u, "Condition every image on this U_H")->check(CLI::Range(0.0, 100.0));
    gen->add_option("--models", ga.models, "Experiment root holding the trained models");
    gen->add_option("--alpha-sweep", ga.alpha_sweep, "Generate once per alpha into <out>/alpha_<value>")
        ->delimiter(',')
        ->check(CLI::Range(0.0, 1.0));

    auto* re = app.add_subcommand("retrain", "Retrain the segmenter on generated data");
    std::string mix;
    re->add_option("--mix", mix, "synth_only or synth_plus_source");

    auto* ev = app.add_subcommand("evaluate", "Evaluate segmenters and datasets");
    EvaluateArgs ea;
    ev->add_option("--seg", ea.seg, "Segmenter checkpoint");
    ev->add_option("--test", ea.test, "Labeled test dataset");
    ev->add_option("--frechet", ea.frechet, "Two dataset directories")->expected(2);
    ev->add_option("--uncertainty", ea.uncertainty, "Dataset for the uncertainty summary");
    ev->add_option("--extractor", ea.extractor, "Domain classifier checkpoint for --frechet");
    ev->add_option("--out", ea.out, "Report directory");

    auto* all = app.add_subcommand("run-all", "Run every pipeline stage (or --stages)");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = make_config(g);
        for (const auto& [cmd, stage] : stage_cmds)
            if (cmd->parsed()) return run_stages(cfg, {stage}, "");
        if (cn->parsed()) return run_stages(cfg, {kind == "semantic" ? "cn_semantic" : "cn_uncertainty"}, "");
        if (gen->parsed()) {
            if (ga.labels.empty()) return run_stages(cfg, {"generate"}, "");
            return run_generate(cfg, ga);
        }
        if (re->parsed()) {
            if (!mix.empty()) cfg.retrain_mix = retrain_mix_from_string(mix);
            return run_stages(cfg, {"retrain"}, "");
        }
        if (ev->parsed()) {
            if (ea.seg.empty() && ea.test.empty() && ea.frechet.empty() && ea.uncertainty.empty())
                return run_stages(cfg, {"evaluate"}, "");
            return run_evaluate(cfg, ea);
        }
        if (all->parsed()) return run_stages(cfg, parse_stage_list(g.stages), g.stop_after);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
