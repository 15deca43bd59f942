// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace uniacorn {

using json = nlohmann::json;

std::string to_string(RetrainMix m) { return m == RetrainMix::SynthOnly ? "synth_only" : "synth_plus_source"; }

RetrainMix retrain_mix_from_string(const std::string& s) {
    std::string k = s;
    std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return c == '-' ? '_' : std::tolower(c); });
    if (k == "synth_only") return RetrainMix::SynthOnly;
    if (k == "synth_plus_source") return RetrainMix::SynthPlusSource;
    throw ConfigError("unknown retrain mix '" + s + "' (expected synth_only or synth_plus_source)");
}

// -----------------------------------------------------------------------------
// Config
// -----------------------------------------------------------------------------

json to_json(const PipelineConfig& c) {
    json ev = {{"classifier", c.evaluation.classifier},
               {"steering_points", c.evaluation.steering_points},
               {"steering_seeds", c.evaluation.steering_seeds},
               {"steering_alpha", c.evaluation.steering_alpha ? json(*c.evaluation.steering_alpha) : json(nullptr)},
               {"paired_trials", c.evaluation.paired_trials},
               {"alpha_sweep", c.evaluation.alpha_sweep},
               {"alpha_sweep_images", c.evaluation.alpha_sweep_images}};
    return {{"seed", c.seed},
            {"output", c.output.string()},
            {"threads", c.threads},
            {"height", c.height},
            {"width", c.width},
            {"n_classes", c.n_classes},
            {"data", {{"n_per_domain", c.n_per_domain}, {"source", c.source}, {"target", c.target}}},
            {"segmenter", {{"arch", c.segmenter}, {"train", c.segmenter_train}}},
            {"autoencoder", {{"arch", c.autoencoder}, {"fit", c.autoencoder_fit}}},
            {"backbone", {{"arch", c.backbone}, {"fit", c.backbone_fit}}},
            {"schedule", c.schedule},
            {"controlnet",
             {{"hint_channels", c.hint_channels},
              {"semantic", c.semantic_fit},
              {"uncertainty", c.uncertainty_fit},
              {"uncertainty_segmenter", c.uncertainty_segmenter.string()}}},
            {"generate", {{"alpha", c.alpha}, {"multiplicity", c.multiplicity}, {"batch_size", c.generate_batch}}},
            {"retrain", {{"mix", to_string(c.retrain_mix)}, {"train", c.retrain_train}}},
            {"evaluate", ev}};
}

PipelineConfig pipeline_config_from_json(const json& user) {
    UNIACORN_EXPECT(user.is_object(), ConfigError, "pipeline config must be a JSON object");
    json j = to_json(PipelineConfig{});
    j.merge_patch(user);
    PipelineConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.output = j.at("output").get<std::string>();
        c.threads = j.at("threads").get<int>();
        c.height = j.at("height").get<int>();
        c.width = j.at("width").get<int>();
        c.n_classes = j.at("n_classes").get<int>();
        const auto& d = j.at("data");
        c.n_per_domain = d.at("n_per_domain").get<int>();
        c.source = d.at("source").get<DomainSpec>();
        c.target = d.at("target").get<DomainSpec>();
        c.segmenter = j.at("segmenter").at("arch").get<SegmenterConfig>();
        c.segmenter_train = j.at("segmenter").at("train").get<TrainConfig>();
        c.autoencoder = j.at("autoencoder").at("arch").get<AutoencoderConfig>();
        c.autoencoder_fit = j.at("autoencoder").at("fit").get<FitConfig>();
        c.backbone = j.at("backbone").at("arch").get<BackboneConfig>();
        c.backbone_fit = j.at("backbone").at("fit").get<FitConfig>();
        c.schedule = j.at("schedule").get<ScheduleConfig>();
        const auto& cn = j.at("controlnet");
        c.hint_channels = cn.at("hint_channels").get<int>();
        c.semantic_fit = cn.at("semantic").get<FitConfig>();
        c.uncertainty_fit = cn.at("uncertainty").get<FitConfig>();
        c.uncertainty_segmenter = cn.at("uncertainty_segmenter").get<std::string>();
        const auto& g = j.at("generate");
        c.alpha = g.at("alpha").get<double>();
        c.multiplicity = g.at("multiplicity").get<int>();
        c.generate_batch = g.at("batch_size").get<int>();
        c.retrain_mix = retrain_mix_from_string(j.at("retrain").at("mix").get<std::string>());
        c.retrain_train = j.at("retrain").at("train").get<TrainConfig>();
        const auto& ev = j.at("evaluate");
        c.evaluation.classifier = ev.at("classifier").get<FitConfig>();
        c.evaluation.steering_points = ev.at("steering_points").get<int>();
        c.evaluation.steering_seeds = ev.at("steering_seeds").get<int>();
        c.evaluation.steering_alpha.reset();
        if (ev.contains("steering_alpha") && !ev.at("steering_alpha").is_null())
            c.evaluation.steering_alpha = ev.at("steering_alpha").get<double>();
        c.evaluation.paired_trials = ev.at("paired_trials").get<int>();
        c.evaluation.alpha_sweep = ev.at("alpha_sweep").get<std::vector<double>>();
        c.evaluation.alpha_sweep_images = ev.at("alpha_sweep_images").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j);
}

void finalize(PipelineConfig& c) {
    UNIACORN_EXPECT(c.threads >= 1, ConfigError, "threads must be >= 1");
    UNIACORN_EXPECT(c.n_per_domain >= 20, ConfigError, "n_per_domain must be >= 20");
    UNIACORN_EXPECT(c.uncertainty_segmenter.empty() || fs::is_regular_file(c.uncertainty_segmenter), ConfigError,
                    "controlnet.uncertainty_segmenter not found: " + c.uncertainty_segmenter.string());
    UNIACORN_EXPECT(c.n_classes >= 2 && c.n_classes <= 255, ConfigError, "n_classes must lie in [2, 255]");
    for (DomainSpec* s : {&c.source, &c.target}) {
        s->height = c.height;
        s->width = c.width;
        s->n_classes = c.n_classes;
    }
    c.source.domain = Domain::SourceLabeled;
    c.target.domain = Domain::TargetUnlabeled;
    c.source.seed = derive_seed(c.seed, "data/source");
    c.target.seed = derive_seed(c.seed, "data/target");
    validate_pair(c.source, c.target);

    c.segmenter.n_classes = c.n_classes;
    c.segmenter.height = c.height;
    c.segmenter.width = c.width;
    c.segmenter_train.seed = derive_seed(c.seed, "seg");
    validate(c.segmenter_train);
    c.retrain_train.seed = derive_seed(c.seed, "retrain");
    validate(c.retrain_train);

    c.autoencoder.height = c.height;
    c.autoencoder.width = c.width;
    validate(c.autoencoder);
    c.autoencoder_fit.seed = derive_seed(c.seed, "ae");
    validate(c.autoencoder_fit);

    c.backbone.latent_channels = c.autoencoder.latent_depth();
    c.backbone.latent_height = c.autoencoder.latent_height();
    c.backbone.latent_width = c.autoencoder.latent_width();
    c.backbone_fit.seed = derive_seed(c.seed, "ddpm");
    validate(c.backbone_fit);

    UNIACORN_EXPECT(c.schedule.train_steps >= 2, ConfigError, "schedule.train_steps must be >= 2");
    UNIACORN_EXPECT(c.schedule.sample_steps >= 1 && c.schedule.sample_steps <= c.schedule.train_steps, ConfigError,
                    "schedule.sample_steps must lie in [1, train_steps]");
    (void)NoiseSchedule::linear(c.schedule.train_steps, c.schedule.beta_start, c.schedule.beta_end);

    UNIACORN_EXPECT(c.hint_channels >= 1, ConfigError, "controlnet.hint_channels must be >= 1");
    c.semantic_fit.seed = derive_seed(c.seed, "cn_semantic");
    c.uncertainty_fit.seed = derive_seed(c.seed, "cn_uncertainty");
    validate(c.semantic_fit);
    validate(c.uncertainty_fit);

    FusionConfig f;
    f.alpha = c.alpha;
    f.steps = c.schedule.sample_steps;
    f.multiplicity = c.multiplicity;
    f.batch_size = c.generate_batch;
    f.uncertainty.mode = UncertaintySource::Mode::Fixed;
    validate(f);

    c.evaluation.classifier.seed = derive_seed(c.seed, "evaluate/classifier");
    validate(c.evaluation.classifier);
    UNIACORN_EXPECT(c.evaluation.steering_points >= 2, ConfigError, "evaluate.steering_points must be >= 2");
    UNIACORN_EXPECT(c.evaluation.steering_seeds >= 1, ConfigError, "evaluate.steering_seeds must be >= 1");
    if (c.evaluation.steering_alpha)
        UNIACORN_EXPECT(*c.evaluation.steering_alpha >= 0.0 && *c.evaluation.steering_alpha <= 1.0, ConfigError,
                        "evaluate.steering_alpha must lie in [0,1]");
    UNIACORN_EXPECT(c.evaluation.paired_trials >= 0, ConfigError, "evaluate.paired_trials must be >= 0");
    UNIACORN_EXPECT(c.evaluation.alpha_sweep_images >= 1, ConfigError, "evaluate.alpha_sweep_images must be >= 1");
    for (double a : c.evaluation.alpha_sweep)
        UNIACORN_EXPECT(a >= 0.0 && a <= 1.0, ConfigError, "evaluate.alpha_sweep values must lie in [0,1]");
}

// -----------------------------------------------------------------------------
// Manifest
// -----------------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"data",           "seg",          "ae",       "ddpm",    "cn_semantic",
                                                "cn_uncertainty", "gaussian_fit", "generate", "retrain", "evaluate"};
    return names;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
    static const std::map<std::string, std::vector<std::string>> deps{
        {"data", {}},
        {"seg", {"data"}},
        {"ae", {"data"}},
        {"ddpm", {"data", "ae"}},
        {"cn_semantic", {"data", "ae", "ddpm"}},
        {"cn_uncertainty", {"data", "seg", "ae", "ddpm"}},
        {"gaussian_fit", {"data", "seg"}},
        {"generate", {"data", "seg", "ae", "ddpm", "cn_semantic", "cn_uncertainty", "gaussian_fit"}},
        {"retrain", {"data", "generate"}},
        {"evaluate", {"data", "seg", "ae", "ddpm", "cn_semantic", "cn_uncertainty", "gaussian_fit", "generate", "retrain"}},
    };
    auto it = deps.find(stage);
    UNIACORN_EXPECT(it != deps.end(), ConfigError, "unknown stage '" + stage + "'");
    return it->second;
}

std::vector<std::string> parse_stage_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        (void)stage_dependencies(item);
        if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    }
    return out;
}

json ExperimentManifest::to_json() const {
    json st = json::object();
    for (const auto& [name, r] : stages) {
        json e{{"complete", r.complete}, {"fingerprint", r.fingerprint}, {"artifacts", r.artifacts}, {"metrics", r.metrics}};
        if (!r.error.empty()) e["error"] = r.error;
        st[name] = std::move(e);
    }
    return {{"config", config}, {"master_seed", master_seed}, {"stages", st}, {"metrics", metrics}};
}

ExperimentManifest ExperimentManifest::from_json(const json& j) {
    ExperimentManifest m;
    try {
        m.config = j.at("config");
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        for (const auto& [name, e] : j.at("stages").items()) {
            StageRecord r;
            r.complete = e.at("complete").get<bool>();
            r.fingerprint = e.at("fingerprint").get<std::string>();
            r.artifacts = e.at("artifacts").get<std::map<std::string, std::string>>();
            r.metrics = e.value("metrics", json::object());
            r.error = e.value("error", "");
            m.stages[name] = std::move(r);
        }
        m.metrics = j.value("metrics", json::object());
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed experiment manifest: ") + e.what());
    }
    return m;
}

bool ExperimentManifest::stage_valid(const std::string& stage, const fs::path& root) const {
    auto it = stages.find(stage);
    if (it == stages.end() || !it->second.complete || it->second.artifacts.empty()) return false;
    for (const auto& [rel, sha] : it->second.artifacts) {
        const fs::path p = root / rel;
        if (!fs::is_regular_file(p) || sha256_file(p) != sha) return false;
    }
    return true;
}

fs::path manifest_path(const fs::path& root) { return root / "experiment.json"; }

std::optional<ExperimentManifest> read_manifest(const fs::path& root) {
    const auto p = manifest_path(root);
    if (!fs::exists(p)) return std::nullopt;
    try {
        return ExperimentManifest::from_json(json::parse(read_text_file(p)));
    } catch (const json::exception& e) {
        throw LoadError("cannot parse " + p.string() + ": " + e.what());
    }
}

// -----------------------------------------------------------------------------
// Step 3 helpers
// -----------------------------------------------------------------------------

std::vector<const Sample*> training_mixture(const DatasetSplit& synthetic, const DatasetSplit& source, RetrainMix mix) {
    UNIACORN_EXPECT(!synthetic.train.empty(), ContractError, "retraining needs a non-empty synthetic dataset");
    std::vector<const Sample*> out;
    out.reserve(synthetic.train.size() + source.train.size());
    for (const auto& s : synthetic.train) out.push_back(&s);
    if (mix == RetrainMix::SynthPlusSource)
        for (const auto& s : source.train) out.push_back(&s);
    return out;
}

SegmenterTraining retrain_segmenter(const DatasetSplit& synthetic, const DatasetSplit& source, RetrainMix mix,
                                    const TrainConfig& train, const SegmenterConfig& arch) {
    auto mixture = training_mixture(synthetic, source, mix);
    std::vector<const Sample*> val;
    for (const auto& s : source.val) val.push_back(&s);
    UNIACORN_EXPECT(!val.empty(), ContractError, "retraining needs labeled source validation samples");
    return train_segmenter(mixture, val, train, arch);
}

std::vector<double> steering_points(const UncertaintyGaussian& source, const UncertaintyGaussian& target, int n) {
    UNIACORN_EXPECT(n >= 2, ContractError, "steering sweep needs at least two points");
    const double lo = std::clamp(source.mean, 0.0, 100.0);
    const double hi = std::clamp(target.mean + 2.0 * target.std, 0.0, 100.0);
    std::vector<double> out(n);
    for (int k = 0; k < n; ++k) out[k] = lo + (hi - lo) * k / (n - 1);
    return out;
}

// -----------------------------------------------------------------------------
// Stages
// -----------------------------------------------------------------------------

namespace {

std::vector<const Image*> image_ptrs(const std::vector<Sample>& v) {
    std::vector<const Image*> out;
    for (const auto& s : v) out.push_back(&s.image);
    return out;
}

std::vector<const Sample*> sample_ptrs(const std::vector<Sample>& v) {
    std::vector<const Sample*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

template <typename T>
std::vector<T> concat(std::vector<T> a, const std::vector<T>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_curve(const fs::path& path, const std::vector<double>& curve) {
    std::string csv = "epoch,loss\n";
    for (size_t k = 0; k < curve.size(); ++k) csv += std::to_string(k + 1) + "," + fmt(curve[k]) + "\n";
    write_file_atomic(path, csv);
}

struct StageResult {
    std::vector<std::string> artifacts;  // relative to the output root
    json metrics = json::object();
};

class Runner {
public:
    Runner(const PipelineConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts), root_(cfg.output) {}

    ExperimentManifest run();

private:
    const PipelineConfig& cfg_;
    const RunOptions& opts_;
    fs::path root_;
    ExperimentManifest manifest_;

    void log(const std::string& msg) const {
        if (opts_.log) opts_.log(msg);
    }
    fs::path at(const std::string& rel) const { return root_ / rel; }
    fs::path uncertainty_segmenter() const {
        return cfg_.uncertainty_segmenter.empty() ? at("seg/segmenter.pt") : cfg_.uncertainty_segmenter;
    }
    std::uint64_t seed(const std::string& stage) const { return derive_seed(cfg_.seed, "stage/" + stage); }
    NoiseSchedule schedule() const {
        return NoiseSchedule::linear(cfg_.schedule.train_steps, cfg_.schedule.beta_start, cfg_.schedule.beta_end);
    }

    json stage_config(const std::string& stage) const;
    std::string fingerprint(const std::string& stage) const;
    void save_manifest() const {
        write_file_atomic(manifest_path(root_), manifest_.to_json().dump(2) + "\n");
    }
    StageResult execute(const std::string& stage);

    DatasetSplit source() const { return load_dataset(at("data/source")); }
    DatasetSplit target() const { return load_dataset(at("data/target")); }
    GenerativeModels models() const;

    StageResult run_data();
    StageResult run_seg();
    StageResult run_ae();
    StageResult run_ddpm();
    StageResult run_cn(ControlKind kind);
    StageResult run_gaussian_fit();
    StageResult run_generate();
    StageResult run_retrain();
    StageResult run_evaluate();
};

json Runner::stage_config(const std::string& stage) const {
    const json full = to_json(cfg_);
    json c;
    if (stage == "data") c = full.at("data");
    else if (stage == "seg") c = full.at("segmenter");
    else if (stage == "ae") c = full.at("autoencoder");
    else if (stage == "ddpm") c = {{"backbone", full.at("backbone")}, {"schedule", full.at("schedule")}};
    else if (stage == "cn_semantic")
        c = {{"hint_channels", cfg_.hint_channels}, {"fit", cfg_.semantic_fit}, {"schedule", full.at("schedule")}};
    else if (stage == "cn_uncertainty")
        c = {{"hint_channels", cfg_.hint_channels}, {"fit", cfg_.uncertainty_fit}, {"schedule", full.at("schedule")}};
    else if (stage == "gaussian_fit") c = json::object();
    if ((stage == "cn_uncertainty" || stage == "gaussian_fit") && !cfg_.uncertainty_segmenter.empty())
        c["uncertainty_segmenter_sha256"] = sha256_file(cfg_.uncertainty_segmenter);
    else if (stage == "generate") c = {{"generate", full.at("generate")}, {"sample_steps", cfg_.schedule.sample_steps}};
    else if (stage == "retrain") c = {{"retrain", full.at("retrain")}, {"arch", cfg_.segmenter}};
    else if (stage == "evaluate")
        c = {{"evaluate", full.at("evaluate")},
             {"alpha", cfg_.alpha},
             {"sample_steps", cfg_.schedule.sample_steps},
             {"batch_size", cfg_.generate_batch}};
    c["seed"] = seed(stage);
    return c;
}

std::string Runner::fingerprint(const std::string& stage) const {
    json f{{"stage", stage}, {"config", stage_config(stage)}, {"inputs", json::object()}};
    for (const auto& dep : stage_dependencies(stage)) {
        auto it = manifest_.stages.find(dep);
        f["inputs"][dep] = it == manifest_.stages.end() ? json::object() : json(it->second.artifacts);
    }
    return sha256_hex(f.dump());
}

ExperimentManifest Runner::run() {
    std::error_code ec;
    fs::create_directories(root_, ec);
    UNIACORN_EXPECT(!ec, IoError, "cannot create output root " + root_.string() + ": " + ec.message());

    if (auto existing = read_manifest(root_)) manifest_ = std::move(*existing);
    json snapshot = to_json(cfg_);
    snapshot.erase("output");
    manifest_.config = snapshot;
    manifest_.master_seed = cfg_.seed;
    for (const auto& s : stage_names()) manifest_.stages.try_emplace(s);

    const std::set<std::string> requested(opts_.stages.begin(), opts_.stages.end());
    const bool selective = !requested.empty();
    if (!opts_.stop_after.empty()) (void)stage_dependencies(opts_.stop_after);

    for (const auto& stage : stage_names()) {
        if (selective && !requested.count(stage)) continue;
        const std::string fp = fingerprint(stage);
        auto& rec = manifest_.stages[stage];
        if (!selective && rec.fingerprint == fp && manifest_.stage_valid(stage, root_)) {
            log("[" + stage + "] up to date, skipped");
        } else {
            // Every prerequisite must be complete, checksum-valid and current.
            std::vector<std::string> unmet;
            for (const auto& dep : stage_dependencies(stage)) {
                const auto& d = manifest_.stages[dep];
                if (!manifest_.stage_valid(dep, root_)) unmet.push_back(dep + " (incomplete)");
                else if (d.fingerprint != fingerprint(dep)) unmet.push_back(dep + " (stale for the current config)");
            }
            if (!unmet.empty()) {
                std::string msg = "stage '" + stage + "' has unmet prerequisites:";
                for (const auto& u : unmet) msg += " " + u;
                throw ContractError(msg);
            }
            log("[" + stage + "] running");
            rec = StageRecord{};
            save_manifest();
            StageResult res;
            try {
                res = execute(stage);
            } catch (const std::exception& e) {
                rec.error = e.what();
                save_manifest();
                throw;
            }
            rec.complete = true;
            rec.fingerprint = fp;
            for (const auto& a : res.artifacts) rec.artifacts[a] = sha256_file(at(a));
            rec.metrics = res.metrics;
            if (stage == "evaluate") manifest_.metrics = res.metrics.value("headline", json::object());
            save_manifest();
            log("[" + stage + "] done");
        }
        if (stage == opts_.stop_after) break;
    }
    return manifest_;
}

StageResult Runner::execute(const std::string& stage) {
    if (stage == "data") return run_data();
    if (stage == "seg") return run_seg();
    if (stage == "ae") return run_ae();
    if (stage == "ddpm") return run_ddpm();
    if (stage == "cn_semantic") return run_cn(ControlKind::Semantic);
    if (stage == "cn_uncertainty") return run_cn(ControlKind::Uncertainty);
    if (stage == "gaussian_fit") return run_gaussian_fit();
    if (stage == "generate") return run_generate();
    if (stage == "retrain") return run_retrain();
    return run_evaluate();
}

StageResult Runner::run_data() {
    StageResult r;
    auto src = generate_domain(cfg_.source, cfg_.n_per_domain);
    auto tgt = generate_domain(cfg_.target, cfg_.n_per_domain);
    save_dataset(src, at("data/source"));
    save_dataset(tgt, at("data/target"));
    r.artifacts = {"data/source/manifest.json", "data/target/manifest.json"};
    r.metrics = {{"source", {{"train", src.train.size()}, {"val", src.val.size()}, {"test", src.test.size()}}},
                 {"target", {{"train", tgt.train.size()}, {"val", tgt.val.size()}, {"test", tgt.test.size()}}}};
    return r;
}

StageResult Runner::run_seg() {
    auto src = source();
    TrainConfig tc = cfg_.segmenter_train;
    tc.seed = seed("seg");
    auto trained = train_segmenter(src, tc, cfg_.segmenter);
    fs::create_directories(at("seg"));
    trained.model.save(at("seg/segmenter.pt"));
    write_training_log(at("seg/training_log.csv"), trained.log);
    const auto in_domain = evaluate_segmenter(trained.model, src);
    return {{"seg/segmenter.pt", "seg/training_log.csv"},
            {{"best_epoch", trained.best_epoch},
             {"best_val_miou", trained.best_val_miou},
             {"source_test_miou", in_domain.mean_all}}};
}

StageResult Runner::run_ae() {
    auto src = source();
    auto tgt = target();
    FitConfig fc = cfg_.autoencoder_fit;
    fc.seed = seed("ae");
    auto trained = train_autoencoder(concat(image_ptrs(src.train), image_ptrs(tgt.train)),
                                     concat(image_ptrs(src.val), image_ptrs(tgt.val)), cfg_.autoencoder, fc);
    fs::create_directories(at("ae"));
    save_autoencoder(at("ae/autoencoder.pt"), trained.model);
    write_curve(at("ae/loss.csv"), trained.loss_curve);
    return {{"ae/autoencoder.pt", "ae/loss.csv"},
            {{"heldout_mae", trained.heldout_mae}, {"latent_scale", trained.model->latent_scale.item<double>()}}};
}

StageResult Runner::run_ddpm() {
    auto src = source();
    auto tgt = target();
    auto ae = load_autoencoder(at("ae/autoencoder.pt"));
    auto latents = encode_images(ae, concat(image_ptrs(src.train), image_ptrs(tgt.train)));
    FitConfig fc = cfg_.backbone_fit;
    fc.seed = seed("ddpm");
    auto trained = train_ddpm(latents, schedule(), cfg_.backbone, fc);
    fs::create_directories(at("ddpm"));
    save_backbone(at("ddpm/backbone.pt"), trained.model);
    write_curve(at("ddpm/loss.csv"), trained.loss_curve);
    return {{"ddpm/backbone.pt", "ddpm/loss.csv"}, {{"final_loss", trained.loss_curve.back()}}};
}

StageResult Runner::run_cn(ControlKind kind) {
    const std::string stage = kind == ControlKind::Semantic ? "cn_semantic" : "cn_uncertainty";
    auto src = source();
    auto ae = load_autoencoder(at("ae/autoencoder.pt"));
    auto backbone = load_backbone(at("ddpm/backbone.pt"));
    ControlNetProvenance prov{sha256_file(at("ddpm/backbone.pt")), ""};
    ControlNetTraining trained;
    StageResult r;
    if (kind == ControlKind::Semantic) {
        FitConfig fc = cfg_.semantic_fit;
        fc.seed = seed(stage);
        auto latents = encode_images(ae, image_ptrs(src.train));
        std::vector<const LabelMap*> labels;
        for (const auto& s : src.train) labels.push_back(&*s.label_map);
        trained = train_semantic_controlnet(backbone, latents, labels, cfg_.n_classes, schedule(), fc);
    } else {
        FitConfig fc = cfg_.uncertainty_fit;
        fc.seed = seed(stage);
        auto tgt = target();
        auto seg = Segmenter::load(uncertainty_segmenter());
        prov.segmenter_sha256 = sha256_file(uncertainty_segmenter());
        auto samples = concat(sample_ptrs(src.train), sample_ptrs(tgt.train));
        auto images = concat(image_ptrs(src.train), image_ptrs(tgt.train));
        auto u = measure_uncertainty(seg, images);
        auto latents = encode_images(ae, images);
        trained = train_uncertainty_controlnet(backbone, latents, u, cfg_.height, cfg_.width, schedule(), fc);
        std::string csv = "id,domain,u_h\n";
        for (size_t k = 0; k < samples.size(); ++k)
            csv += samples[k]->id + "," + to_string(samples[k]->domain) + "," + fmt(u[k]) + "\n";
        fs::create_directories(at(stage));
        write_file_atomic(at(stage + "/train_u.csv"), csv);
        r.artifacts.push_back(stage + "/train_u.csv");
    }
    fs::create_directories(at(stage));
    save_controlnet(at(stage + "/controlnet.pt"), trained.model, prov);
    write_curve(at(stage + "/loss.csv"), trained.loss_curve);
    r.artifacts.push_back(stage + "/controlnet.pt");
    r.artifacts.push_back(stage + "/loss.csv");
    r.metrics = {{"final_loss", trained.loss_curve.back()}};
    return r;
}

StageResult Runner::run_gaussian_fit() {
    auto tgt = target();
    auto seg = Segmenter::load(uncertainty_segmenter());
    auto fit = fit_gaussian(sample_ptrs(tgt.train), seg);
    fs::create_directories(at("gaussian_fit"));
    write_uncertainty_report(at("gaussian_fit/target_u"), fit);
    return {{"gaussian_fit/target_u.json", "gaussian_fit/target_u.csv"},
            {{"mean", fit.gaussian.mean}, {"std", fit.gaussian.std}, {"n", fit.gaussian.n_fit}}};
}

GenerativeModels Runner::models() const {
    GenerativeModels m;
    m.autoencoder = load_autoencoder(at("ae/autoencoder.pt"));
    m.backbone = load_backbone(at("ddpm/backbone.pt"));
    m.semantic = load_controlnet(at("cn_semantic/controlnet.pt"));
    m.uncertainty = load_controlnet(at("cn_uncertainty/controlnet.pt"));
    m.schedule = schedule();
    return m;
}

StageResult Runner::run_generate() {
    auto src = source();
    auto m = models();
    auto seg = Segmenter::load(at("seg/segmenter.pt"));
    FusionConfig fc;
    fc.alpha = cfg_.alpha;
    fc.steps = cfg_.schedule.sample_steps;
    fc.uncertainty.mode = UncertaintySource::Mode::Gaussian;
    fc.uncertainty.gaussian = read_gaussian(at("gaussian_fit/target_u.json"));
    fc.seed = seed("generate");
    fc.multiplicity = cfg_.multiplicity;
    fc.batch_size = cfg_.generate_batch;
    auto records = generate_dataset(sample_ptrs(src.train), fc, m);
    measure_records(records, seg);
    save_generated(records, cfg_.n_classes, at("generate"));
    double mean_u = 0;
    for (const auto& r : records) mean_u += *r.measured_u;
    mean_u /= static_cast<double>(records.size());
    return {{"generate/manifest.json", "generate/generation.csv"},
            {{"count", records.size()}, {"mean_measured_u", mean_u}}};
}

StageResult Runner::run_retrain() {
    auto src = source();
    auto syn = load_dataset(at("generate"));
    TrainConfig tc = cfg_.retrain_train;
    tc.seed = seed("retrain");
    auto trained = retrain_segmenter(syn, src, cfg_.retrain_mix, tc, cfg_.segmenter);
    fs::create_directories(at("retrain"));
    trained.model.save(at("retrain/segmenter.pt"));
    write_training_log(at("retrain/training_log.csv"), trained.log);
    return {{"retrain/segmenter.pt", "retrain/training_log.csv"},
            {{"mix", to_string(cfg_.retrain_mix)},
             {"mixture_size", training_mixture(syn, src, cfg_.retrain_mix).size()},
             {"best_epoch", trained.best_epoch},
             {"best_val_miou", trained.best_val_miou}}};
}

// generation.csv rows: id,source_id,conditioned_u,measured_u,seed
std::map<std::string, std::string> generated_sources(const fs::path& csv_path) {
    std::map<std::string, std::string> out;
    std::stringstream ss(read_text_file(csv_path));
    std::string line;
    std::getline(ss, line);
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        UNIACORN_EXPECT(c1 != std::string::npos && c2 != std::string::npos, LoadError,
                        "malformed row in " + csv_path.string());
        out[line.substr(0, c1)] = line.substr(c1 + 1, c2 - c1 - 1);
    }
    return out;
}

StageResult Runner::run_evaluate() {
    const auto& ev = cfg_.evaluation;
    const std::uint64_t s = seed("evaluate");
    auto src = source();
    auto tgt = target();
    auto syn = load_dataset(at("generate"));
    auto seg0 = Segmenter::load(at("seg/segmenter.pt"));
    auto seg1 = Segmenter::load(at("retrain/segmenter.pt"));
    fs::create_directories(at("evaluate"));

    ReportBundle bundle;
    const auto t0 = evaluate_segmenter(seg0, tgt);
    const auto t1 = evaluate_segmenter(seg1, tgt);
    const auto s0 = evaluate_segmenter(seg0, src);
    const auto s1 = evaluate_segmenter(seg1, src);
    bundle.iou = {{"source_only@target", t0}, {"retrained@target", t1}, {"source_only@source", s0}, {"retrained@source", s1}};

    // Frechet: frozen source-vs-target classifier; held-out real images only.
    FitConfig clf_fit = ev.classifier;
    clf_fit.seed = derive_seed(s, "classifier");
    auto clf = train_domain_classifier(image_ptrs(src.train), image_ptrs(tgt.train), image_ptrs(src.val),
                                       image_ptrs(tgt.val), clf_fit);
    save_domain_classifier(at("evaluate/domain_classifier.pt"), clf.model);
    const std::string extractor = extractor_id(at("evaluate/domain_classifier.pt"));
    const auto src_held = concat(image_ptrs(src.val), image_ptrs(src.test));
    const auto tgt_held = concat(image_ptrs(tgt.val), image_ptrs(tgt.test));
    auto syn_imgs = image_ptrs(syn.train);
    std::vector<const Image*> syn_subset(syn_imgs.begin(),
                                         syn_imgs.begin() + std::min(syn_imgs.size(), src_held.size()));
    auto d_gen = frechet_distance(clf.model, extractor, "generated", syn_subset, "target", tgt_held);
    auto d_src = frechet_distance(clf.model, extractor, "source", src_held, "target", tgt_held);
    bundle.frechet = {d_gen, d_src};

    auto u_src = dataset_uncertainty("source", src_held, seg0);
    auto u_tgt = dataset_uncertainty("target", image_ptrs(tgt.train), seg0);
    auto u_syn = dataset_uncertainty("generated", syn_imgs, seg0);
    bundle.uncertainty = {u_src, u_tgt, u_syn};

    // Semantic retention of the generated set.
    std::vector<const LabelMap*> syn_labels;
    for (const auto& x : syn.train) syn_labels.push_back(&*x.label_map);
    const auto retention = label_agreement(seg0, syn_imgs, syn_labels, cfg_.n_classes);
    std::map<std::string, const LabelMap*> source_labels;
    for (const auto& x : src.train) source_labels[x.id] = &*x.label_map;
    const auto sources = generated_sources(at("generate/generation.csv"));
    bool labels_identical = sources.size() == syn.train.size();
    for (const auto& x : syn.train) {
        auto it = sources.find(x.id);
        if (it == sources.end() || !source_labels.count(it->second) || !(*source_labels[it->second] == *x.label_map)) {
            labels_identical = false;
            break;
        }
    }

    // Steering sweep and alpha sweep share the generative models.
    auto m = models();
    UncertaintyGaussian g_src{u_src.mean, u_src.std, u_src.n};
    const auto g_tgt = read_gaussian(at("gaussian_fit/target_u.json"));
    const auto points = steering_points(g_src, g_tgt, ev.steering_points);
    auto run_requests = [&](std::vector<GenerationRequest>& reqs, double alpha) {
        std::vector<GenerationRecord> out;
        for (size_t b = 0; b < reqs.size(); b += cfg_.generate_batch) {
            const size_t n = std::min<size_t>(cfg_.generate_batch, reqs.size() - b);
            auto part = generate_batch(std::span(reqs).subspan(b, n), alpha, cfg_.schedule.sample_steps, m);
            for (auto& r : part) out.push_back(std::move(r));
        }
        measure_records(out, seg0);
        return out;
    };
    std::vector<GenerationRequest> steer;
    for (int k = 0; k < ev.steering_points; ++k)
        for (int j = 0; j < ev.steering_seeds; ++j) {
            const auto& lbl = src.test[j % src.test.size()];
            // Seed j is shared by every point so the sweep varies u alone.
            steer.push_back({&*lbl.label_map, points[k], derive_seed(s, "steer/" + std::to_string(j)), lbl.id});
        }
    const double steer_alpha = ev.steering_alpha.value_or(cfg_.alpha);
    std::string steer_csv = "alpha,point,seed_index,source_id,conditioned_u,measured_u\n";
    json per_point = json::array();
    auto sweep = [&](double alpha, bool keep_points) {
        auto steered = run_requests(steer, alpha);
        std::vector<double> cond, meas;
        for (size_t k = 0; k < steered.size(); ++k) {
            cond.push_back(steered[k].conditioned_u.value());
            meas.push_back(*steered[k].measured_u);
            steer_csv += fmt(alpha) + "," + std::to_string(k / ev.steering_seeds) + "," +
                         std::to_string(k % ev.steering_seeds) + "," + steered[k].source_id + "," +
                         fmt(cond.back()) + "," + fmt(meas.back()) + "\n";
        }
        for (int k = 0; keep_points && k < ev.steering_points; ++k) {
            const auto b = meas.begin() + k * ev.steering_seeds;
            per_point.push_back({{"conditioned_u", points[k]},
                                 {"mean_measured_u", std::accumulate(b, b + ev.steering_seeds, 0.0) / ev.steering_seeds}});
        }
        return spearman(cond, meas);
    };
    const double rho = sweep(steer_alpha, true);
    const double rho_gen = steer_alpha == cfg_.alpha ? rho : sweep(cfg_.alpha, false);
    write_file_atomic(at("evaluate/steering.csv"), steer_csv);

    // Paired trials: one label map and seed, conditioned on the source mean
    // and on the target mean.
    std::vector<GenerationRequest> paired;
    for (int j = 0; j < ev.paired_trials; ++j) {
        const auto& lbl = src.test[j % src.test.size()];
        const auto sd = derive_seed(s, "paired/" + std::to_string(j));
        paired.push_back({&*lbl.label_map, std::clamp(g_src.mean, 0.0, 100.0), sd, lbl.id});
        paired.push_back({&*lbl.label_map, std::clamp(g_tgt.mean, 0.0, 100.0), sd, lbl.id});
    }
    int paired_wins = 0;
    if (!paired.empty()) {
        auto recs = run_requests(paired, cfg_.alpha);
        for (size_t k = 0; k + 1 < recs.size(); k += 2) paired_wins += *recs[k + 1].measured_u > *recs[k].measured_u;
    }
    const double paired_win_rate = ev.paired_trials > 0 ? static_cast<double>(paired_wins) / ev.paired_trials : 0.0;

    const double u_high = std::clamp(g_tgt.mean + 2.0 * g_tgt.std, 0.0, 100.0);
    for (double alpha : ev.alpha_sweep) {
        std::vector<GenerationRequest> reqs;
        for (int j = 0; j < ev.alpha_sweep_images; ++j) {
            const auto& lbl = src.test[j % src.test.size()];
            reqs.push_back({&*lbl.label_map, u_high, derive_seed(s, "alpha/" + std::to_string(j)), lbl.id});
        }
        auto recs = run_requests(reqs, alpha);
        std::vector<const Image*> imgs;
        std::vector<const LabelMap*> lbls;
        double mu = 0;
        for (const auto& r : recs) {
            imgs.push_back(&r.image);
            lbls.push_back(&r.label_map);
            mu += *r.measured_u;
        }
        bundle.alpha_sweep.push_back(
            {alpha, mu / recs.size(), label_agreement(seg0, imgs, lbls, cfg_.n_classes).mean_all});
    }

    auto files = emit_report(bundle, at("evaluate"));
    json headline{{"t0_target_miou", t0.mean_all},
                  {"t1_target_miou", t1.mean_all},
                  {"t0_target_miou_foreground", t0.mean_foreground},
                  {"t1_target_miou_foreground", t1.mean_foreground},
                  {"source_test_miou", s0.mean_all},
                  {"frechet_generated_target", d_gen.distance},
                  {"frechet_source_target", d_src.distance},
                  {"frechet_extractor", extractor},
                  {"classifier_heldout_accuracy", clf.heldout_accuracy},
                  {"u_mean_source", u_src.mean},
                  {"u_mean_target", u_tgt.mean},
                  {"u_std_target", u_tgt.std},
                  {"u_mean_generated", u_syn.mean},
                  {"steering_alpha", steer_alpha},
                  {"steering_spearman", rho},
                  {"steering_spearman_generation_alpha", rho_gen},
                  {"steering_points", per_point},
                  {"paired_win_rate", paired_win_rate},
                  {"semantic_retention_miou", retention.mean_all},
                  {"labels_identical", labels_identical}};
    write_file_atomic(at("evaluate/metrics.json"), headline.dump(2) + "\n");
    StageResult r;
    r.artifacts = {"evaluate/metrics.json", "evaluate/steering.csv", "evaluate/domain_classifier.pt"};
    for (const auto& f : files) {
        auto rel = fs::relative(f, root_).generic_string();
        if (std::find(r.artifacts.begin(), r.artifacts.end(), rel) == r.artifacts.end()) r.artifacts.push_back(rel);
    }
    r.metrics = {{"headline", headline}};
    return r;
}

}  // namespace

ExperimentManifest run_pipeline(const PipelineConfig& cfg_in, const RunOptions& opts) {
    PipelineConfig cfg = cfg_in;
    finalize(cfg);
    for (const auto& s : opts.stages) (void)stage_dependencies(s);
    torch::set_num_threads(cfg.threads);
    Runner runner(cfg, opts);
    return runner.run();
}

}  // namespace uniacorn
