// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/domains.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "uniacorn/image_io.hpp"

namespace uniacorn {

using nlohmann::json;

std::string to_string(Domain d) {
    switch (d) {
        case Domain::SourceLabeled: return "SOURCE_LABELED";
        case Domain::TargetUnlabeled: return "TARGET_UNLABELED";
        case Domain::SyntheticLabeled: return "SYNTHETIC_LABELED";
    }
    return "?";
}

Domain domain_from_string(const std::string& s) {
    if (s == "SOURCE_LABELED") return Domain::SourceLabeled;
    if (s == "TARGET_UNLABELED") return Domain::TargetUnlabeled;
    if (s == "SYNTHETIC_LABELED") return Domain::SyntheticLabeled;
    throw ConfigError("unknown domain tag '" + s + "'");
}

std::string to_string(DegradationKind k) {
    switch (k) {
        case DegradationKind::SpeckleNoise: return "speckle_noise";
        case DegradationKind::Blur: return "blur";
        case DegradationKind::ContrastGamma: return "contrast_gamma";
        case DegradationKind::IntensityShift: return "intensity_shift";
        case DegradationKind::VerticalWarp: return "vertical_warp";
    }
    return "?";
}

DegradationKind degradation_from_string(const std::string& s) {
    if (s == "speckle_noise") return DegradationKind::SpeckleNoise;
    if (s == "blur") return DegradationKind::Blur;
    if (s == "contrast_gamma") return DegradationKind::ContrastGamma;
    if (s == "intensity_shift") return DegradationKind::IntensityShift;
    if (s == "vertical_warp") return DegradationKind::VerticalWarp;
    throw ConfigError("unknown degradation '" + s + "'");
}

void to_json(json& j, const DomainSpec& s) {
    json degr = json::array();
    for (const auto& d : s.degradations) degr.push_back({{"kind", to_string(d.kind)}, {"strength", d.strength}});
    j = json{{"domain", to_string(s.domain)},
             {"height", s.height},
             {"width", s.width},
             {"n_classes", s.n_classes},
             {"min_thickness", s.min_thickness},
             {"max_thickness", s.max_thickness},
             {"top_min_fraction", s.top_min_fraction},
             {"top_max_fraction", s.top_max_fraction},
             {"wave_amplitude", s.wave_amplitude},
             {"wave_max_frequency", s.wave_max_frequency},
             {"texture_amplitude", s.texture_amplitude},
             {"degradations", degr},
             {"degradation_jitter", s.degradation_jitter},
             {"train_fraction", s.train_fraction},
             {"val_fraction", s.val_fraction},
             {"seed", s.seed}};
}

void from_json(const json& j, DomainSpec& s) {
    DomainSpec d;
    s.domain = domain_from_string(j.value("domain", to_string(d.domain)));
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.n_classes = j.value("n_classes", d.n_classes);
    s.min_thickness = j.value("min_thickness", d.min_thickness);
    s.max_thickness = j.value("max_thickness", d.max_thickness);
    s.top_min_fraction = j.value("top_min_fraction", d.top_min_fraction);
    s.top_max_fraction = j.value("top_max_fraction", d.top_max_fraction);
    s.wave_amplitude = j.value("wave_amplitude", d.wave_amplitude);
    s.wave_max_frequency = j.value("wave_max_frequency", d.wave_max_frequency);
    s.texture_amplitude = j.value("texture_amplitude", d.texture_amplitude);
    s.degradations.clear();
    if (j.contains("degradations")) {
        for (const auto& e : j.at("degradations")) {
            s.degradations.push_back({degradation_from_string(e.at("kind").get<std::string>()),
                                      e.at("strength").get<double>()});
        }
    }
    s.degradation_jitter = j.value("degradation_jitter", d.degradation_jitter);
    s.train_fraction = j.value("train_fraction", d.train_fraction);
    s.val_fraction = j.value("val_fraction", d.val_fraction);
    s.seed = j.value("seed", d.seed);
}

namespace {

double warp_amplitude(const DomainSpec& spec) {
    double a = 0.0;
    for (const auto& d : spec.degradations) {
        if (d.kind == DegradationKind::VerticalWarp) a += std::abs(d.strength) * (1.0 + spec.degradation_jitter);
    }
    return a;
}

}  // namespace

void validate(const DomainSpec& spec) {
    auto fail = [](const std::string& m) { throw ConfigError("invalid domain spec: " + m); };
    if (spec.height < 8 || spec.width < 8) fail("image size must be at least 8x8");
    if (spec.n_classes < 2 || spec.n_classes > 255) fail("n_classes must be in [2, 255]");
    if (spec.min_thickness < 2 || spec.max_thickness < spec.min_thickness) fail("thickness range must satisfy 2 <= min <= max");
    if (spec.max_thickness > spec.height) fail("thickness range exceeds image height");
    if (spec.top_min_fraction < 0 || spec.top_max_fraction < spec.top_min_fraction || spec.top_max_fraction >= 1)
        fail("top boundary fractions must satisfy 0 <= min <= max < 1");
    if (spec.wave_amplitude < 0 || spec.wave_max_frequency < 0) fail("waviness parameters must be non-negative");
    if (spec.degradation_jitter < 0 || spec.degradation_jitter >= 1) fail("degradation_jitter must be in [0, 1)");
    if (spec.train_fraction <= 0 || spec.val_fraction < 0 || spec.train_fraction + spec.val_fraction >= 1)
        fail("split fractions must leave a non-empty test split");
    // Worst-case stack: top offset, every band at max thickness plus its
    // perturbation, the shared wave and any warp, with one background row below.
    const int bands = spec.n_classes - 1;
    const double worst = spec.top_max_fraction * spec.height + spec.wave_amplitude +
                         bands * (spec.max_thickness + 0.25 * spec.wave_amplitude) + warp_amplitude(spec) + 1.0;
    if (worst > spec.height) fail("thickness range exceeds image height for the requested number of bands");
    if (spec.top_min_fraction * spec.height - spec.wave_amplitude - warp_amplitude(spec) < 1.0)
        fail("top background band may vanish; raise top_min_fraction or lower the wave amplitude");
    const bool has_degradations = !spec.degradations.empty();
    if (spec.domain == Domain::SourceLabeled && has_degradations) fail("source domain must not carry degradations");
    if (spec.domain == Domain::TargetUnlabeled && !has_degradations) fail("target domain requires degradations");
    if (spec.domain == Domain::SyntheticLabeled) fail("synthetic datasets are not procedurally generated");
    for (const auto& d : spec.degradations) {
        if (d.kind == DegradationKind::Blur && d.strength < 0) fail("blur sigma must be non-negative");
        if (d.kind == DegradationKind::SpeckleNoise && d.strength < 0) fail("speckle strength must be non-negative");
        if (d.kind == DegradationKind::ContrastGamma && d.strength <= 0) fail("gamma must be positive");
    }
}

void validate_pair(const DomainSpec& source, const DomainSpec& target) {
    validate(source);
    validate(target);
    DomainSpec a = source, b = target;
    a.degradations.clear();
    b.degradations.clear();
    a.domain = b.domain = Domain::SourceLabeled;
    a.seed = b.seed = 0;
    a.degradation_jitter = b.degradation_jitter = 0;
    if (!(a == b)) throw ConfigError("paired domain specs must share geometry parameters");
}

DomainSpec default_source_spec(std::uint64_t seed) {
    DomainSpec s;
    s.seed = seed;
    return s;
}

DomainSpec default_target_spec(std::uint64_t seed) {
    DomainSpec s;
    s.domain = Domain::TargetUnlabeled;
    s.seed = seed;
    s.degradations = {{DegradationKind::ContrastGamma, 0.6},
                      {DegradationKind::IntensityShift, 0.10},
                      {DegradationKind::Blur, 0.8},
                      {DegradationKind::SpeckleNoise, 0.35}};
    return s;
}

std::string sample_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double band_intensity(int k) {
    if (k == 0) return 0.06;
    const double frac = std::fmod(0.618034 * k + 0.3, 1.0);
    return 0.25 + 0.65 * frac;
}

void gaussian_blur(Image& img, double sigma) {
    if (sigma <= 1e-6) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0;
    for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (auto& v : kernel) v /= total;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    Image tmp(img.height, img.width);
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(i, reflect(j + k, img.width));
            tmp.at(i, j) = static_cast<float>(acc);
        }
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(i + k, img.height), j);
            img.at(i, j) = static_cast<float>(acc);
        }
}

template <typename T>
void shift_columns(Grid<T>& g, const std::vector<int>& shift) {
    Grid<T> out(g.height, g.width);
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j) out.at(i, j) = g.at(std::clamp(i - shift[j], 0, g.height - 1), j);
    g = std::move(out);
}

}  // namespace

Sample render_sample(const DomainSpec& spec, int index) {
    const int H = spec.height, W = spec.width, L = spec.n_classes;
    Sample s;
    s.id = sample_id(index);
    s.domain = spec.domain;

    std::mt19937_64 geo(derive_seed(spec.seed, s.id + "/geometry"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(geo); };

    const double top = uniform(spec.top_min_fraction, spec.top_max_fraction) * H;
    std::vector<double> thickness(L);
    for (int k = 1; k < L; ++k) thickness[k] = uniform(spec.min_thickness, spec.max_thickness);
    const double amp = spec.wave_amplitude * uniform(0.3, 1.0);
    const double freq = uniform(0.3, std::max(0.3, spec.wave_max_frequency));
    const double phase = uniform(0.0, kTwoPi);
    std::vector<double> p_amp(L), p_freq(L), p_phase(L);
    for (int k = 1; k < L; ++k) {
        p_amp[k] = 0.25 * spec.wave_amplitude * unit(geo);
        p_freq[k] = uniform(0.5, spec.wave_max_frequency + 1.0);
        p_phase[k] = uniform(0.0, kTwoPi);
    }
    std::vector<double> level(L);
    for (int k = 0; k < L; ++k) level[k] = band_intensity(k) + uniform(-0.03, 0.03);
    const double tex_freq = uniform(1.0, 3.0);
    const double tex_phase = uniform(0.0, kTwoPi);

    LabelMap labels(H, W);
    Image img(H, W);
    std::vector<double> boundary(L);
    for (int j = 0; j < W; ++j) {
        const double x = static_cast<double>(j) / W;
        boundary[0] = top + amp * std::sin(kTwoPi * freq * x + phase);
        for (int k = 1; k < L; ++k) {
            const double t = thickness[k] + p_amp[k] * std::sin(kTwoPi * p_freq[k] * x + p_phase[k]);
            boundary[k] = boundary[k - 1] + std::max(1.5, t);
        }
        const double texture = spec.texture_amplitude * std::sin(kTwoPi * tex_freq * x + tex_phase);
        for (int i = 0; i < H; ++i) {
            const double y = i + 0.5;
            int cls = 0;
            if (y >= boundary[0]) {
                for (int k = 1; k < L; ++k) {
                    if (y < boundary[k]) {
                        cls = k;
                        break;
                    }
                }
            }
            labels.at(i, j) = static_cast<std::uint8_t>(cls);
            img.at(i, j) = static_cast<float>(level[cls] + (cls == 0 ? 0.0 : texture));
        }
    }

    std::mt19937_64 app(derive_seed(spec.seed, s.id + "/appearance"));
    std::uniform_real_distribution<double> jitter(1.0 - spec.degradation_jitter, 1.0 + spec.degradation_jitter);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& d : spec.degradations) {
        const double f = jitter(app);
        switch (d.kind) {
            case DegradationKind::SpeckleNoise: {
                const double sigma = d.strength * f;
                for (auto& v : img.data) v = static_cast<float>(v * (1.0 + sigma * normal(app)));
                break;
            }
            case DegradationKind::Blur: gaussian_blur(img, d.strength * f); break;
            case DegradationKind::ContrastGamma: {
                const double gamma = 1.0 + (d.strength - 1.0) * f;
                for (auto& v : img.data) v = static_cast<float>(std::pow(std::clamp<double>(v, 0.0, 1.0), gamma));
                break;
            }
            case DegradationKind::IntensityShift: {
                const double delta = d.strength * f;
                for (auto& v : img.data) v = static_cast<float>(v + delta);
                break;
            }
            case DegradationKind::VerticalWarp: {
                const double a = d.strength * f;
                const double wf = 0.5 + unit(app);
                const double wp = kTwoPi * unit(app);
                std::vector<int> shift(W);
                for (int j = 0; j < W; ++j)
                    shift[j] = static_cast<int>(std::lround(a * std::sin(kTwoPi * wf * j / W + wp)));
                shift_columns(img, shift);
                shift_columns(labels, shift);
                break;
            }
        }
    }
    for (auto& v : img.data) v = from_byte(to_byte(v));
    s.image = std::move(img);
    s.label_map = std::move(labels);
    return s;
}

DatasetSplit generate_domain(const DomainSpec& spec, int n) {
    validate(spec);
    UNIACORN_EXPECT(n >= 3, ContractError, "generate_domain needs n >= 3");

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(spec.seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);
    int n_train = std::max(1, static_cast<int>(std::lround(n * spec.train_fraction)));
    int n_val = std::max(1, static_cast<int>(std::lround(n * spec.val_fraction)));
    while (n_train + n_val > n - 1) (n_train > n_val ? n_train : n_val)--;

    DatasetSplit out;
    out.spec = spec;
    out.n_classes = spec.n_classes;
    for (int r = 0; r < n; ++r) {
        const int index = order[r];
        Sample s = render_sample(spec, index);
        auto& bucket = r < n_train ? out.train : (r < n_train + n_val ? out.val : out.test);
        if (spec.domain == Domain::TargetUnlabeled && &bucket != &out.test) s.label_map.reset();
        bucket.push_back(std::move(s));
    }
    auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
    std::sort(out.train.begin(), out.train.end(), by_id);
    std::sort(out.val.begin(), out.val.end(), by_id);
    std::sort(out.test.begin(), out.test.end(), by_id);
    validate_dataset(out);
    return out;
}

std::vector<const Sample*> all_samples(const DatasetSplit& split) {
    std::vector<const Sample*> out;
    out.reserve(split.size());
    for (const auto* part : {&split.train, &split.val, &split.test})
        for (const auto& s : *part) out.push_back(&s);
    return out;
}

void validate_dataset(const DatasetSplit& split) {
    const int L = split.n_classes;
    if (L < 2) throw ValidationError("dataset n_classes must be >= 2");
    std::set<std::string> ids;
    std::vector<bool> seen(L, false);
    bool any_label = false;
    auto check_part = [&](const std::vector<Sample>& part, bool held_out) {
        for (const auto& s : part) {
            if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id " + s.id);
            for (float v : s.image.data)
                if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image value outside [0,1] in sample " + s.id);
            if (s.domain != Domain::TargetUnlabeled && !s.label_map)
                throw ValidationError("labeled-domain sample " + s.id + " has no label map");
            if (s.domain == Domain::TargetUnlabeled && s.label_map && !held_out)
                throw ValidationError("target-domain sample " + s.id + " carries labels outside the test split");
            if (s.label_map) {
                any_label = true;
                if (!s.label_map->same_shape(s.image))
                    throw ValidationError("label map shape differs from image in sample " + s.id);
                for (auto v : s.label_map->data) {
                    if (v >= L) throw ValidationError("label value " + std::to_string(v) + " >= " + std::to_string(L) +
                                                      " in sample " + s.id);
                    seen[v] = true;
                }
            }
        }
    };
    check_part(split.train, false);
    check_part(split.val, false);
    check_part(split.test, true);
    if (split.spec && any_label) {
        for (int c = 0; c < L; ++c)
            if (!seen[c]) throw ValidationError("class " + std::to_string(c) + " never occurs in generated dataset");
    }
}

fs::path save_dataset(const DatasetSplit& split, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (!ec) fs::create_directories(dir / "labels", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    json samples = json::array();
    auto emit = [&](const std::vector<Sample>& part, const char* name) {
        for (const auto& s : part) {
            const auto img_rel = fs::path("images") / (s.id + ".png");
            write_png_gray(dir / img_rel, quantize(s.image));
            json e{{"id", s.id},
                   {"split", name},
                   {"domain", to_string(s.domain)},
                   {"image", img_rel.string()},
                   {"image_sha256", sha256_file(dir / img_rel)}};
            if (s.label_map) {
                const auto lbl_rel = fs::path("labels") / (s.id + ".png");
                write_png_indexed(dir / lbl_rel, *s.label_map, split.n_classes);
                e["label"] = lbl_rel.string();
                e["label_sha256"] = sha256_file(dir / lbl_rel);
            }
            samples.push_back(std::move(e));
        }
    };
    emit(split.train, "train");
    emit(split.val, "val");
    emit(split.test, "test");

    json manifest{{"format", "uniacorn-dataset/1"},
                  {"n_classes", split.n_classes},
                  {"spec", split.spec ? json(*split.spec) : json(nullptr)},
                  {"samples", samples}};
    const auto path = dir / "manifest.json";
    write_file_atomic(path, manifest.dump(1));
    return path;
}

DatasetSplit load_dataset(const fs::path& dir) {
    const auto mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw LoadError("dataset manifest missing: " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(read_text_file(mpath));
    } catch (const json::exception& e) {
        throw LoadError("corrupt dataset manifest " + mpath.string() + ": " + e.what());
    }
    DatasetSplit out;
    out.n_classes = manifest.at("n_classes").get<int>();
    if (!manifest.at("spec").is_null()) out.spec = manifest.at("spec").get<DomainSpec>();

    for (const auto& e : manifest.at("samples")) {
        Sample s;
        s.id = e.at("id").get<std::string>();
        s.domain = domain_from_string(e.at("domain").get<std::string>());
        auto load_file = [&](const std::string& key) {
            const auto path = dir / e.at(key).get<std::string>();
            if (!fs::exists(path)) throw LoadError("sample " + s.id + ": missing file " + path.string());
            if (sha256_file(path) != e.at(key + "_sha256").get<std::string>())
                throw LoadError("sample " + s.id + ": checksum mismatch for " + path.string());
            try {
                return read_png(path);
            } catch (const Error& err) {
                throw LoadError("sample " + s.id + ": " + err.what());
            }
        };
        RawImage img = load_file("image");
        if (img.channels != 1 || img.indexed) throw LoadError("sample " + s.id + ": image is not 8-bit grayscale");
        Grid<std::uint8_t> bytes(img.height, img.width);
        bytes.data = std::move(img.pixels);
        s.image = dequantize(bytes);
        if (e.contains("label")) {
            RawImage lbl = load_file("label");
            if (lbl.channels != 1) throw LoadError("sample " + s.id + ": label map is not single-channel");
            LabelMap lm(lbl.height, lbl.width);
            lm.data = std::move(lbl.pixels);
            for (auto v : lm.data)
                if (v >= out.n_classes)
                    throw ValidationError("sample " + s.id + ": label value " + std::to_string(v) +
                                          " >= n_classes " + std::to_string(out.n_classes));
            s.label_map = std::move(lm);
        }
        const auto split_name = e.at("split").get<std::string>();
        if (split_name == "train") out.train.push_back(std::move(s));
        else if (split_name == "val") out.val.push_back(std::move(s));
        else if (split_name == "test") out.test.push_back(std::move(s));
        else throw LoadError("sample " + e.at("id").get<std::string>() + ": unknown split '" + split_name + "'");
    }
    validate_dataset(out);
    return out;
}

}  // namespace uniacorn
