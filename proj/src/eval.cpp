// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "uniacorn/plot.hpp"
#include "uniacorn/uncertainty.hpp"

namespace uniacorn {

// -----------------------------------------------------------------------------
// Jaccard
// -----------------------------------------------------------------------------

std::vector<double> jaccard(const LabelMap& pred, const LabelMap& truth, int n_classes) {
    UNIACORN_EXPECT(pred.same_shape(truth), ContractError, "jaccard: prediction and truth shapes differ");
    UNIACORN_EXPECT(n_classes >= 1, ContractError, "jaccard: n_classes must be >= 1");
    std::vector<std::int64_t> inter(n_classes, 0), uni(n_classes, 0);
    for (size_t k = 0; k < pred.size(); ++k) {
        const int p = pred.data[k], g = truth.data[k];
        UNIACORN_EXPECT(p < n_classes && g < n_classes, ContractError, "jaccard: label out of range");
        if (p == g) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[g];
        }
    }
    std::vector<double> out(n_classes);
    for (int c = 0; c < n_classes; ++c) out[c] = uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / uni[c];
    return out;
}

IoUCounts::IoUCounts(int n_classes) : intersection_(n_classes, 0), union_(n_classes, 0) {
    UNIACORN_EXPECT(n_classes >= 1, ContractError, "IoUCounts: n_classes must be >= 1");
}

void IoUCounts::add(const LabelMap& pred, const LabelMap& truth) {
    UNIACORN_EXPECT(pred.same_shape(truth), ContractError, "IoU: prediction and truth shapes differ");
    const int L = n_classes();
    for (size_t k = 0; k < pred.size(); ++k) {
        const int p = pred.data[k], g = truth.data[k];
        UNIACORN_EXPECT(p < L && g < L, ContractError, "IoU: label out of range");
        if (p == g) {
            ++intersection_[p];
            ++union_[p];
        } else {
            ++union_[p];
            ++union_[g];
        }
    }
}

IoUReport IoUCounts::report() const {
    IoUReport r;
    const int L = n_classes();
    r.per_label.resize(L);
    for (int c = 0; c < L; ++c)
        r.per_label[c] = union_[c] == 0 ? 1.0 : static_cast<double>(intersection_[c]) / union_[c];
    r.mean_all = std::accumulate(r.per_label.begin(), r.per_label.end(), 0.0) / L;
    r.mean_foreground =
        L > 1 ? std::accumulate(r.per_label.begin() + 1, r.per_label.end(), 0.0) / (L - 1) : r.per_label[0];
    return r;
}

IoUReport evaluate_segmenter(Segmenter& seg, std::span<const Sample* const> test) {
    UNIACORN_EXPECT(!test.empty(), ContractError, "evaluate_segmenter: empty test set");
    std::vector<const Image*> images;
    std::vector<const LabelMap*> labels;
    for (const auto* s : test) {
        UNIACORN_EXPECT(s->label_map.has_value(), ContractError, "evaluate_segmenter: sample " + s->id + " is unlabeled");
        images.push_back(&s->image);
        labels.push_back(&*s->label_map);
    }
    return label_agreement(seg, images, labels, seg.config().n_classes);
}

IoUReport evaluate_segmenter(Segmenter& seg, const DatasetSplit& data) {
    std::vector<const Sample*> test;
    for (const auto& s : data.test) test.push_back(&s);
    return evaluate_segmenter(seg, test);
}

IoUReport label_agreement(Segmenter& seg, std::span<const Image* const> images, std::span<const LabelMap* const> labels,
                          int n_classes) {
    UNIACORN_EXPECT(images.size() == labels.size(), ContractError, "label_agreement: images and labels differ in count");
    auto pred = predict_labels(seg, images);
    IoUCounts counts(n_classes);
    for (size_t k = 0; k < pred.size(); ++k) counts.add(pred[k], *labels[k]);
    return counts.report();
}

nlohmann::json to_json(const IoUReport& r) {
    return {{"per_label", r.per_label}, {"mean_all", r.mean_all}, {"mean_foreground", r.mean_foreground}};
}

// -----------------------------------------------------------------------------
// Frechet distance
// -----------------------------------------------------------------------------

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_eigen(const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous().cpu();
    UNIACORN_EXPECT(c.dim() == 2, ContractError, "expected a 2-D tensor");
    MatrixXd m(c.size(0), c.size(1));
    auto acc = c.accessor<double, 2>();
    for (int64_t i = 0; i < c.size(0); ++i)
        for (int64_t j = 0; j < c.size(1); ++j) m(i, j) = acc[i][j];
    return m;
}

// Symmetric PSD square root with negative eigenvalues clamped to zero.
MatrixXd sqrt_psd(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
    VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_eigen(const VectorXd& mu_a, const MatrixXd& s_a, const VectorXd& mu_b, const MatrixXd& s_b) {
    UNIACORN_EXPECT(mu_a.size() == mu_b.size() && s_a.rows() == mu_a.size() && s_b.rows() == mu_b.size(),
                    ContractError, "frechet: dimension mismatch");
    // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), whose argument is symmetric PSD.
    const MatrixXd ra = sqrt_psd(s_a);
    const MatrixXd inner = ra * s_b * ra;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (mu_a - mu_b).squaredNorm() + s_a.trace() + s_b.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

void moments(const MatrixXd& x, double jitter, VectorXd& mu, MatrixXd& cov) {
    UNIACORN_EXPECT(x.rows() >= 2, ContractError, "frechet: each dataset needs at least 2 samples");
    mu = x.colwise().mean();
    const MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    cov.diagonal().array() += jitter;
}

}  // namespace

double frechet_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double jitter) {
    VectorXd mu_a, mu_b;
    MatrixXd s_a, s_b;
    moments(to_eigen(features_a), jitter, mu_a, s_a);
    moments(to_eigen(features_b), jitter, mu_b, s_b);
    return frechet_eigen(mu_a, s_a, mu_b, s_b);
}

double frechet_from_moments(const torch::Tensor& mean_a, const torch::Tensor& cov_a, const torch::Tensor& mean_b,
                            const torch::Tensor& cov_b) {
    const VectorXd mu_a = to_eigen(mean_a.reshape({-1, 1})).col(0);
    const VectorXd mu_b = to_eigen(mean_b.reshape({-1, 1})).col(0);
    return frechet_eigen(mu_a, to_eigen(cov_a), mu_b, to_eigen(cov_b));
}

DomainClassifierImpl::DomainClassifierImpl(int height, int width, int feature_dim)
    : height(height), width(width), feature_dim(feature_dim) {
    auto conv = [](int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)); };
    body = register_module("body", nn::Sequential(conv(1, 16), nn::SiLU(), conv(16, 32), nn::SiLU(),
                                                  conv(32, feature_dim), nn::SiLU(),
                                                  nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)),
                                                  nn::Flatten()));
    head = register_module("head", nn::Linear(feature_dim, 2));
}

torch::Tensor DomainClassifierImpl::features(const torch::Tensor& x) { return body->forward(x * 2.0 - 1.0); }

torch::Tensor DomainClassifierImpl::forward(const torch::Tensor& x) { return head->forward(features(x)); }

DomainClassifierTraining train_domain_classifier(std::span<const Image* const> source,
                                                 std::span<const Image* const> target,
                                                 std::span<const Image* const> heldout_source,
                                                 std::span<const Image* const> heldout_target, const FitConfig& cfg) {
    validate(cfg);
    UNIACORN_EXPECT(!source.empty() && !target.empty(), ContractError, "domain classifier needs both domains");
    torch::manual_seed(derive_seed(cfg.seed, "domain-classifier/init"));
    DomainClassifierTraining out;
    out.model = DomainClassifier(source.front()->height, source.front()->width);
    auto& clf = out.model;

    std::vector<std::pair<const Image*, int64_t>> items;
    for (const auto* im : source) items.emplace_back(im, 0);
    for (const auto* im : target) items.emplace_back(im, 1);
    torch::optim::Adam opt(clf->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    std::mt19937_64 rng(derive_seed(cfg.seed, "domain-classifier/shuffle"));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        clf->train();
        std::shuffle(items.begin(), items.end(), rng);
        for (size_t b = 0; b < items.size(); b += cfg.batch_size) {
            std::vector<const Image*> batch;
            std::vector<int64_t> y;
            for (size_t k = b; k < std::min(items.size(), b + cfg.batch_size); ++k) {
                batch.push_back(items[k].first);
                y.push_back(items[k].second);
            }
            auto loss = torch::nn::functional::cross_entropy(clf->forward(images_to_tensor(batch)),
                                                             torch::tensor(y, torch::kInt64));
            check_finite(loss, "domain classifier epoch " + std::to_string(epoch));
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
    clf->eval();
    if (!heldout_source.empty() && !heldout_target.empty()) {
        const double src_wrong = target_fraction(clf, heldout_source);
        const double tgt_right = target_fraction(clf, heldout_target);
        const double ns = static_cast<double>(heldout_source.size()), nt = static_cast<double>(heldout_target.size());
        out.heldout_accuracy = ((1.0 - src_wrong) * ns + tgt_right * nt) / (ns + nt);
    }
    return out;
}

namespace {

template <typename F>
void for_batches(std::span<const Image* const> images, int batch_size, F&& f) {
    for (size_t b = 0; b < images.size(); b += batch_size) {
        const size_t n = std::min<size_t>(batch_size, images.size() - b);
        f(images_to_tensor(images.subspan(b, n)));
    }
}

}  // namespace

double target_fraction(DomainClassifier& clf, std::span<const Image* const> images) {
    UNIACORN_EXPECT(!images.empty(), ContractError, "target_fraction: no images");
    torch::NoGradGuard no_grad;
    clf->eval();
    int64_t hits = 0;
    for_batches(images, 128, [&](const torch::Tensor& x) {
        hits += clf->forward(x).argmax(1).eq(1).sum().item<int64_t>();
    });
    return static_cast<double>(hits) / static_cast<double>(images.size());
}

torch::Tensor extract_features(DomainClassifier& clf, std::span<const Image* const> images) {
    UNIACORN_EXPECT(!images.empty(), ContractError, "extract_features: no images");
    torch::NoGradGuard no_grad;
    clf->eval();
    std::vector<torch::Tensor> parts;
    for_batches(images, 128, [&](const torch::Tensor& x) { parts.push_back(clf->features(x).to(torch::kFloat64)); });
    return torch::cat(parts, 0);
}

void save_domain_classifier(const fs::path& path, DomainClassifier& clf) {
    save_checkpoint(path, *clf,
                    {{"kind", "domain-classifier"},
                     {"version", 1},
                     {"height", clf->height},
                     {"width", clf->width},
                     {"feature_dim", clf->feature_dim}});
}

DomainClassifier load_domain_classifier(const fs::path& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "domain-classifier")
        throw LoadError(path.string() + " is not a domain classifier checkpoint");
    DomainClassifier clf(meta.at("height").get<int>(), meta.at("width").get<int>(), meta.at("feature_dim").get<int>());
    load_checkpoint_weights(path, *clf);
    clf->eval();
    return clf;
}

std::string extractor_id(const fs::path& checkpoint) {
    return "domain-classifier/v1/" + sha256_file(checkpoint).substr(0, 12);
}

FrechetReport frechet_distance(DomainClassifier& clf, const std::string& extractor, const std::string& name_a,
                               std::span<const Image* const> a, const std::string& name_b,
                               std::span<const Image* const> b) {
    UNIACORN_EXPECT(a.size() >= 2 && b.size() >= 2, ContractError,
                    "frechet_distance: both datasets need at least 2 images");
    FrechetReport r;
    r.extractor = extractor;
    r.dataset_a = name_a;
    r.dataset_b = name_b;
    r.distance = frechet_distance(extract_features(clf, a), extract_features(clf, b));
    return r;
}

// -----------------------------------------------------------------------------
// Uncertainty summaries
// -----------------------------------------------------------------------------

UncertaintySummary summarize_uncertainty(const std::string& dataset, std::vector<double> values) {
    UNIACORN_EXPECT(!values.empty(), ContractError, "dataset_uncertainty: empty dataset " + dataset);
    UncertaintySummary s;
    s.dataset = dataset;
    s.n = static_cast<int>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
    if (s.n > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / (s.n - 1));
    }
    s.degenerate = s.n < 2 || s.std == 0.0;
    s.histogram.assign(50, 0);
    for (double v : values) ++s.histogram[std::clamp(static_cast<int>(v / 2.0), 0, 49)];
    s.values = std::move(values);
    return s;
}

UncertaintySummary dataset_uncertainty(const std::string& dataset, std::span<const Image* const> images,
                                       Segmenter& seg) {
    UNIACORN_EXPECT(!images.empty(), ContractError, "dataset_uncertainty: empty dataset " + dataset);
    return summarize_uncertainty(dataset, measure_uncertainty(seg, images));
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (size_t i = 0; i < idx.size();) {
        size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    UNIACORN_EXPECT(x.size() == y.size() && x.size() >= 2, ContractError, "spearman: need two equal-length series");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(rx.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t k = 0; k < rx.size(); ++k) {
        sxy += (rx[k] - mx) * (ry[k] - my);
        sxx += (rx[k] - mx) * (rx[k] - mx);
        syy += (ry[k] - my) * (ry[k] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// -----------------------------------------------------------------------------
// Reports
// -----------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

fs::path write_table(const fs::path& path, const std::string& contents) {
    try {
        write_file_atomic(path, contents);
    } catch (const std::exception& e) {
        throw IoError("cannot write report " + path.string() + ": " + e.what());
    }
    return path;
}

}  // namespace

std::vector<fs::path> emit_report(const ReportBundle& reports, const fs::path& dir) {
    std::vector<fs::path> written;
    if (reports.empty()) return written;
    std::error_code ec;
    fs::create_directories(dir, ec);
    UNIACORN_EXPECT(!ec, IoError, "cannot create report directory " + dir.string() + ": " + ec.message());

    nlohmann::json summary = nlohmann::json::object();
    if (!reports.iou.empty()) {
        size_t L = 0;
        for (const auto& [_, r] : reports.iou) L = std::max(L, r.per_label.size());
        std::string csv = "label";
        for (const auto& [name, _] : reports.iou) csv += "," + name;
        csv += "\n";
        for (size_t c = 0; c < L; ++c) {
            csv += std::to_string(c);
            for (const auto& [_, r] : reports.iou) csv += "," + (c < r.per_label.size() ? fmt(r.per_label[c]) : "");
            csv += "\n";
        }
        csv += "mean_all";
        for (const auto& [_, r] : reports.iou) csv += "," + fmt(r.mean_all);
        csv += "\nmean_foreground";
        for (const auto& [_, r] : reports.iou) csv += "," + fmt(r.mean_foreground);
        csv += "\n";
        written.push_back(write_table(dir / "iou.csv", csv));

        std::vector<std::vector<double>> groups;
        for (const auto& [name, r] : reports.iou) {
            summary["iou"][name] = to_json(r);
            groups.push_back(r.per_label);
        }
        plot::bars(dir / "iou.png", groups);
        written.push_back(dir / "iou.png");
    }
    if (!reports.frechet.empty()) {
        std::string csv = "dataset_a,dataset_b,extractor,distance\n";
        for (const auto& f : reports.frechet) {
            csv += f.dataset_a + "," + f.dataset_b + "," + f.extractor + "," + fmt(f.distance) + "\n";
            summary["frechet"].push_back(
                {{"dataset_a", f.dataset_a}, {"dataset_b", f.dataset_b}, {"extractor", f.extractor}, {"distance", f.distance}});
        }
        written.push_back(write_table(dir / "frechet.csv", csv));
    }
    if (!reports.uncertainty.empty()) {
        std::string csv = "dataset,n,mean,std,degenerate\n";
        std::vector<plot::HistogramSeries> hist;
        for (const auto& u : reports.uncertainty) {
            csv += u.dataset + "," + std::to_string(u.n) + "," + fmt(u.mean) + "," + fmt(u.std) + "," +
                   (u.degenerate ? "1" : "0") + "\n";
            summary["uncertainty"][u.dataset] = {
                {"n", u.n}, {"mean", u.mean}, {"std", u.std}, {"degenerate", u.degenerate}, {"histogram", u.histogram}};
            hist.push_back({u.values, u.mean, u.degenerate ? 0.0 : u.std});
        }
        written.push_back(write_table(dir / "uncertainty.csv", csv));
        double hi = 0;
        for (const auto& u : reports.uncertainty)
            for (double v : u.values) hi = std::max(hi, v);
        hi = std::min(100.0, std::max(5.0, std::ceil(hi * 1.2 / 5.0) * 5.0));
        plot::histograms(dir / "uncertainty_hist.png", hist, 0.0, hi);
        written.push_back(dir / "uncertainty_hist.png");
    }
    if (!reports.alpha_sweep.empty()) {
        std::string csv = "alpha,mean_measured_u,semantic_miou\n";
        plot::LineSeries measured, miou;
        for (const auto& p : reports.alpha_sweep) {
            csv += fmt(p.alpha) + "," + fmt(p.mean_measured_u) + "," + fmt(p.semantic_miou) + "\n";
            summary["alpha_sweep"].push_back(
                {{"alpha", p.alpha}, {"mean_measured_u", p.mean_measured_u}, {"semantic_miou", p.semantic_miou}});
            measured.x.push_back(p.alpha);
            measured.y.push_back(p.mean_measured_u);
            miou.x.push_back(p.alpha);
            miou.y.push_back(p.semantic_miou * 100.0);
        }
        written.push_back(write_table(dir / "alpha_sweep.csv", csv));
        plot::lines(dir / "alpha_sweep.png", {measured, miou});
        written.push_back(dir / "alpha_sweep.png");
    }
    written.push_back(write_table(dir / "summary.json", summary.dump(2) + "\n"));
    return written;
}

}  // namespace uniacorn
