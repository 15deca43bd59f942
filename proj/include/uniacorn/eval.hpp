// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uniacorn/diffusion.hpp"
#include "uniacorn/segmentation.hpp"

namespace uniacorn {

// -----------------------------------------------------------------------------
// Jaccard / IoU
// -----------------------------------------------------------------------------

struct IoUReport {
    std::vector<double> per_label;
    double mean_all = 0.0;
    double mean_foreground = 0.0;  // excludes label 0 (background)
};

/// Per-image Jaccard per class. A class absent from both maps scores 1.
std::vector<double> jaccard(const LabelMap& pred, const LabelMap& truth, int n_classes);

/// Micro-aggregated intersections and unions over many images.
class IoUCounts {
public:
    explicit IoUCounts(int n_classes);
    void add(const LabelMap& pred, const LabelMap& truth);
    IoUReport report() const;
    int n_classes() const { return static_cast<int>(intersection_.size()); }

private:
    std::vector<std::int64_t> intersection_;
    std::vector<std::int64_t> union_;
};

IoUReport evaluate_segmenter(Segmenter& seg, std::span<const Sample* const> test);
IoUReport evaluate_segmenter(Segmenter& seg, const DatasetSplit& data);  // uses data.test
/// IoU of the segmenter's argmax against the stored labels of arbitrary labeled samples.
IoUReport label_agreement(Segmenter& seg, std::span<const Image* const> images,
                          std::span<const LabelMap* const> labels, int n_classes);

// -----------------------------------------------------------------------------
// Frechet feature distance
// -----------------------------------------------------------------------------

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) for Gaussians fit to
/// the rows of two [N, D] feature matrices. `jitter` is added to both
/// covariance diagonals before the matrix square root.
double frechet_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double jitter = 1e-6);
double frechet_from_moments(const torch::Tensor& mean_a, const torch::Tensor& cov_a, const torch::Tensor& mean_b,
                            const torch::Tensor& cov_b);

/// Small source-vs-target CNN whose pooled penultimate activations serve as
/// the frozen feature extractor for the Frechet metric.
struct DomainClassifierImpl : nn::Module {
    DomainClassifierImpl(int height, int width, int feature_dim = 32);
    torch::Tensor features(const torch::Tensor& x);  // [B, feature_dim]
    torch::Tensor forward(const torch::Tensor& x);   // [B, 2] logits (0 = source, 1 = target)

    int height, width, feature_dim;
    nn::Sequential body{nullptr};
    nn::Linear head{nullptr};
};
TORCH_MODULE(DomainClassifier);

struct DomainClassifierTraining {
    DomainClassifier model{nullptr};
    double heldout_accuracy = 0.0;
};

DomainClassifierTraining train_domain_classifier(std::span<const Image* const> source,
                                                 std::span<const Image* const> target,
                                                 std::span<const Image* const> heldout_source,
                                                 std::span<const Image* const> heldout_target, const FitConfig& cfg);
/// Fraction of images the classifier assigns to the target domain.
double target_fraction(DomainClassifier& clf, std::span<const Image* const> images);
torch::Tensor extract_features(DomainClassifier& clf, std::span<const Image* const> images);

void save_domain_classifier(const fs::path& path, DomainClassifier& clf);
DomainClassifier load_domain_classifier(const fs::path& path);
/// Versioned id of a saved extractor: "domain-classifier/v1/<sha256 prefix>".
std::string extractor_id(const fs::path& checkpoint);

struct FrechetReport {
    std::string extractor;
    double distance = 0.0;
    std::string dataset_a;
    std::string dataset_b;
};

FrechetReport frechet_distance(DomainClassifier& clf, const std::string& extractor, const std::string& name_a,
                               std::span<const Image* const> a, const std::string& name_b,
                               std::span<const Image* const> b);

// -----------------------------------------------------------------------------
// Uncertainty summaries and rank statistics
// -----------------------------------------------------------------------------

struct UncertaintySummary {
    std::string dataset;
    double mean = 0.0;
    double std = 0.0;  // sample (n-1) standard deviation; 0 for one image
    int n = 0;
    bool degenerate = false;
    std::vector<double> values;
    std::vector<int> histogram;  // 50 bins over [0, 100]
};

UncertaintySummary summarize_uncertainty(const std::string& dataset, std::vector<double> values);
UncertaintySummary dataset_uncertainty(const std::string& dataset, std::span<const Image* const> images,
                                       Segmenter& seg);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

// -----------------------------------------------------------------------------
// Reports
// -----------------------------------------------------------------------------

struct AlphaSweepPoint {
    double alpha = 0.0;
    double mean_measured_u = 0.0;
    double semantic_miou = 0.0;
};

struct ReportBundle {
    std::vector<std::pair<std::string, IoUReport>> iou;
    std::vector<FrechetReport> frechet;
    std::vector<UncertaintySummary> uncertainty;
    std::vector<AlphaSweepPoint> alpha_sweep;

    bool empty() const { return iou.empty() && frechet.empty() && uncertainty.empty() && alpha_sweep.empty(); }
};

/// Writes delimited tables, summary.json and PNG plots for whatever reports
/// are present. Returns the files written (none for an empty bundle).
std::vector<fs::path> emit_report(const ReportBundle& reports, const fs::path& dir);

nlohmann::json to_json(const IoUReport& r);

}  // namespace uniacorn
