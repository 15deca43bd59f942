// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <atomic>
#include <string>

#include "uniacorn/pipeline.hpp"

// The torch headers define glog-style CHECK macros; doctest's must win.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>

namespace testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("uniacorn-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

/// 32x32 geometry that fits five classes.
inline uniacorn::DomainSpec small_spec(uniacorn::Domain d, std::uint64_t seed) {
    auto s = d == uniacorn::Domain::SourceLabeled ? uniacorn::default_source_spec(seed)
                                                  : uniacorn::default_target_spec(seed);
    s.height = 32;
    s.width = 32;
    s.min_thickness = 3;
    s.max_thickness = 5;
    s.wave_amplitude = 1.5;
    s.top_min_fraction = 0.1;
    s.top_max_fraction = 0.2;
    return s;
}

/// Seconds-scale end-to-end configuration.
inline uniacorn::PipelineConfig smoke_config(const fs::path& out, std::uint64_t seed = 7) {
    using namespace uniacorn;
    PipelineConfig c;
    c.seed = seed;
    c.output = out;
    c.height = 32;
    c.width = 32;
    c.n_per_domain = 40;
    c.source = small_spec(Domain::SourceLabeled, 0);
    c.target = small_spec(Domain::TargetUnlabeled, 0);
    c.segmenter.channels = {8, 16};
    c.segmenter_train = {3e-3, 3, 2, 16, 0};
    c.retrain_train = {3e-3, 3, 2, 16, 0};
    c.autoencoder.channels = {8, 8, 8};
    c.autoencoder_fit = {2e-3, 2, 16, 0};
    c.backbone.channels = {8, 16};
    c.backbone.time_dim = 16;
    c.backbone_fit = {2e-3, 2, 32, 0};
    c.schedule.train_steps = 50;
    c.schedule.sample_steps = 10;
    c.hint_channels = 4;
    c.semantic_fit = {2e-3, 1, 32, 0};
    c.uncertainty_fit = {2e-3, 1, 32, 0};
    c.evaluation.classifier = {2e-3, 1, 32, 0};
    c.evaluation.steering_seeds = 2;
    c.evaluation.alpha_sweep = {0.0, 1.0};
    c.evaluation.alpha_sweep_images = 2;
    c.evaluation.paired_trials = 2;
    return c;
}

}  // namespace testing
