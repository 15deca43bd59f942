// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uniacorn/common.hpp"

namespace uniacorn::plot {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

/// Fixed qualitative palette; index wraps.
Rgb palette(size_t index);

/// Minimal RGB raster with lines, rectangles and a 3x5 numeric font.
class Canvas {
public:
    Canvas(int width, int height, Rgb background = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }
    void set(int x, int y, Rgb c);
    Rgb get(int x, int y) const;
    void line(double x0, double y0, double x1, double y1, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
    /// Digits, '.', '-', '+' and 'e'; other characters leave a gap.
    void text(int x, int y, const std::string& s, Rgb c, int scale = 2);
    void save(const fs::path& path) const;

private:
    int width_, height_;
    std::vector<std::uint8_t> rgb_;
};

struct HistogramSeries {
    std::vector<double> values;
    double fit_mean = 0.0;
    double fit_std = 0.0;  // <= 0 skips the Gaussian overlay
};

/// Overlaid normalized histograms over [lo, hi] with fitted Gaussian curves.
void histograms(const fs::path& path, const std::vector<HistogramSeries>& series, double lo, double hi, int bins = 40);

struct LineSeries {
    std::vector<double> x;
    std::vector<double> y;
};

void lines(const fs::path& path, const std::vector<LineSeries>& series);

/// groups[g][k]: value of bar k in group g (here: report g, label k), in [0,1].
void bars(const fs::path& path, const std::vector<std::vector<double>>& groups);

}  // namespace uniacorn::plot
