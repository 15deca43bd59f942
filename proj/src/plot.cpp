// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "uniacorn/image_io.hpp"

namespace uniacorn::plot {

Rgb palette(size_t index) {
    static constexpr std::array<Rgb, 6> colors{{
        {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75},
    }};
    return colors[index % colors.size()];
}

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), rgb_(static_cast<size_t>(width) * height * 3) {
    UNIACORN_EXPECT(width > 0 && height > 0, ContractError, "canvas size must be positive");
    for (size_t k = 0; k < rgb_.size(); k += 3) {
        rgb_[k] = background.r;
        rgb_[k + 1] = background.g;
        rgb_[k + 2] = background.b;
    }
}

void Canvas::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const size_t k = (static_cast<size_t>(y) * width_ + x) * 3;
    rgb_[k] = c.r;
    rgb_[k + 1] = c.g;
    rgb_[k + 2] = c.b;
}

Rgb Canvas::get(int x, int y) const {
    const size_t k = (static_cast<size_t>(y) * width_ + x) * 3;
    return {rgb_[k], rgb_[k + 1], rgb_[k + 2]};
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c) {
    const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const int n = std::max(1, static_cast<int>(std::ceil(len)));
    for (int k = 0; k <= n; ++k) {
        const double s = static_cast<double>(k) / n;
        set(static_cast<int>(std::lround(x0 + s * (x1 - x0))), static_cast<int>(std::lround(y0 + s * (y1 - y0))), c);
    }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) set(x, y, c);
}

namespace {

// 3x5 glyphs, one row per 3-bit mask, top row first.
std::array<std::uint8_t, 5> glyph(char ch) {
    switch (ch) {
        case '0': return {7, 5, 5, 5, 7};
        case '1': return {2, 6, 2, 2, 7};
        case '2': return {7, 1, 7, 4, 7};
        case '3': return {7, 1, 7, 1, 7};
        case '4': return {5, 5, 7, 1, 1};
        case '5': return {7, 4, 7, 1, 7};
        case '6': return {7, 4, 7, 5, 7};
        case '7': return {7, 1, 1, 1, 1};
        case '8': return {7, 5, 7, 5, 7};
        case '9': return {7, 5, 7, 1, 7};
        case '.': return {0, 0, 0, 0, 2};
        case '-': return {0, 0, 7, 0, 0};
        case '+': return {0, 2, 7, 2, 0};
        case 'e': return {0, 7, 7, 4, 7};
        default: return {0, 0, 0, 0, 0};
    }
}

std::string short_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Frame {
    int left = 60, right = 20, top = 20, bottom = 40;
    int width = 640, height = 400;
    double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;

    double px(double x) const { return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y_lo) / (y_hi - y_lo) * (height - top - bottom); }

    void draw_axes(Canvas& c) const {
        const Rgb ink{40, 40, 40};
        c.line(left, top, left, height - bottom, ink);
        c.line(left, height - bottom, width - right, height - bottom, ink);
        c.text(left, height - bottom + 8, short_number(x_lo), ink);
        const std::string xh = short_number(x_hi);
        c.text(width - right - 8 * static_cast<int>(xh.size()), height - bottom + 8, xh, ink);
        c.text(4, height - bottom - 10, short_number(y_lo), ink);
        c.text(4, top, short_number(y_hi), ink);
    }
};

void widen(double& lo, double& hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
}

}  // namespace

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
    int cx = x;
    for (char ch : s) {
        const auto g = glyph(ch);
        for (int row = 0; row < 5; ++row)
            for (int col = 0; col < 3; ++col)
                if (g[row] & (4 >> col)) fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale - 1,
                                                   y + (row + 1) * scale - 1, c);
        cx += 4 * scale;
    }
}

void Canvas::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_png_rgb(path, height_, width_, rgb_);
}

void histograms(const fs::path& path, const std::vector<HistogramSeries>& series, double lo, double hi, int bins) {
    UNIACORN_EXPECT(hi > lo && bins > 0, ContractError, "invalid histogram range");
    const double bw = (hi - lo) / bins;
    std::vector<std::vector<double>> density(series.size(), std::vector<double>(bins, 0.0));
    double y_max = 0.0;
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& v = series[s].values;
        for (double x : v) {
            const int b = std::clamp(static_cast<int>((x - lo) / bw), 0, bins - 1);
            density[s][b] += 1.0 / (static_cast<double>(v.size()) * bw);
        }
        for (double d : density[s]) y_max = std::max(y_max, d);
        if (series[s].fit_std > 0)
            y_max = std::max(y_max, 1.0 / (series[s].fit_std * std::sqrt(2.0 * std::numbers::pi)));
    }
    Frame f;
    f.x_lo = lo;
    f.x_hi = hi;
    f.y_hi = y_max > 0 ? y_max * 1.05 : 1.0;
    Canvas c(f.width, f.height);
    for (size_t s = 0; s < series.size(); ++s) {
        const Rgb col = palette(s);
        const Rgb light{static_cast<std::uint8_t>((col.r + 510) / 3), static_cast<std::uint8_t>((col.g + 510) / 3),
                        static_cast<std::uint8_t>((col.b + 510) / 3)};
        for (int b = 0; b < bins; ++b) {
            if (density[s][b] <= 0) continue;
            const int x0 = static_cast<int>(f.px(lo + b * bw)) + 1;
            const int x1 = static_cast<int>(f.px(lo + (b + 1) * bw)) - 1;
            const int y0 = static_cast<int>(f.py(density[s][b]));
            // Outline only so overlapping series stay readable.
            c.line(x0, y0, x1, y0, light);
            c.line(x0, y0, x0, f.py(0), light);
            c.line(x1, y0, x1, f.py(0), light);
        }
    }
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& h = series[s];
        if (h.fit_std <= 0) continue;
        double prev_x = 0, prev_y = 0;
        for (int k = 0; k <= 400; ++k) {
            const double x = lo + (hi - lo) * k / 400.0;
            const double z = (x - h.fit_mean) / h.fit_std;
            const double y = std::exp(-0.5 * z * z) / (h.fit_std * std::sqrt(2.0 * std::numbers::pi));
            if (k > 0) c.line(f.px(prev_x), f.py(prev_y), f.px(x), f.py(y), palette(s));
            prev_x = x;
            prev_y = y;
        }
    }
    f.draw_axes(c);
    c.save(path);
}

void lines(const fs::path& path, const std::vector<LineSeries>& series) {
    Frame f;
    f.x_lo = f.y_lo = std::numeric_limits<double>::infinity();
    f.x_hi = f.y_hi = -std::numeric_limits<double>::infinity();
    for (const auto& s : series) {
        UNIACORN_EXPECT(s.x.size() == s.y.size(), ContractError, "line series x/y length mismatch");
        for (size_t k = 0; k < s.x.size(); ++k) {
            f.x_lo = std::min(f.x_lo, s.x[k]);
            f.x_hi = std::max(f.x_hi, s.x[k]);
            f.y_lo = std::min(f.y_lo, s.y[k]);
            f.y_hi = std::max(f.y_hi, s.y[k]);
        }
    }
    if (!std::isfinite(f.x_lo)) f.x_lo = 0, f.x_hi = 1, f.y_lo = 0, f.y_hi = 1;
    widen(f.x_lo, f.x_hi);
    widen(f.y_lo, f.y_hi);
    Canvas c(f.width, f.height);
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& ls = series[s];
        for (size_t k = 0; k < ls.x.size(); ++k) {
            const int x = static_cast<int>(f.px(ls.x[k])), y = static_cast<int>(f.py(ls.y[k]));
            c.fill_rect(x - 2, y - 2, x + 2, y + 2, palette(s));
            if (k > 0) c.line(f.px(ls.x[k - 1]), f.py(ls.y[k - 1]), x, y, palette(s));
        }
    }
    f.draw_axes(c);
    c.save(path);
}

void bars(const fs::path& path, const std::vector<std::vector<double>>& groups) {
    size_t n_labels = 0;
    for (const auto& g : groups) n_labels = std::max(n_labels, g.size());
    Frame f;
    f.x_lo = 0;
    f.x_hi = std::max<double>(1, static_cast<double>(n_labels));
    Canvas c(f.width, f.height);
    const double slot = (f.px(1) - f.px(0)) * 0.8 / std::max<size_t>(1, groups.size());
    for (size_t label = 0; label < n_labels; ++label) {
        for (size_t g = 0; g < groups.size(); ++g) {
            if (label >= groups[g].size()) continue;
            const double x0 = f.px(static_cast<double>(label)) + (f.px(1) - f.px(0)) * 0.1 + g * slot;
            c.fill_rect(static_cast<int>(x0), static_cast<int>(f.py(std::clamp(groups[g][label], 0.0, 1.0))),
                        static_cast<int>(x0 + slot) - 1, static_cast<int>(f.py(0)), palette(g));
        }
        c.text(static_cast<int>(f.px(label + 0.5)) - 3, f.height - f.bottom + 20, std::to_string(label), {40, 40, 40});
    }
    f.draw_axes(c);
    c.save(path);
}

}  // namespace uniacorn::plot
