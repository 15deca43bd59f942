// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "uniacorn/common.hpp"

namespace uniacorn {

struct RawImage {
    int height = 0;
    int width = 0;
    int channels = 1;
    bool indexed = false;  // palette PNG: `pixels` holds palette indices
    std::vector<std::uint8_t> pixels;
};

void write_png_gray(const fs::path& path, const Grid<std::uint8_t>& pixels);
// Palette PNG whose entries are a gray ramp over `n_colors`; pixel bytes are the
// class indices themselves so the file is lossless and still viewable.
void write_png_indexed(const fs::path& path, const Grid<std::uint8_t>& indices, int n_colors);
void write_png_rgb(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);

RawImage read_png(const fs::path& path);

// [0,1] float <-> 8-bit conversions (round to nearest).
std::uint8_t to_byte(float v);
inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }
Grid<std::uint8_t> quantize(const Image& img);
Image dequantize(const Grid<std::uint8_t>& bytes);

}  // namespace uniacorn
