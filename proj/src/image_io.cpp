// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniacorn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace uniacorn {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const fs::path& path, const char* mode) {
    if (mode[0] == 'w' && path.has_parent_path()) fs::create_directories(path.parent_path());
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

void write_png_impl(const fs::path& path, int height, int width, int color_type,
                    const std::uint8_t* pixels, int bytes_per_pixel, int n_palette) {
    FilePtr f = open_or_throw(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed for " + path.string());
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> palette;
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        palette.resize(n_palette);
        for (int k = 0; k < n_palette; ++k) {
            auto g = static_cast<png_byte>(n_palette > 1 ? (k * 255) / (n_palette - 1) : 0);
            palette[k] = png_color{g, g, g};
        }
        png_set_PLTE(png, info, palette.data(), n_palette);
    }
    png_write_info(png, info);
    for (int i = 0; i < height; ++i) {
        png_write_row(png, const_cast<png_bytep>(pixels + static_cast<size_t>(i) * width * bytes_per_pixel));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) throw IoError("flush failed for " + path.string());
}

}  // namespace

void write_png_gray(const fs::path& path, const Grid<std::uint8_t>& pixels) {
    write_png_impl(path, pixels.height, pixels.width, PNG_COLOR_TYPE_GRAY, pixels.data.data(), 1, 0);
}

void write_png_indexed(const fs::path& path, const Grid<std::uint8_t>& indices, int n_colors) {
    UNIACORN_EXPECT(n_colors >= 1 && n_colors <= 256, ContractError, "palette size out of range");
    for (auto v : indices.data) {
        UNIACORN_EXPECT(v < n_colors, ContractError, "index exceeds palette size in " + path.string());
    }
    write_png_impl(path, indices.height, indices.width, PNG_COLOR_TYPE_PALETTE, indices.data.data(), 1,
                   n_colors);
}

void write_png_rgb(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
    UNIACORN_EXPECT(rgb.size() == static_cast<size_t>(height) * width * 3, ContractError,
                    "rgb buffer size mismatch");
    write_png_impl(path, height, width, PNG_COLOR_TYPE_RGB, rgb.data(), 3, 0);
}

RawImage read_png(const fs::path& path) {
    FilePtr f = open_or_throw(path, "rb");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw LoadError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw LoadError("png_create_read_struct failed for " + path.string());
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("corrupt PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    RawImage out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        out.indexed = true;
        if (bit_depth < 8) png_set_packing(png);
    } else if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.channels = png_get_channels(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    out.pixels.resize(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int i = 0; i < out.height; ++i) rows[i] = out.pixels.data() + i * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Grid<std::uint8_t> quantize(const Image& img) {
    Grid<std::uint8_t> out(img.height, img.width);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), to_byte);
    return out;
}

Image dequantize(const Grid<std::uint8_t>& bytes) {
    Image out(bytes.height, bytes.width);
    std::transform(bytes.data.begin(), bytes.data.end(), out.data.begin(), from_byte);
    return out;
}

}  // namespace uniacorn
