// Copyright (C) 2026 The UniACorN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uniacorn {

namespace fs = std::filesystem;

// Error hierarchy. Every failure surfaced by the library is one of these.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct LoadError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct TrainingError : Error {
    using Error::Error;
};

#define UNIACORN_EXPECT(cond, ErrorType, msg)                                                   \
    do {                                                                                        \
        if (!(cond)) throw ::uniacorn::ErrorType(msg);                                          \
    } while (0)

// Row-major H x W grid.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    T& at(int i, int j) { return data[static_cast<size_t>(i) * width + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * width + j]; }
    size_t size() const { return data.size(); }
    template <typename U>
    bool same_shape(const Grid<U>& o) const { return height == o.height && width == o.width; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Image = Grid<float>;
using LabelMap = Grid<std::uint8_t>;

// Deterministic seed derivation. All randomness in the project fans out from
// a master seed through these helpers so parallel and serial runs agree.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// SHA-256 hex digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

std::string read_text_file(const fs::path& path);
// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const fs::path& path, std::string_view contents);

}  // namespace uniacorn
