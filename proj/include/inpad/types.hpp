// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inpad/tensor.hpp"

namespace inpad {

/// RGB image, values in [0, 1], interleaved row-major (y, x, channel).
struct ImageTensor {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> pixels; // height * width * 3

    ImageTensor() = default;
    ImageTensor(int64_t h, int64_t w) : height(h), width(w), pixels(static_cast<size_t>(h * w * 3), 0.0) {}

    double& at(int64_t y, int64_t x, int64_t c) { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
    double at(int64_t y, int64_t x, int64_t c) const { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
    int64_t num_pixels() const { return height * width; }
};

/// Binary pixel mask, 0 or 1.
struct Mask {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> values;

    Mask() = default;
    Mask(int64_t h, int64_t w) : height(h), width(w), values(static_cast<size_t>(h * w), 0) {}

    uint8_t& at(int64_t y, int64_t x) { return values[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return values[static_cast<size_t>(y * width + x)]; }
    int64_t area() const {
        int64_t a = 0;
        for (uint8_t v : values) a += v;
        return a;
    }
    bool empty_mask() const { return area() == 0; }
};

/// h x w grid of C-dimensional tokens stored as an (h*w) x C matrix,
/// cells in row-major order.
struct TokenGrid {
    Tensor tokens; // N x C
    int64_t h = 0;
    int64_t w = 0;
    int64_t layer = 0;

    int64_t n() const { return tokens.rows(); }
    int64_t c() const { return tokens.cols(); }
};

/// Ordered per-layer token grids from one encoder pass.
struct FeatureStack {
    std::vector<TokenGrid> layers;
    std::string extractor_tag;
    int64_t patch_size = 0;

    int64_t num_layers() const { return static_cast<int64_t>(layers.size()); }
};

/// Layer-index groups for group-to-group supervision. Indices are 1-based.
struct GroupSpec {
    std::vector<std::vector<int>> encoder_groups;
    std::vector<std::vector<int>> decoder_groups;

    int64_t num_groups() const { return static_cast<int64_t>(encoder_groups.size()); }
    void validate() const;
};

enum class MapResolution { Grid, Image };

/// Nonnegative score field.
struct AnomalyMap {
    Tensor scores; // h x w
    MapResolution resolution = MapResolution::Grid;
};

} // namespace inpad
