// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inpad/rng.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// Gradient-lattice noise field normalized to [-1, 1]; exact zeros at
/// lattice points.
struct NoiseField {
    Tensor values; // H x W
    int64_t scale = 0;
    uint64_t seed = 0;
};

/// Classic Perlin noise with smoothstep fade. `scale` is the lattice cell
/// count per axis and must divide both dimensions.
NoiseField perlin_noise(int64_t height, int64_t width, int64_t scale, uint64_t seed);

class ResampleBudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MaskBounds {
    double min_area_fraction = 0.001;
    double max_area_fraction = 0.30;
};

/// mask = (noise > threshold); fields outside the area bounds are rejected.
Mask threshold_mask(const NoiseField& noise, double threshold);
bool mask_area_ok(const Mask& mask, const MaskBounds& bounds);

struct PerlinMaskConfig {
    double threshold = 0.5;
    MaskBounds bounds;
    std::vector<int64_t> scales; // candidate lattice scales; filtered per image size
    int max_attempts = 64;
};

/// Draws Perlin fields until the thresholded mask lands inside the area
/// bounds; throws ResampleBudgetError when the attempt budget runs out.
Mask sample_perlin_mask(int64_t height, int64_t width, const PerlinMaskConfig& cfg, Rng& rng);

enum class SynthesisProvenance { Perlin, RealEmbed };

struct PseudoAnomalySample {
    ImageTensor image;
    Mask mask;
    SynthesisProvenance provenance = SynthesisProvenance::Perlin;
    double beta = 0.0;
    std::string source_id;
    std::string texture_id;
};

/// I_a = (1-M) * I + M * ((1-beta) * I + beta * texture).
PseudoAnomalySample synthesize_pseudo_anomaly(const ImageTensor& normal, const ImageTensor& texture,
                                              const Mask& mask, double beta);

struct EmbedConfig {
    double scale_min = 0.7;
    double scale_max = 1.3;
    int max_attempts = 16;
    /// Skip rotation/flip/scale sampling.
    bool identity_transform = false;
    /// Fixed paste position (top-left), otherwise seeded.
    bool use_fixed_position = false;
    int64_t fixed_y = 0;
    int64_t fixed_x = 0;
};

/// Cuts the donor's anomalous region (tight bounding box of its ground-truth
/// mask), applies a seeded rotation/flip/scale, and pastes it at a seeded
/// location in the normal image.
PseudoAnomalySample embed_real_anomaly(const ImageTensor& normal, const ImageTensor& donor_image,
                                       const Mask& donor_mask, uint64_t transform_seed,
                                       const EmbedConfig& cfg = EmbedConfig{});

/// Pixels whose value differs between the two images; the synthesis
/// invariant is support(diff) subset-of mask.
Mask changed_pixels(const ImageTensor& a, const ImageTensor& b);
bool mask_subset(const Mask& inner, const Mask& outer);

} // namespace inpad
