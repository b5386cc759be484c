// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "inpad/autograd.hpp"
#include "inpad/rng.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// Frozen feature extractor contract. Implementations never expose
/// trainable parameters; extract() is a pure function of the image.
class FeatureExtractorHandle {
public:
    virtual ~FeatureExtractorHandle() = default;

    virtual FeatureStack extract(const ImageTensor& image) const = 0;
    virtual int64_t patch_size() const = 0;
    virtual int64_t dim() const = 0;
    virtual int64_t num_layers() const = 0;
    virtual std::string tag() const = 0;
    /// Weight fingerprint; must be invariant across the extractor's lifetime.
    virtual double checksum() const = 0;
};

struct ToyEncoderConfig {
    int64_t patch_size = 14;
    int64_t dim = 768;
    int64_t num_layers = 12;
    uint64_t seed = 7;
    std::vector<double> norm_mean{0.0, 0.0, 0.0};
    std::vector<double> norm_std{1.0, 1.0, 1.0};
};

/// Small frozen vision transformer with seeded random weights: patch embed,
/// seeded positional embedding, pre-norm self-attention blocks. Used at desk
/// scale where pretrained weights are out of reach.
class ToyFrozenEncoder : public FeatureExtractorHandle {
public:
    explicit ToyFrozenEncoder(const ToyEncoderConfig& cfg);

    FeatureStack extract(const ImageTensor& image) const override;
    int64_t patch_size() const override { return cfg_.patch_size; }
    int64_t dim() const override { return cfg_.dim; }
    int64_t num_layers() const override { return cfg_.num_layers; }
    std::string tag() const override;
    double checksum() const override;

private:
    struct Block {
        Tensor wq, wk, wv, wo; // C x C
        Tensor ffn_w1, ffn_w2; // C x 4C, 4C x C
    };

    ToyEncoderConfig cfg_;
    Tensor patch_embed_; // (3*k*k) x C
    std::vector<Block> blocks_;
    mutable Tensor pos_embed_cache_; // regenerated per grid size
    uint64_t pos_seed_ = 0;

    Tensor positional_embedding(int64_t n) const;
};

/// Reads per-image feature containers produced offline, letting callers plug
/// full-scale pretrained features without bundling weights.
class PrecomputedFeatureLoader : public FeatureExtractorHandle {
public:
    /// feature_dir holds one .feat container per image; lookup is by the
    /// stem registered with bind_image().
    PrecomputedFeatureLoader(std::string feature_dir, int64_t patch, int64_t dim, int64_t layers,
                             std::string tag);

    FeatureStack extract(const ImageTensor& image) const override;
    /// Associates the next extract() calls with a file stem.
    void bind_image(const std::string& stem) const { bound_stem_ = stem; }

    int64_t patch_size() const override { return patch_; }
    int64_t dim() const override { return dim_; }
    int64_t num_layers() const override { return layers_; }
    std::string tag() const override { return tag_; }
    double checksum() const override { return 0.0; }

private:
    std::string dir_;
    int64_t patch_, dim_, layers_;
    std::string tag_;
    mutable std::string bound_stem_;
};

/// Per-image feature container: magic + JSON metadata (k, h, w, C, layer
/// count, extractor tag) followed by raw little-endian doubles per layer.
void write_feature_file(const std::string& path, const FeatureStack& stack);
FeatureStack read_feature_file(const std::string& path);

/// Builds the extractor named by `type`; throws ExtractorUnavailableError for
/// names with no local implementation (e.g. pretrained ViT variants).
std::unique_ptr<FeatureExtractorHandle> make_extractor(const std::string& type, const ToyEncoderConfig& toy_cfg,
                                                       const std::string& feature_dir);

class ExtractorUnavailableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Element-wise sum of the selected layers (1-based indices).
TokenGrid aggregate_group(const FeatureStack& stack, const std::vector<int>& indices);

/// Residual one-hidden-layer MLP fusing the summed group aggregates:
/// y = x + W2 * gelu(W1 * x + b1) + b2. A freshly constructed instance has
/// W2 = 0 and is exactly the identity.
struct BottleneckParams {
    Param w1, b1, w2, b2; // C x C, 1 x C, C x C, 1 x C

    static BottleneckParams identity(int64_t c);
    static BottleneckParams seeded(int64_t c, Rng& rng);
    std::vector<Param*> params();
};

Var bottleneck_forward(Tape& tape, Var x, BottleneckParams& p);
Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p);

} // namespace inpad
