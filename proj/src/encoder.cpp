// SPDX-License-Identifier: Apache-2.0
#include "inpad/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace inpad {

void GroupSpec::validate() const {
    if (encoder_groups.size() != decoder_groups.size()) {
        throw std::invalid_argument("GroupSpec: encoder and decoder group counts differ");
    }
    if (encoder_groups.empty()) throw std::invalid_argument("GroupSpec: no groups");
    auto check_disjoint = [](const std::vector<std::vector<int>>& groups, const char* side) {
        std::set<int> seen;
        for (const auto& g : groups) {
            if (g.empty()) throw std::invalid_argument(std::string("GroupSpec: empty ") + side + " group");
            for (int idx : g) {
                if (!seen.insert(idx).second) {
                    throw std::invalid_argument(std::string("GroupSpec: duplicate layer in ") + side + " groups");
                }
            }
        }
    };
    check_disjoint(encoder_groups, "encoder");
    check_disjoint(decoder_groups, "decoder");
}

namespace {

void layer_norm_rows(Tensor& x) {
    const int64_t c = x.cols();
    for (int64_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += x(i, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t j = 0; j < c; ++j) x(i, j) = (x(i, j) - mean) * inv;
    }
}

Tensor softmax_rows_plain(Tensor x) {
    for (int64_t i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (int64_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double s = 0.0;
        for (int64_t j = 0; j < x.cols(); ++j) {
            x(i, j) = std::exp(x(i, j) - mx);
            s += x(i, j);
        }
        for (int64_t j = 0; j < x.cols(); ++j) x(i, j) /= s;
    }
    return x;
}

Tensor gelu_plain(Tensor x) {
    for (int64_t i = 0; i < x.size(); ++i) x[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / M_SQRT2));
    return x;
}

} // namespace

ToyFrozenEncoder::ToyFrozenEncoder(const ToyEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.patch_size <= 0 || cfg.dim <= 0 || cfg.num_layers <= 0) {
        throw std::invalid_argument("ToyFrozenEncoder: non-positive config");
    }
    Rng rng(cfg.seed);
    const int64_t c = cfg.dim;
    const int64_t pd = 3 * cfg.patch_size * cfg.patch_size;
    patch_embed_ = rng.gaussian_tensor(pd, c, 0.0, 1.0 / std::sqrt(static_cast<double>(pd)));
    const double ws = 1.0 / std::sqrt(static_cast<double>(c));
    // attention/ffn branches enter with reduced gain so the residual stream
    // stays local-dominant, the way pretrained backbones behave
    const double branch_gain = 0.3;
    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        Block b;
        b.wq = rng.gaussian_tensor(c, c, 0.0, ws);
        b.wk = rng.gaussian_tensor(c, c, 0.0, ws);
        b.wv = rng.gaussian_tensor(c, c, 0.0, ws);
        b.wo = rng.gaussian_tensor(c, c, 0.0, branch_gain * ws);
        b.ffn_w1 = rng.gaussian_tensor(c, 4 * c, 0.0, ws);
        b.ffn_w2 = rng.gaussian_tensor(4 * c, c, 0.0, branch_gain / std::sqrt(4.0 * static_cast<double>(c)));
        blocks_.push_back(std::move(b));
    }
    pos_seed_ = rng.next_u64();
}

Tensor ToyFrozenEncoder::positional_embedding(int64_t n) const {
    Rng rng(pos_seed_ ^ static_cast<uint64_t>(n) * 0x9e3779b97f4a7c15ULL);
    return rng.gaussian_tensor(n, cfg_.dim, 0.0, 0.5);
}

FeatureStack ToyFrozenEncoder::extract(const ImageTensor& image) const {
    const int64_t k = cfg_.patch_size;
    if (image.height % k != 0 || image.width % k != 0) {
        throw std::invalid_argument("extract_features: image dimensions " + std::to_string(image.height) +
                                    "x" + std::to_string(image.width) + " not divisible by patch size " +
                                    std::to_string(k));
    }
    const int64_t h = image.height / k;
    const int64_t w = image.width / k;
    const int64_t n = h * w;
    const int64_t c = cfg_.dim;

    Tensor patches(n, 3 * k * k);
    for (int64_t gy = 0; gy < h; ++gy) {
        for (int64_t gx = 0; gx < w; ++gx) {
            const int64_t row = gy * w + gx;
            int64_t col = 0;
            for (int64_t py = 0; py < k; ++py) {
                for (int64_t px = 0; px < k; ++px) {
                    for (int64_t ch = 0; ch < 3; ++ch) {
                        const double v = image.at(gy * k + py, gx * k + px, ch);
                        patches(row, col++) = (v - cfg_.norm_mean[static_cast<size_t>(ch)]) /
                                              cfg_.norm_std[static_cast<size_t>(ch)];
                    }
                }
            }
        }
    }

    Tensor x = matmul(patches, patch_embed_);
    x += positional_embedding(n);

    FeatureStack stack;
    stack.extractor_tag = tag();
    stack.patch_size = k;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
    for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        const Block& b = blocks_[static_cast<size_t>(l)];
        Tensor xn = x;
        layer_norm_rows(xn);
        Tensor q = matmul(xn, b.wq);
        Tensor kk = matmul(xn, b.wk);
        Tensor v = matmul(xn, b.wv);
        Tensor scores = matmul_nt(q, kk);
        scores *= inv_sqrt_c;
        Tensor attn = matmul(matmul(softmax_rows_plain(std::move(scores)), v), b.wo);
        x += attn;
        Tensor x2 = x;
        layer_norm_rows(x2);
        Tensor ffn = matmul(gelu_plain(matmul(x2, b.ffn_w1)), b.ffn_w2);
        x += ffn;

        // emitted grids are scaled so the mean token norm is sqrt(C); the
        // per-token norm contrast survives, only the global scale is pinned
        TokenGrid grid;
        grid.tokens = x;
        const double mean_norm = grid.tokens.frobenius_norm() / std::sqrt(static_cast<double>(n));
        if (mean_norm > 0.0) {
            grid.tokens *= std::sqrt(static_cast<double>(c)) / mean_norm;
        }
        grid.h = h;
        grid.w = w;
        grid.layer = l + 1;
        stack.layers.push_back(std::move(grid));
    }
    return stack;
}

std::string ToyFrozenEncoder::tag() const {
    return "toy-vit-k" + std::to_string(cfg_.patch_size) + "-c" + std::to_string(cfg_.dim) + "-l" +
           std::to_string(cfg_.num_layers) + "-s" + std::to_string(cfg_.seed);
}

double ToyFrozenEncoder::checksum() const {
    double s = patch_embed_.sum();
    for (const auto& b : blocks_) {
        s += b.wq.sum() + b.wk.sum() + b.wv.sum() + b.wo.sum() + b.ffn_w1.sum() + b.ffn_w2.sum();
    }
    return s;
}

PrecomputedFeatureLoader::PrecomputedFeatureLoader(std::string feature_dir, int64_t patch, int64_t dim,
                                                   int64_t layers, std::string tag)
    : dir_(std::move(feature_dir)), patch_(patch), dim_(dim), layers_(layers), tag_(std::move(tag)) {}

FeatureStack PrecomputedFeatureLoader::extract(const ImageTensor& image) const {
    (void)image;
    if (bound_stem_.empty()) {
        throw std::runtime_error("PrecomputedFeatureLoader: no image stem bound before extract()");
    }
    const std::filesystem::path path = std::filesystem::path(dir_) / (bound_stem_ + ".feat");
    FeatureStack stack = read_feature_file(path.string());
    if (stack.num_layers() != layers_) {
        throw std::runtime_error("PrecomputedFeatureLoader: layer count mismatch in " + path.string());
    }
    return stack;
}

std::unique_ptr<FeatureExtractorHandle> make_extractor(const std::string& type, const ToyEncoderConfig& toy_cfg,
                                                       const std::string& feature_dir) {
    if (type == "toy") return std::make_unique<ToyFrozenEncoder>(toy_cfg);
    if (type == "precomputed") {
        return std::make_unique<PrecomputedFeatureLoader>(feature_dir, toy_cfg.patch_size, toy_cfg.dim,
                                                          toy_cfg.num_layers, "precomputed");
    }
    throw ExtractorUnavailableError("extractor '" + type +
                                    "' is not available; bundled options are 'toy' and 'precomputed'");
}

TokenGrid aggregate_group(const FeatureStack& stack, const std::vector<int>& indices) {
    if (indices.empty()) throw std::invalid_argument("aggregate_group: empty index set");
    TokenGrid out;
    bool first = true;
    for (int idx : indices) {
        if (idx < 1 || idx > stack.num_layers()) {
            throw std::out_of_range("aggregate_group: layer index " + std::to_string(idx) + " out of range");
        }
        const TokenGrid& g = stack.layers[static_cast<size_t>(idx - 1)];
        if (first) {
            out = g;
            out.layer = 0;
            first = false;
        } else {
            check_same_shape(out.tokens, g.tokens, "aggregate_group");
            out.tokens += g.tokens;
        }
    }
    return out;
}

BottleneckParams BottleneckParams::identity(int64_t c) {
    BottleneckParams p;
    p.w1 = Param("bottleneck.w1", Tensor::identity(c));
    p.b1 = Param("bottleneck.b1", Tensor::zeros(1, c));
    p.w2 = Param("bottleneck.w2", Tensor::zeros(c, c));
    p.b2 = Param("bottleneck.b2", Tensor::zeros(1, c));
    return p;
}

BottleneckParams BottleneckParams::seeded(int64_t c, Rng& rng) {
    BottleneckParams p;
    const double ws = 1.0 / std::sqrt(static_cast<double>(c));
    p.w1 = Param("bottleneck.w1", rng.gaussian_tensor(c, c, 0.0, ws));
    p.b1 = Param("bottleneck.b1", Tensor::zeros(1, c));
    p.w2 = Param("bottleneck.w2", rng.gaussian_tensor(c, c, 0.0, ws));
    p.b2 = Param("bottleneck.b2", Tensor::zeros(1, c));
    return p;
}

std::vector<Param*> BottleneckParams::params() { return {&w1, &b1, &w2, &b2}; }

Var bottleneck_forward(Tape& tape, Var x, BottleneckParams& p) {
    Var hidden = tape.gelu(tape.add_rowvec(tape.matmul(x, tape.param(p.w1)), tape.param(p.b1)));
    Var branch = tape.add_rowvec(tape.matmul(hidden, tape.param(p.w2)), tape.param(p.b2));
    return tape.add(x, branch);
}

Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p) {
    Tensor hidden = matmul(x, p.w1.value);
    for (int64_t i = 0; i < hidden.rows(); ++i)
        for (int64_t j = 0; j < hidden.cols(); ++j) hidden(i, j) += p.b1.value(0, j);
    hidden = gelu_plain(std::move(hidden));
    Tensor branch = matmul(hidden, p.w2.value);
    for (int64_t i = 0; i < branch.rows(); ++i)
        for (int64_t j = 0; j < branch.cols(); ++j) branch(i, j) += p.b2.value(0, j);
    return x + branch;
}

} // namespace inpad
