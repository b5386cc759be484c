// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/autograd.hpp"
#include "inpad/rng.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// Group-averaged, cosine-weighted absolute feature difference at grid
/// resolution. Entrywise nonnegative; zero exactly when the groups agree.
struct FeatureResidual {
    Tensor values; // N x C
    int64_t h = 0;
    int64_t w = 0;
    bool gradient_stopped = true;
};

FeatureResidual feature_residual(const std::vector<TokenGrid>& enc_groups,
                                 const std::vector<TokenGrid>& dec_groups);

/// In-graph variant: returns an N x C Var. Used by the no-stop-gradient
/// ablation; the default training path goes through the value version and a
/// fresh leaf.
Var feature_residual(Tape& tape, const std::vector<Var>& enc_groups, const std::vector<Var>& dec_groups);

/// Two transposed-convolution stages and a final convolution, channel plan
/// C -> C/2 -> C/4 -> 1, sigmoid output, bilinear completion to image size.
struct SegHeadParams {
    Param deconv1_w, deconv1_b; // C x (C/2 * 4 * 4), 1 x C/2
    Param deconv2_w, deconv2_b; // C/2 x (C/4 * 4 * 4), 1 x C/4
    Param conv_w, conv_b;       // 1 x (C/4 * 3 * 3), 1 x 1
    int64_t in_channels = 0;

    static SegHeadParams seeded(int64_t c, Rng& rng);
    /// All weights and biases zero; the untrained head outputs a flat 0.5 map.
    static SegHeadParams zeros(int64_t c);
    std::vector<Param*> params();
};

/// residual (N x C at grid resolution h x w) -> predicted mask (image_h x
/// image_w in [0,1]).
Var seg_forward(Tape& tape, Var residual, int64_t h, int64_t w, SegHeadParams& head, int64_t image_h,
                int64_t image_w);
Tensor seg_forward(const FeatureResidual& residual, const SegHeadParams& head, int64_t image_h, int64_t image_w);

/// 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)); the all-empty case is 0.
double dice_loss(const Tensor& pred, const Tensor& gt);

} // namespace inpad
