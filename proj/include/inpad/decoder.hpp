// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/autograd.hpp"
#include "inpad/rng.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// One reconstruction layer: queries from the running features, keys and
/// values from the INPs, ReLU on raw scores, no residual around the
/// attention output.
struct DecoderLayerParams {
    Param wq, wk, wv;                     // C x C
    Param ffn_w1, ffn_b1, ffn_w2, ffn_b2; // C x 4C, 1 x 4C, 4C x C, 1 x C
    int layer_index = 0;

    static DecoderLayerParams seeded(int64_t c, int layer_index, Rng& rng);
    std::vector<Param*> params();
};

/// A = relu(Q K^T) (no scaling, no softmax); f' = A V; out = FFN(f') + f'.
Var decoder_layer(Tape& tape, Var f_prev, Var inps, DecoderLayerParams& params);
Tensor decoder_layer(const Tensor& f_prev, const Tensor& inps, const DecoderLayerParams& params);

/// Runs the layer chain from the fused feature and returns one element-wise
/// sum per decoder group, paired positionally with encoder groups.
std::vector<Var> decode(Tape& tape, Var fused, Var inps, std::vector<DecoderLayerParams>& layers,
                        const GroupSpec& groups);

/// Closed-form multiply-add and buffer-byte accounting for one attention
/// projection pair, using 4-byte elements.
struct OperationCount {
    int64_t qk_multiply_adds = 0; // A = Q K^T
    int64_t av_multiply_adds = 0; // f' = A V
    int64_t q_bytes = 0;
    int64_t k_bytes = 0;
    int64_t v_bytes = 0;
    int64_t a_bytes = 0;

    double q_mb() const { return static_cast<double>(q_bytes) / (1024.0 * 1024.0); }
    double k_mb() const { return static_cast<double>(k_bytes) / (1024.0 * 1024.0); }
    double v_mb() const { return static_cast<double>(v_bytes) / (1024.0 * 1024.0); }
    double a_mb() const { return static_cast<double>(a_bytes) / (1024.0 * 1024.0); }
};

/// N query rows against `keys` key rows at width C.
OperationCount attention_cost(int64_t n, int64_t keys, int64_t c);

/// Plain-text comparison table: self-attention (keys = N) vs INP-guided
/// attention (keys = M).
std::string cost_report(int64_t n, int64_t m, int64_t c);

} // namespace inpad
