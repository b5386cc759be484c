// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/autograd.hpp"
#include "inpad/rng.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// Trainable seed tokens T (M x C). Gaussian init, std 0.02.
struct LearnableTokens {
    Param tokens;

    LearnableTokens() = default;
    LearnableTokens(int64_t m, int64_t c, Rng& rng)
        : tokens("inp.tokens", rng.gaussian_tensor(m, c, 0.0, 0.02)) {}

    int64_t m() const { return tokens.value.rows(); }
    int64_t c() const { return tokens.value.cols(); }
};

/// One cross-attention + FFN block. Queries come from the seed tokens, keys
/// and values from the aggregated encoder features.
struct ExtractorParams {
    Param wq, wk, wv;              // C x C
    Param ffn_w1, ffn_b1, ffn_w2, ffn_b2; // C x 4C, 1 x 4C, 4C x C, 1 x C

    static ExtractorParams seeded(int64_t c, Rng& rng);
    /// Projections = identity, FFN = 0 everywhere.
    static ExtractorParams identity_no_ffn(int64_t c);
    std::vector<Param*> params();
};

/// P = FFN(T') + T', T' = Attention(T Wq, F Wk, F Wv) + T, softmax over the
/// N keys with 1/sqrt(C) score scaling.
Var extract_inps(Tape& tape, Var f_q, Var tokens, ExtractorParams& params);
Tensor extract_inps(const Tensor& f_q, const Tensor& tokens, const ExtractorParams& params);

enum class CoherenceMode { Hard, Soft };

struct CoherenceResult {
    double loss = 0.0;
    Tensor distances;   // N x 1 (hard mode)
    Tensor weights;     // N x M (soft mode)
    bool had_zero_norm = false;
};

/// Hard coherence: mean over tokens of min_m (1 - cos(token, p_m)).
Var coherence_loss_hard(Tape& tape, Var f_q, Var inps);
CoherenceResult coherence_loss_hard(const Tensor& f_q, const Tensor& inps);

/// Soft coherence: softmax-weighted INP mixture per token, then global
/// cosine distance between the token matrix and its reconstruction.
Var coherence_loss_soft(Tape& tape, Var f_q, Var inps);
CoherenceResult coherence_loss_soft(const Tensor& f_q, const Tensor& inps);

/// Grid of per-token distances; hard: nearest-INP distance, soft:
/// 1 - cos(token, weighted reconstruction).
AnomalyMap inp_distance_map(const TokenGrid& f_q, const Tensor& inps, CoherenceMode mode);

/// argmin_m distance per token; ties resolve to the lowest prototype index.
std::vector<int64_t> assign_tokens(const Tensor& f_q, const Tensor& inps);

/// Fraction of tokens landing in the most common assignment bin.
double shortcut_collapse_fraction(const std::vector<int64_t>& assignment, int64_t m);

} // namespace inpad
