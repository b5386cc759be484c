// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/autograd.hpp"
#include "inpad/types.hpp"

namespace inpad {

/// Per-cell reconstruction difficulty for one (encoder, decoder) group pair.
struct DifficultyField {
    Tensor m_cos; // h x w, 1 - cos per cell
    Tensor m_mse; // h x w, channel-mean squared difference per cell
    int64_t h = 0;
    int64_t w = 0;

    double mean_cos() const { return m_cos.sum() / static_cast<double>(m_cos.size()); }
    double mean_mse() const { return m_mse.sum() / static_cast<double>(m_mse.size()); }
};

struct MiningWeights {
    Tensor w_cos; // h x w
    Tensor w_mse; // h x w
    double gamma = 0.0;
};

struct LossBundle {
    double l_sm_cos = 0.0;
    double l_sm_mse = 0.0;
    double l_sm = 0.0;
    double l_sc = 0.0;
    double l_npm = 0.0;
    double lambda = 0.0;
};

DifficultyField difficulty_fields(const TokenGrid& enc_group, const TokenGrid& dec_group);

/// w = (M / u)^gamma per cell; u <= 0 degrades to all-ones weights.
Tensor mining_weights_field(const Tensor& field, double u, double gamma);
MiningWeights mining_weights(const DifficultyField& field, double gamma);
MiningWeights mining_weights(const DifficultyField& field, double u_cos, double u_mse, double gamma);

/// One (encoder, decoder) pair inside a soft-mining batch. `group` indexes
/// the supervision group so the batch mean is taken per group.
struct GroupTerm {
    Tensor enc; // N x C, constant (frozen encoder side)
    Var dec;    // N x C, graph variable
    int group = 0;
};

struct SoftMiningVars {
    Var l_sm_cos;
    Var l_sm_mse;
    Var l_sm;
};

/// Gradient-rescaled reconstruction loss over a batch of group pairs. The
/// forward value is gamma-independent; only the backward path is reweighted,
/// through detached per-cell weight fields.
SoftMiningVars soft_mining_loss(Tape& tape, const std::vector<GroupTerm>& terms, double gamma);

/// Value-only convenience over plain tensors.
LossBundle soft_mining_loss_value(const std::vector<std::pair<Tensor, Tensor>>& enc_dec_pairs, double gamma);

Var npm_loss(Tape& tape, Var l_sm, Var l_sc, double lambda);

} // namespace inpad
