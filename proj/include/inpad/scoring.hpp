// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/types.hpp"

namespace inpad {

/// Per-cell reconstruction error at grid resolution:
/// mean over groups of 0.5 * ((1 - cos) + l2_norm(diff)).
AnomalyMap recon_error_map(const std::vector<TokenGrid>& enc_groups, const std::vector<TokenGrid>& dec_groups);

Tensor upsample_bilinear_map(const Tensor& map, int64_t out_h, int64_t out_w);

/// A = (upsample(A_rec) + M_pred) / 2. Without a segmentation prediction
/// (residual learning off) A = upsample(A_rec).
AnomalyMap fuse_anomaly_map(const AnomalyMap& recon_grid, const Tensor* m_pred, int64_t image_h, int64_t image_w);

/// Mean of the ceil(0.01 * count) largest values.
double image_score(const AnomalyMap& map);
double top_fraction_mean(const Tensor& values, double fraction);

} // namespace inpad
