// SPDX-License-Identifier: Apache-2.0
#include "inpad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "inpad/autograd.hpp"

namespace inpad {

AnomalyMap recon_error_map(const std::vector<TokenGrid>& enc_groups, const std::vector<TokenGrid>& dec_groups) {
    if (enc_groups.empty() || enc_groups.size() != dec_groups.size()) {
        throw std::invalid_argument("recon_error_map: group count mismatch");
    }
    const int64_t n = enc_groups[0].n(), c = enc_groups[0].c();
    AnomalyMap map;
    map.resolution = MapResolution::Grid;
    map.scores = Tensor(enc_groups[0].h, enc_groups[0].w);
    const double inv_l = 1.0 / static_cast<double>(enc_groups.size());
    for (size_t g = 0; g < enc_groups.size(); ++g) {
        const Tensor& e = enc_groups[g].tokens;
        const Tensor& d = dec_groups[g].tokens;
        check_same_shape(e, d, "recon_error_map");
        for (int64_t i = 0; i < n; ++i) {
            const double cs = cosine(e.data() + i * c, d.data() + i * c, c, Tape::kNormEps);
            double sq = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                const double diff = e(i, k) - d(i, k);
                sq += diff * diff;
            }
            map.scores[i] += inv_l * 0.5 * ((1.0 - cs) + std::sqrt(sq));
        }
    }
    return map;
}

Tensor upsample_bilinear_map(const Tensor& map, int64_t out_h, int64_t out_w) {
    Tape tape;
    Var x = tape.leaf(Tensor::from_vector(1, map.size(), map.vec()));
    Var up = tape.upsample_bilinear(x, 1, map.rows(), map.cols(), out_h, out_w);
    return Tensor::from_vector(out_h, out_w, tape.value(up).vec());
}

AnomalyMap fuse_anomaly_map(const AnomalyMap& recon_grid, const Tensor* m_pred, int64_t image_h, int64_t image_w) {
    AnomalyMap out;
    out.resolution = MapResolution::Image;
    out.scores = (recon_grid.scores.rows() == image_h && recon_grid.scores.cols() == image_w)
                     ? recon_grid.scores
                     : upsample_bilinear_map(recon_grid.scores, image_h, image_w);
    if (m_pred != nullptr) {
        if (m_pred->rows() != image_h || m_pred->cols() != image_w) {
            throw std::invalid_argument("fuse_anomaly_map: prediction must be at image resolution");
        }
        for (int64_t i = 0; i < out.scores.size(); ++i) {
            out.scores[i] = 0.5 * (out.scores[i] + (*m_pred)[i]);
        }
    }
    return out;
}

double top_fraction_mean(const Tensor& values, double fraction) {
    if (values.size() == 0) throw std::invalid_argument("top_fraction_mean: empty map");
    const int64_t k = static_cast<int64_t>(
        std::ceil(fraction * static_cast<double>(values.size())));
    const int64_t count = std::max<int64_t>(1, k);
    std::vector<double> v = values.vec();
    std::nth_element(v.begin(), v.begin() + (count - 1), v.end(), std::greater<double>());
    double s = 0.0;
    for (int64_t i = 0; i < count; ++i) s += v[static_cast<size_t>(i)];
    return s / static_cast<double>(count);
}

double image_score(const AnomalyMap& map) { return top_fraction_mean(map.scores, 0.01); }

} // namespace inpad
