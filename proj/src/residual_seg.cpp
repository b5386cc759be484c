// SPDX-License-Identifier: Apache-2.0
#include "inpad/residual_seg.hpp"

#include <cmath>
#include <stdexcept>

namespace inpad {

FeatureResidual feature_residual(const std::vector<TokenGrid>& enc_groups,
                                 const std::vector<TokenGrid>& dec_groups) {
    if (enc_groups.empty() || enc_groups.size() != dec_groups.size()) {
        throw std::invalid_argument("feature_residual: group count mismatch");
    }
    const int64_t n = enc_groups[0].n(), c = enc_groups[0].c();
    FeatureResidual res;
    res.h = enc_groups[0].h;
    res.w = enc_groups[0].w;
    res.values = Tensor(n, c);
    const double inv_l = 1.0 / static_cast<double>(enc_groups.size());
    for (size_t g = 0; g < enc_groups.size(); ++g) {
        const Tensor& e = enc_groups[g].tokens;
        const Tensor& d = dec_groups[g].tokens;
        check_same_shape(e, d, "feature_residual");
        for (int64_t i = 0; i < n; ++i) {
            const double cs = cosine(e.data() + i * c, d.data() + i * c, c, Tape::kNormEps);
            for (int64_t k = 0; k < c; ++k) {
                res.values(i, k) += inv_l * (1.0 - cs) * std::fabs(e(i, k) - d(i, k));
            }
        }
    }
    res.gradient_stopped = true;
    return res;
}

Var feature_residual(Tape& tape, const std::vector<Var>& enc_groups, const std::vector<Var>& dec_groups) {
    if (enc_groups.empty() || enc_groups.size() != dec_groups.size()) {
        throw std::invalid_argument("feature_residual: group count mismatch");
    }
    std::vector<Var> terms;
    for (size_t g = 0; g < enc_groups.size(); ++g) {
        terms.push_back(tape.residual_rows(enc_groups[g], dec_groups[g]));
    }
    return tape.affine(tape.add_n(terms), 1.0 / static_cast<double>(terms.size()), 0.0);
}

namespace {

int64_t half_channels(int64_t c, int64_t div) {
    const int64_t v = c / div;
    if (v < 1) throw std::invalid_argument("SegHeadParams: channel width too small for plan C -> C/2 -> C/4 -> 1");
    return v;
}

} // namespace

SegHeadParams SegHeadParams::seeded(int64_t c, Rng& rng) {
    SegHeadParams p;
    p.in_channels = c;
    const int64_t c2 = half_channels(c, 2);
    const int64_t c4 = half_channels(c, 4);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(c * 16));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(c2 * 16));
    const double s3 = 1.0 / std::sqrt(static_cast<double>(c4 * 9));
    p.deconv1_w = Param("seg.deconv1_w", rng.gaussian_tensor(c, c2 * 16, 0.0, s1));
    p.deconv1_b = Param("seg.deconv1_b", Tensor::zeros(1, c2));
    p.deconv2_w = Param("seg.deconv2_w", rng.gaussian_tensor(c2, c4 * 16, 0.0, s2));
    p.deconv2_b = Param("seg.deconv2_b", Tensor::zeros(1, c4));
    p.conv_w = Param("seg.conv_w", rng.gaussian_tensor(1, c4 * 9, 0.0, s3));
    p.conv_b = Param("seg.conv_b", Tensor::zeros(1, 1));
    return p;
}

SegHeadParams SegHeadParams::zeros(int64_t c) {
    SegHeadParams p;
    p.in_channels = c;
    const int64_t c2 = half_channels(c, 2);
    const int64_t c4 = half_channels(c, 4);
    p.deconv1_w = Param("seg.deconv1_w", Tensor::zeros(c, c2 * 16));
    p.deconv1_b = Param("seg.deconv1_b", Tensor::zeros(1, c2));
    p.deconv2_w = Param("seg.deconv2_w", Tensor::zeros(c2, c4 * 16));
    p.deconv2_b = Param("seg.deconv2_b", Tensor::zeros(1, c4));
    p.conv_w = Param("seg.conv_w", Tensor::zeros(1, c4 * 9));
    p.conv_b = Param("seg.conv_b", Tensor::zeros(1, 1));
    return p;
}

std::vector<Param*> SegHeadParams::params() {
    return {&deconv1_w, &deconv1_b, &deconv2_w, &deconv2_b, &conv_w, &conv_b};
}

Var seg_forward(Tape& tape, Var residual, int64_t h, int64_t w, SegHeadParams& head, int64_t image_h,
                int64_t image_w) {
    const int64_t c = head.in_channels;
    if (tape.value(residual).cols() != c || tape.value(residual).rows() != h * w) {
        throw std::invalid_argument("seg_forward: residual shape mismatch");
    }
    const int64_t c2 = c / 2;
    const int64_t c4 = c / 4;
    Var x = tape.tokens_to_chw(residual, h, w);
    // kernel 4, stride 2, pad 1: exact x2 upsampling per stage
    x = tape.gelu(tape.conv_transpose2d(x, tape.param(head.deconv1_w), tape.param(head.deconv1_b), c, h, w, c2,
                                        4, 4, 2, 1));
    x = tape.gelu(tape.conv_transpose2d(x, tape.param(head.deconv2_w), tape.param(head.deconv2_b), c2, 2 * h,
                                        2 * w, c4, 4, 4, 2, 1));
    x = tape.conv2d(x, tape.param(head.conv_w), tape.param(head.conv_b), c4, 4 * h, 4 * w, 1, 3, 3, 1, 1);
    x = tape.upsample_bilinear(x, 1, 4 * h, 4 * w, image_h, image_w);
    return tape.reshape(tape.sigmoid(x), image_h, image_w);
}

Tensor seg_forward(const FeatureResidual& residual, const SegHeadParams& head, int64_t image_h, int64_t image_w) {
    Tape tape;
    SegHeadParams& p = const_cast<SegHeadParams&>(head);
    Var out = seg_forward(tape, tape.leaf(residual.values), residual.h, residual.w, p, image_h, image_w);
    return tape.value(out);
}

double dice_loss(const Tensor& pred, const Tensor& gt) {
    check_same_shape(pred, gt, "dice_loss");
    double inter = 0.0, denom = 0.0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * gt[i];
        denom += pred[i] * pred[i] + gt[i] * gt[i];
    }
    if (denom == 0.0) return 0.0;
    return 1.0 - 2.0 * inter / denom;
}

} // namespace inpad
