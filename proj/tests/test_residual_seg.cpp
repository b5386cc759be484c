// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inpad/residual_seg.hpp"
#include "inpad/trainer.hpp"
#include "test_util.hpp"

using namespace inpad;
using test::fd_max_rel_error;
using test::random_tensor;

namespace {

TokenGrid grid_of(const Tensor& t, int64_t h, int64_t w) {
    TokenGrid g;
    g.tokens = t;
    g.h = h;
    g.w = w;
    return g;
}

double plain_cos(const Tensor& a, int64_t i, const Tensor& b, int64_t j, int64_t c) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t k = 0; k < c; ++k) {
        dot += a(i, k) * b(j, k);
        na += a(i, k) * a(i, k);
        nb += b(j, k) * b(j, k);
    }
    return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

} // namespace

TEST_CASE("feature residual vanishes when groups agree") {
    Rng rng(51);
    Tensor t = random_tensor(4, 3, rng);
    const FeatureResidual r = feature_residual({grid_of(t, 2, 2)}, {grid_of(t, 2, 2)});
    for (int64_t i = 0; i < r.values.size(); ++i) CHECK(std::fabs(r.values[i]) <= 1e-12);
    CHECK(r.gradient_stopped);
}

TEST_CASE("antipodal unit-norm cell yields four times the absolute feature") {
    Tensor enc = Tensor::zeros(2, 2);
    enc(0, 0) = 1.0; // unit norm row
    enc(1, 0) = 0.6;
    enc(1, 1) = 0.8;
    Tensor dec = enc * -1.0;
    const FeatureResidual r = feature_residual({grid_of(enc, 1, 2)}, {grid_of(dec, 1, 2)});
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 2; ++j) {
            CHECK(r.values(i, j) == doctest::Approx(4.0 * std::fabs(enc(i, j))).epsilon(1e-9));
        }
    }
}

TEST_CASE("feature residual matches the per-cell hand oracle over two groups") {
    Rng rng(52);
    std::vector<TokenGrid> enc{grid_of(random_tensor(4, 3, rng), 2, 2), grid_of(random_tensor(4, 3, rng), 2, 2)};
    std::vector<TokenGrid> dec{grid_of(random_tensor(4, 3, rng), 2, 2), grid_of(random_tensor(4, 3, rng), 2, 2)};
    const FeatureResidual r = feature_residual(enc, dec);
    for (int64_t i = 0; i < 4; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            double expected = 0.0;
            for (int g = 0; g < 2; ++g) {
                const double cs = plain_cos(enc[g].tokens, i, dec[g].tokens, i, 3);
                expected += 0.5 * (1.0 - cs) * std::fabs(enc[g].tokens(i, j) - dec[g].tokens(i, j));
            }
            CHECK(r.values(i, j) == doctest::Approx(expected).epsilon(1e-10));
        }
    }
    // entrywise nonnegative
    for (int64_t i = 0; i < r.values.size(); ++i) CHECK(r.values[i] >= 0.0);
}

TEST_CASE("zero residual through a zero head gives a constant 0.5 map") {
    SegHeadParams head = SegHeadParams::zeros(8);
    FeatureResidual res;
    res.h = 2;
    res.w = 2;
    res.values = Tensor::zeros(4, 8);
    const Tensor pred = seg_forward(res, head, 14, 14);
    REQUIRE(pred.rows() == 14);
    REQUIRE(pred.cols() == 14);
    for (int64_t i = 0; i < pred.size(); ++i) CHECK(pred[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("seg head output is image-sized for any grid input") {
    Rng rng(53);
    SegHeadParams head = SegHeadParams::seeded(8, rng);
    for (int64_t grid : {2, 3, 4}) {
        FeatureResidual res;
        res.h = grid;
        res.w = grid;
        res.values = random_tensor(grid * grid, 8, rng, 0.2);
        const Tensor pred = seg_forward(res, head, grid * 7, grid * 7);
        CHECK(pred.rows() == grid * 7);
        CHECK(pred.cols() == grid * 7);
        for (int64_t i = 0; i < pred.size(); ++i) {
            CHECK(pred[i] >= 0.0);
            CHECK(pred[i] <= 1.0);
        }
    }
}

namespace {

// independent seg-head oracle: gather-style transposed convs, 3x3 conv,
// half-pixel bilinear, sigmoid
std::vector<std::vector<double>> oracle_deconv(const std::vector<std::vector<double>>& x, int64_t h, int64_t w,
                                               const Tensor& weight, const Tensor& bias, int64_t in_c,
                                               int64_t out_c) {
    const int64_t oh = 2 * h, ow = 2 * w;
    std::vector<std::vector<double>> out(static_cast<size_t>(out_c),
                                         std::vector<double>(static_cast<size_t>(oh * ow), 0.0));
    for (int64_t oc = 0; oc < out_c; ++oc) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double acc = bias(0, oc);
                for (int64_t ic = 0; ic < in_c; ++ic) {
                    for (int64_t ky = 0; ky < 4; ++ky) {
                        for (int64_t kx = 0; kx < 4; ++kx) {
                            const int64_t sy = oy + 1 - ky;
                            const int64_t sx = ox + 1 - kx;
                            if (sy % 2 != 0 || sx % 2 != 0) continue;
                            const int64_t iy = sy / 2, ix = sx / 2;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x[static_cast<size_t>(ic)][static_cast<size_t>(iy * w + ix)] *
                                   weight(ic, (oc * 4 + ky) * 4 + kx);
                        }
                    }
                }
                out[static_cast<size_t>(oc)][static_cast<size_t>(oy * ow + ox)] = acc;
            }
        }
    }
    return out;
}

void oracle_gelu(std::vector<std::vector<double>>& planes) {
    for (auto& plane : planes) {
        for (double& v : plane) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
}

} // namespace

TEST_CASE("seg head matches a composed conv/upsample oracle") {
    Rng rng(54);
    const int64_t c = 4, h = 2, w = 2;
    SegHeadParams head = SegHeadParams::seeded(c, rng);
    head.deconv1_b.value(0, 0) = 0.05;
    head.deconv2_b.value(0, 0) = -0.03;
    head.conv_b.value(0, 0) = 0.02;
    FeatureResidual res;
    res.h = h;
    res.w = w;
    res.values = random_tensor(h * w, c, rng, 0.5);
    const Tensor pred = seg_forward(res, head, 14, 14);

    // tokens -> channel planes
    std::vector<std::vector<double>> planes(static_cast<size_t>(c), std::vector<double>(static_cast<size_t>(h * w)));
    for (int64_t n = 0; n < h * w; ++n)
        for (int64_t k = 0; k < c; ++k) planes[static_cast<size_t>(k)][static_cast<size_t>(n)] = res.values(n, k);

    auto s1 = oracle_deconv(planes, h, w, head.deconv1_w.value, head.deconv1_b.value, c, c / 2);
    oracle_gelu(s1);
    auto s2 = oracle_deconv(s1, 2 * h, 2 * w, head.deconv2_w.value, head.deconv2_b.value, c / 2, c / 4);
    oracle_gelu(s2);

    // final 3x3 conv, stride 1 pad 1, single output channel
    const int64_t fh = 4 * h, fw = 4 * w;
    std::vector<double> conv_out(static_cast<size_t>(fh * fw), 0.0);
    for (int64_t oy = 0; oy < fh; ++oy) {
        for (int64_t ox = 0; ox < fw; ++ox) {
            double acc = head.conv_b.value(0, 0);
            for (int64_t ic = 0; ic < c / 4; ++ic) {
                for (int64_t ky = 0; ky < 3; ++ky) {
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        const int64_t iy = oy - 1 + ky, ix = ox - 1 + kx;
                        if (iy < 0 || iy >= fh || ix < 0 || ix >= fw) continue;
                        acc += s2[static_cast<size_t>(ic)][static_cast<size_t>(iy * fw + ix)] *
                               head.conv_w.value(0, (ic * 3 + ky) * 3 + kx);
                    }
                }
            }
            conv_out[static_cast<size_t>(oy * fw + ox)] = acc;
        }
    }

    // half-pixel bilinear to 14x14 then sigmoid
    for (int64_t y = 0; y < 14; ++y) {
        const double sy = std::clamp((y + 0.5) * fh / 14.0 - 0.5, 0.0, static_cast<double>(fh - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(sy));
        const int64_t y1 = std::min(y0 + 1, fh - 1);
        const double fy = sy - y0;
        for (int64_t x = 0; x < 14; ++x) {
            const double sx = std::clamp((x + 0.5) * fw / 14.0 - 0.5, 0.0, static_cast<double>(fw - 1));
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const int64_t x1 = std::min(x0 + 1, fw - 1);
            const double fx = sx - x0;
            const double v = (1.0 - fy) * ((1.0 - fx) * conv_out[static_cast<size_t>(y0 * fw + x0)] +
                                           fx * conv_out[static_cast<size_t>(y0 * fw + x1)]) +
                             fy * ((1.0 - fx) * conv_out[static_cast<size_t>(y1 * fw + x0)] +
                                   fx * conv_out[static_cast<size_t>(y1 * fw + x1)]);
            const double expected = 1.0 / (1.0 + std::exp(-v));
            CHECK(pred(y, x) == doctest::Approx(expected).epsilon(1e-10));
        }
    }
}

TEST_CASE("dice loss closed-form cases") {
    Tensor a = Tensor::from_vector(2, 2, {1.0, 0.0, 1.0, 0.0});
    CHECK(dice_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor b = Tensor::from_vector(2, 2, {0.0, 1.0, 0.0, 1.0});
    CHECK(dice_loss(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor p = Tensor::from_vector(1, 2, {0.5, 0.5});
    Tensor g = Tensor::from_vector(1, 2, {1.0, 0.0});
    CHECK(std::fabs(dice_loss(p, g) - 1.0 / 3.0) <= 1e-9);

    CHECK(dice_loss(Tensor::zeros(2, 2), Tensor::zeros(2, 2)) == 0.0);
    // range on random inputs
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor pred(3, 3);
        Tensor gt(3, 3);
        for (int64_t i = 0; i < 9; ++i) {
            pred[i] = rng.uniform();
            gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        }
        const double d = dice_loss(pred, gt);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

namespace {

RunConfig tiny_config(uint64_t seed) {
    RunConfig cfg = desk_config(seed);
    cfg.embed_dim = 8;
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 2;
    cfg.encoder_groups = {{1}, {2}};
    cfg.decoder_groups = {{1}, {2}};
    cfg.num_inps = 2;
    cfg.resize = 14;
    cfg.crop = 14;
    cfg.batch_size = 2;
    return cfg;
}

std::vector<PseudoAnomalySample> tiny_batch(uint64_t seed) {
    Rng rng(seed);
    std::vector<PseudoAnomalySample> batch;
    for (int i = 0; i < 2; ++i) {
        ImageTensor img(14, 14);
        for (auto& v : img.pixels) v = rng.uniform();
        PseudoAnomalySample s;
        s.image = img;
        s.mask = Mask(14, 14);
        for (int64_t y = 4; y < 8; ++y)
            for (int64_t x = 3; x < 9; ++x) s.mask.at(y, x) = 1;
        batch.push_back(std::move(s));
    }
    return batch;
}

} // namespace

TEST_CASE("residual training step leaves every non-head parameter untouched") {
    const RunConfig cfg = tiny_config(3);
    Model model = Model::seeded(cfg);
    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = cfg.patch_size;
    enc_cfg.dim = cfg.embed_dim;
    enc_cfg.num_layers = cfg.encoder_layers;
    enc_cfg.seed = cfg.encoder_seed;
    ToyFrozenEncoder encoder(enc_cfg);

    std::vector<Tensor> before;
    for (Param* p : model.npm_params()) before.push_back(p->value);

    StableAdamW head_opt(model.head_params(), {});
    const double l_seg = residual_training_step(model, encoder, tiny_batch(4), head_opt, nullptr, true);
    CHECK(std::isfinite(l_seg));

    const auto npm = model.npm_params();
    for (size_t i = 0; i < npm.size(); ++i) {
        for (int64_t j = 0; j < npm[i]->value.size(); ++j) {
            CHECK(npm[i]->value[j] == before[i][j]);
            CHECK(npm[i]->grad[j] == 0.0);
        }
    }
    // the head itself must have moved
    double head_delta = 0.0;
    Model fresh = Model::seeded(cfg);
    const auto head_now = model.head_params();
    const auto head_init = fresh.head_params();
    for (size_t i = 0; i < head_now.size(); ++i) {
        for (int64_t j = 0; j < head_now[i]->value.size(); ++j) {
            head_delta += std::fabs(head_now[i]->value[j] - head_init[i]->value[j]);
        }
    }
    CHECK(head_delta > 0.0);
}

TEST_CASE("without stop-gradient the reconstruction stack receives updates") {
    const RunConfig cfg = tiny_config(5);
    Model model = Model::seeded(cfg);
    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = cfg.patch_size;
    enc_cfg.dim = cfg.embed_dim;
    enc_cfg.num_layers = cfg.encoder_layers;
    enc_cfg.seed = cfg.encoder_seed;
    ToyFrozenEncoder encoder(enc_cfg);

    std::vector<Tensor> before;
    for (Param* p : model.npm_params()) before.push_back(p->value);

    StableAdamW head_opt(model.head_params(), {});
    StableAdamW npm_opt(model.npm_params(), {});
    residual_training_step(model, encoder, tiny_batch(6), head_opt, &npm_opt, false);

    double delta = 0.0;
    const auto npm = model.npm_params();
    for (size_t i = 0; i < npm.size(); ++i) {
        for (int64_t j = 0; j < npm[i]->value.size(); ++j) {
            delta += std::fabs(npm[i]->value[j] - before[i][j]);
        }
    }
    CHECK(delta > 0.0);
}

TEST_CASE("L_seg decreases over 50 steps on a fixed synthetic batch") {
    const RunConfig cfg = tiny_config(7);
    Model model = Model::seeded(cfg);
    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = cfg.patch_size;
    enc_cfg.dim = cfg.embed_dim;
    enc_cfg.num_layers = cfg.encoder_layers;
    enc_cfg.seed = cfg.encoder_seed;
    ToyFrozenEncoder encoder(enc_cfg);

    const auto batch = tiny_batch(8);
    StableAdamW::Options opts;
    opts.lr = 5e-3;
    StableAdamW head_opt(model.head_params(), opts);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        const double l = residual_training_step(model, encoder, batch, head_opt, nullptr, true);
        if (step == 0) first = l;
        last = l;
    }
    CHECK(last < first);
}

TEST_CASE("seg head gradients match finite differences") {
    Rng rng(56);
    const int64_t c = 4;
    SegHeadParams head = SegHeadParams::seeded(c, rng);
    FeatureResidual res;
    res.h = 2;
    res.w = 2;
    res.values = random_tensor(4, c, rng, 0.4);
    Tensor gt(14, 14);
    for (int64_t y = 3; y < 8; ++y)
        for (int64_t x = 2; x < 10; ++x) gt(y, x) = 1.0;

    auto loss = [&]() {
        Tape t;
        Var pred = seg_forward(t, t.leaf(res.values), 2, 2, head, 14, 14);
        return t.value(t.dice_loss({pred}, {gt}))[0];
    };
    Tape t;
    Var pred = seg_forward(t, t.leaf(res.values), 2, 2, head, 14, 14);
    t.backward(t.dice_loss({pred}, {gt}));
    for (Param* p : head.params()) {
        CHECK(fd_max_rel_error(p->value, p->grad, loss) < 1e-3);
        p->zero_grad();
    }
}
