// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "inpad/encoder.hpp"
#include "test_util.hpp"

using namespace inpad;
using test::random_tensor;

namespace {

ImageTensor seeded_image(int64_t h, int64_t w, uint64_t seed) {
    Rng rng(seed);
    ImageTensor img(h, w);
    for (auto& v : img.pixels) v = rng.uniform();
    return img;
}

FeatureStack random_stack(int64_t layers, int64_t h, int64_t w, int64_t c, uint64_t seed) {
    Rng rng(seed);
    FeatureStack stack;
    stack.patch_size = 7;
    stack.extractor_tag = "random";
    for (int64_t l = 1; l <= layers; ++l) {
        TokenGrid g;
        g.tokens = random_tensor(h * w, c, rng);
        g.h = h;
        g.w = w;
        g.layer = l;
        stack.layers.push_back(std::move(g));
    }
    return stack;
}

} // namespace

TEST_CASE("extract_features produces 28x28 grids for 392x392 input at patch 14") {
    ToyEncoderConfig cfg;
    cfg.patch_size = 14;
    cfg.dim = 32;
    cfg.num_layers = 2;
    ToyFrozenEncoder enc(cfg);
    const FeatureStack stack = enc.extract(seeded_image(392, 392, 1));
    REQUIRE(stack.num_layers() == 2);
    for (const auto& layer : stack.layers) {
        CHECK(layer.h == 28);
        CHECK(layer.w == 28);
        CHECK(layer.n() == 784);
        CHECK(layer.c() == 32);
        CHECK(layer.tokens.all_finite());
    }
}

TEST_CASE("extract_features on a 28x28 image with patch 14 gives 2x2 grids") {
    ToyEncoderConfig cfg;
    cfg.patch_size = 14;
    cfg.dim = 16;
    cfg.num_layers = 2;
    ToyFrozenEncoder enc(cfg);
    const FeatureStack stack = enc.extract(seeded_image(28, 28, 2));
    REQUIRE(stack.num_layers() == 2);
    CHECK(stack.layers[0].h == 2);
    CHECK(stack.layers[0].w == 2);
    CHECK(stack.layers[0].n() == 4);
}

TEST_CASE("extract_features is bit-identical across calls") {
    ToyEncoderConfig cfg;
    cfg.patch_size = 7;
    cfg.dim = 16;
    cfg.num_layers = 4;
    ToyFrozenEncoder enc(cfg);
    const ImageTensor img = seeded_image(28, 28, 3);
    const FeatureStack a = enc.extract(img);
    const FeatureStack b = enc.extract(img);
    for (int64_t l = 0; l < a.num_layers(); ++l) {
        for (int64_t i = 0; i < a.layers[l].tokens.size(); ++i) {
            CHECK(a.layers[l].tokens[i] == b.layers[l].tokens[i]);
        }
    }
}

TEST_CASE("extract_features rejects dimensions not divisible by the patch size") {
    ToyEncoderConfig cfg;
    cfg.patch_size = 14;
    cfg.dim = 16;
    cfg.num_layers = 1;
    ToyFrozenEncoder enc(cfg);
    CHECK_THROWS_AS(enc.extract(seeded_image(30, 28, 4)), std::invalid_argument);
    CHECK_THROWS_AS(enc.extract(seeded_image(28, 30, 4)), std::invalid_argument);
}

TEST_CASE("named pretrained extractors are reported unavailable") {
    ToyEncoderConfig cfg;
    CHECK_THROWS_AS(make_extractor("dinov2-r", cfg, ""), ExtractorUnavailableError);
    CHECK_NOTHROW(make_extractor("toy", cfg, ""));
}

TEST_CASE("aggregate_group sums selected layers") {
    FeatureStack stack;
    stack.patch_size = 7;
    for (int l = 1; l <= 2; ++l) {
        TokenGrid g;
        g.tokens = Tensor::full(12, 3, 1.0);
        g.h = 4;
        g.w = 3;
        g.layer = l;
        stack.layers.push_back(g);
    }
    const TokenGrid sum = aggregate_group(stack, {1, 2});
    for (int64_t i = 0; i < sum.tokens.size(); ++i) CHECK(sum.tokens[i] == 2.0);

    const TokenGrid single = aggregate_group(stack, {2});
    for (int64_t i = 0; i < single.tokens.size(); ++i) CHECK(single.tokens[i] == 1.0);

    CHECK_THROWS_AS(aggregate_group(stack, {}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate_group(stack, {3}), std::out_of_range);
}

TEST_CASE("aggregate_group matches a brute-force elementwise-sum oracle") {
    const FeatureStack stack = random_stack(8, 3, 4, 5, 99);
    const std::vector<int> indices{3, 4, 5, 6};
    const TokenGrid agg = aggregate_group(stack, indices);
    for (int64_t i = 0; i < agg.tokens.rows(); ++i) {
        for (int64_t j = 0; j < agg.tokens.cols(); ++j) {
            double expected = 0.0;
            for (int idx : indices) expected += stack.layers[static_cast<size_t>(idx - 1)].tokens(i, j);
            CHECK(agg.tokens(i, j) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("aggregate_group is order-insensitive over its index set") {
    const FeatureStack stack = random_stack(6, 4, 4, 8, 17);
    const TokenGrid fwd = aggregate_group(stack, {1, 3, 5, 6});
    const TokenGrid rev = aggregate_group(stack, {6, 5, 3, 1});
    const TokenGrid mix = aggregate_group(stack, {5, 1, 6, 3});
    for (int64_t i = 0; i < fwd.tokens.size(); ++i) {
        const double scale = std::max(1.0, std::fabs(fwd.tokens[i]));
        CHECK(std::fabs(fwd.tokens[i] - rev.tokens[i]) / scale < 1e-6);
        CHECK(std::fabs(fwd.tokens[i] - mix.tokens[i]) / scale < 1e-6);
    }
}

TEST_CASE("identity-initialized bottleneck reproduces its input") {
    Rng rng(5);
    Tensor x = random_tensor(10, 6, rng);
    BottleneckParams p = BottleneckParams::identity(6);
    Tensor y = bottleneck_forward(x, p);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("bottleneck maps zero to zero when biases are zero") {
    Rng rng(6);
    BottleneckParams p = BottleneckParams::seeded(5, rng);
    Tensor x = Tensor::zeros(7, 5);
    Tensor y = bottleneck_forward(x, p);
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("bottleneck matches a hand-rolled dense-layer oracle") {
    Rng rng(7);
    BottleneckParams p = BottleneckParams::seeded(4, rng);
    // give biases nonzero values so the oracle covers them
    for (int64_t i = 0; i < 4; ++i) {
        p.b1.value(0, i) = 0.1 * static_cast<double>(i + 1);
        p.b2.value(0, i) = -0.05 * static_cast<double>(i + 1);
    }
    Tensor x = random_tensor(3, 4, rng);
    Tensor y = bottleneck_forward(x, p);

    for (int64_t r = 0; r < 3; ++r) {
        for (int64_t j = 0; j < 4; ++j) {
            double hidden[4];
            for (int64_t hcol = 0; hcol < 4; ++hcol) {
                double s = p.b1.value(0, hcol);
                for (int64_t k = 0; k < 4; ++k) s += x(r, k) * p.w1.value(k, hcol);
                hidden[hcol] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
            }
            double out = x(r, j) + p.b2.value(0, j);
            for (int64_t k = 0; k < 4; ++k) out += hidden[k] * p.w2.value(k, j);
            CHECK(y(r, j) == doctest::Approx(out).epsilon(1e-10));
        }
    }
}

TEST_CASE("bottleneck is differentiable with respect to its parameters") {
    Rng rng(8);
    BottleneckParams p = BottleneckParams::seeded(4, rng);
    Tensor x = random_tensor(5, 4, rng);
    auto loss = [&]() {
        Tape t;
        Var out = bottleneck_forward(t, t.leaf(x), p);
        return t.value(t.mean_all(t.mul(out, out)))[0];
    };
    Tape t;
    Var out = bottleneck_forward(t, t.leaf(x), p);
    t.backward(t.mean_all(t.mul(out, out)));
    for (Param* param : p.params()) {
        CHECK(test::fd_max_rel_error(param->value, param->grad, loss) < 1e-3);
        param->zero_grad();
    }
}

TEST_CASE("feature file round trip preserves every token bit-exactly") {
    ToyEncoderConfig cfg;
    cfg.patch_size = 7;
    cfg.dim = 16;
    cfg.num_layers = 3;
    ToyFrozenEncoder enc(cfg);
    const FeatureStack stack = enc.extract(seeded_image(28, 28, 9));

    const std::string dir = std::filesystem::temp_directory_path() / "inpad_feat_test";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/img0.feat";
    write_feature_file(path, stack);
    const FeatureStack loaded = read_feature_file(path);
    REQUIRE(loaded.num_layers() == stack.num_layers());
    CHECK(loaded.patch_size == stack.patch_size);
    CHECK(loaded.extractor_tag == stack.extractor_tag);
    for (int64_t l = 0; l < stack.num_layers(); ++l) {
        for (int64_t i = 0; i < stack.layers[l].tokens.size(); ++i) {
            CHECK(loaded.layers[l].tokens[i] == stack.layers[l].tokens[i]);
        }
    }

    PrecomputedFeatureLoader loader(dir, 7, 16, 3, "precomputed");
    loader.bind_image("img0");
    const FeatureStack via_loader = loader.extract(ImageTensor(28, 28));
    CHECK(via_loader.layers[0].tokens[0] == stack.layers[0].tokens[0]);
    std::filesystem::remove_all(dir);
}
