// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inpad/inp_extractor.hpp"
#include "test_util.hpp"

using namespace inpad;
using test::fd_max_rel_error;
using test::random_tensor;

namespace {

double plain_cos(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

std::vector<double> row_of(const Tensor& t, int64_t i) {
    std::vector<double> v(static_cast<size_t>(t.cols()));
    for (int64_t j = 0; j < t.cols(); ++j) v[static_cast<size_t>(j)] = t(i, j);
    return v;
}

} // namespace

TEST_CASE("zero queries attend uniformly: identity projections, zero tokens") {
    // F_Q rows (1,0) and (0,1); T = 0 -> scores all zero -> uniform softmax
    Tensor f_q = Tensor::from_vector(2, 2, {1.0, 0.0, 0.0, 1.0});
    Tensor tokens = Tensor::zeros(1, 2);
    ExtractorParams params = ExtractorParams::identity_no_ffn(2);
    Tensor p = extract_inps(f_q, tokens, params);
    REQUIRE(p.rows() == 1);
    REQUIRE(p.cols() == 2);
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("extract_inps matches an explicit softmax cross-attention oracle") {
    const int64_t m = 2, n = 4, c = 3;
    Rng rng(21);
    Tensor f_q = random_tensor(n, c, rng);
    Tensor tokens = random_tensor(m, c, rng, 0.5);
    ExtractorParams params = ExtractorParams::seeded(c, rng);
    for (int64_t i = 0; i < c; ++i) {
        params.ffn_b2.value(0, i) = 0.01 * static_cast<double>(i);
    }
    const Tensor p = extract_inps(f_q, tokens, params);

    // oracle: raw loops, explicit softmax, exact gelu
    auto matv = [&](const Tensor& a, const Tensor& w) {
        Tensor out(a.rows(), w.cols());
        for (int64_t i = 0; i < a.rows(); ++i)
            for (int64_t j = 0; j < w.cols(); ++j) {
                double s = 0.0;
                for (int64_t k = 0; k < a.cols(); ++k) s += a(i, k) * w(k, j);
                out(i, j) = s;
            }
        return out;
    };
    Tensor q = matv(tokens, params.wq.value);
    Tensor k = matv(f_q, params.wk.value);
    Tensor v = matv(f_q, params.wv.value);
    Tensor t_prime(m, c);
    for (int64_t i = 0; i < m; ++i) {
        std::vector<double> scores(static_cast<size_t>(n));
        double mx = -1e300;
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t kk = 0; kk < c; ++kk) s += q(i, kk) * k(j, kk);
            scores[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(c));
            mx = std::max(mx, scores[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            z += s;
        }
        for (int64_t kk = 0; kk < c; ++kk) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += scores[static_cast<size_t>(j)] / z * v(j, kk);
            t_prime(i, kk) = acc + tokens(i, kk);
        }
    }
    Tensor hidden = matv(t_prime, params.ffn_w1.value);
    for (int64_t i = 0; i < hidden.size(); ++i) {
        const double x = hidden[i] + params.ffn_b1.value(0, i % hidden.cols());
        hidden[i] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
    Tensor expected = matv(hidden, params.ffn_w2.value);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j)
            expected(i, j) += params.ffn_b2.value(0, j) + t_prime(i, j);

    for (int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(expected[i]).epsilon(1e-10));
}

TEST_CASE("extract_inps output shape is M x C for any N") {
    Rng rng(22);
    ExtractorParams params = ExtractorParams::seeded(5, rng);
    Tensor tokens = random_tensor(3, 5, rng);
    for (int64_t n : {1, 4, 9, 36}) {
        Tensor f_q = random_tensor(n, 5, rng);
        const Tensor p = extract_inps(f_q, tokens, params);
        CHECK(p.rows() == 3);
        CHECK(p.cols() == 5);
    }
}

TEST_CASE("hard coherence loss is zero when every token equals a prototype") {
    Tensor inps = Tensor::from_vector(2, 3, {1.0, 0.5, -0.25, -1.0, 2.0, 0.75});
    Tensor f_q(4, 3);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) f_q(i, j) = inps(i % 2, j);
    const CoherenceResult r = coherence_loss_hard(f_q, inps);
    CHECK(std::fabs(r.loss) <= 1e-9);
}

TEST_CASE("hard coherence loss is one for a single orthogonal token") {
    Tensor f_q = Tensor::from_vector(1, 2, {1.0, 0.0});
    Tensor inps = Tensor::from_vector(2, 2, {0.0, 1.0, 0.0, -3.0});
    const CoherenceResult r = coherence_loss_hard(f_q, inps);
    CHECK(r.loss == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("hard coherence matches an exhaustive pairwise oracle") {
    Rng rng(23);
    Tensor f_q = random_tensor(5, 4, rng);
    Tensor inps = random_tensor(3, 4, rng);
    const CoherenceResult r = coherence_loss_hard(f_q, inps);
    double expected = 0.0;
    for (int64_t i = 0; i < 5; ++i) {
        double best = 1e300;
        for (int64_t mth = 0; mth < 3; ++mth) {
            best = std::min(best, 1.0 - plain_cos(row_of(f_q, i), row_of(inps, mth)));
        }
        CHECK(r.distances(i, 0) == doctest::Approx(best).epsilon(1e-10));
        expected += best;
    }
    CHECK(r.loss == doctest::Approx(expected / 5.0).epsilon(1e-10));
}

TEST_CASE("soft coherence with one prototype gives unit weights") {
    Tensor inps = Tensor::from_vector(1, 3, {0.4, -0.2, 1.0});
    Tensor f_q(3, 3);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) f_q(i, j) = inps(0, j);
    const CoherenceResult r = coherence_loss_soft(f_q, inps);
    for (int64_t i = 0; i < 3; ++i) CHECK(r.weights(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(r.loss) <= 1e-9);
}

TEST_CASE("equal-cosine token splits its soft weights evenly") {
    Tensor inps = Tensor::from_vector(2, 2, {1.0, 0.0, 0.0, 1.0});
    Tensor f_q = Tensor::from_vector(1, 2, {1.0, 1.0});
    const CoherenceResult r = coherence_loss_soft(f_q, inps);
    CHECK(r.weights(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(r.weights(0, 1) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("soft coherence matches a step-by-step numeric oracle") {
    Rng rng(24);
    Tensor f_q = random_tensor(3, 4, rng);
    Tensor inps = random_tensor(2, 4, rng);
    const CoherenceResult r = coherence_loss_soft(f_q, inps);

    Tensor recon(3, 4);
    for (int64_t i = 0; i < 3; ++i) {
        double w0 = std::exp(plain_cos(row_of(f_q, i), row_of(inps, 0)));
        double w1 = std::exp(plain_cos(row_of(f_q, i), row_of(inps, 1)));
        const double z = w0 + w1;
        w0 /= z;
        w1 /= z;
        CHECK(r.weights(i, 0) == doctest::Approx(w0).epsilon(1e-10));
        CHECK(r.weights(i, 1) == doctest::Approx(w1).epsilon(1e-10));
        for (int64_t j = 0; j < 4; ++j) recon(i, j) = w0 * inps(0, j) + w1 * inps(1, j);
    }
    const double expected = 1.0 - plain_cos(f_q.vec(), recon.vec());
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("soft weight rows sum to one and stay positive across seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(1, 12));
        const int64_t m = 1 + static_cast<int64_t>(rng.uniform_int(1, 6));
        Tensor f_q = random_tensor(n, 5, rng);
        Tensor inps = random_tensor(m, 5, rng);
        const CoherenceResult r = coherence_loss_soft(f_q, inps);
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                CHECK(r.weights(i, j) > 0.0);
                s += r.weights(i, j);
            }
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("both coherence losses live in [0, 2] and ignore prototype order") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed * 3 + 1);
        Tensor f_q = random_tensor(6, 4, rng);
        Tensor inps = random_tensor(4, 4, rng);
        const double hard = coherence_loss_hard(f_q, inps).loss;
        const double soft = coherence_loss_soft(f_q, inps).loss;
        CHECK(hard >= 0.0);
        CHECK(hard <= 2.0);
        CHECK(soft >= 0.0);
        CHECK(soft <= 2.0);

        Tensor permuted(4, 4);
        const int64_t perm[4] = {2, 0, 3, 1};
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t j = 0; j < 4; ++j) permuted(i, j) = inps(perm[i], j);
        CHECK(coherence_loss_hard(f_q, permuted).loss == doctest::Approx(hard).epsilon(1e-10));
        CHECK(coherence_loss_soft(f_q, permuted).loss == doctest::Approx(soft).epsilon(1e-10));
    }
}

TEST_CASE("coherence losses match finite differences with respect to prototypes") {
    Rng rng(25);
    Tensor f_q = random_tensor(5, 3, rng);
    Tensor inps = random_tensor(3, 3, rng);

    auto hard_loss = [&]() {
        Tape t;
        return t.value(coherence_loss_hard(t, t.leaf(f_q), t.leaf(inps)))[0];
    };
    {
        Tape t;
        Var p = t.leaf(inps);
        Var loss = coherence_loss_hard(t, t.leaf(f_q), p);
        t.backward(loss);
        CHECK(fd_max_rel_error(inps, t.grad(p), hard_loss) < 1e-3);
    }
    auto soft_loss = [&]() {
        Tape t;
        return t.value(coherence_loss_soft(t, t.leaf(f_q), t.leaf(inps)))[0];
    };
    {
        Tape t;
        Var p = t.leaf(inps);
        Var loss = coherence_loss_soft(t, t.leaf(f_q), p);
        t.backward(loss);
        CHECK(fd_max_rel_error(inps, t.grad(p), soft_loss) < 1e-3);
    }
}

TEST_CASE("gradient reaches the extractor parameters through extract_inps") {
    Rng rng(26);
    const int64_t c = 4;
    Tensor f_q = random_tensor(6, c, rng);
    Tensor token_values = random_tensor(2, c, rng, 0.5);
    ExtractorParams params = ExtractorParams::seeded(c, rng);
    LearnableTokens tokens;
    tokens.tokens = Param("inp.tokens", token_values);

    auto loss = [&]() {
        Tape t;
        Var p = extract_inps(t, t.leaf(f_q), t.param(tokens.tokens), params);
        return t.value(coherence_loss_soft(t, t.leaf(f_q), p))[0];
    };
    Tape t;
    Var p = extract_inps(t, t.leaf(f_q), t.param(tokens.tokens), params);
    t.backward(coherence_loss_soft(t, t.leaf(f_q), p));
    CHECK(fd_max_rel_error(tokens.tokens.value, tokens.tokens.grad, loss) < 1e-3);
    CHECK(fd_max_rel_error(params.wq.value, params.wq.grad, loss) < 1e-3);
    CHECK(fd_max_rel_error(params.ffn_w2.value, params.ffn_w2.grad, loss) < 1e-3);
}

TEST_CASE("distance map is zero for perfectly represented tokens") {
    Tensor inps = Tensor::from_vector(2, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    TokenGrid grid;
    grid.h = 2;
    grid.w = 2;
    grid.tokens = Tensor(4, 3);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) grid.tokens(i, j) = inps(i % 2, j);
    const AnomalyMap hard = inp_distance_map(grid, inps, CoherenceMode::Hard);
    for (int64_t i = 0; i < 4; ++i) CHECK(std::fabs(hard.scores[i]) <= 1e-9);
}

TEST_CASE("a single outlier token dominates the distance map") {
    Tensor inps = Tensor::from_vector(1, 2, {1.0, 0.0});
    TokenGrid grid;
    grid.h = 2;
    grid.w = 2;
    grid.tokens = Tensor(4, 2);
    for (int64_t i = 0; i < 3; ++i) grid.tokens(i, 0) = 2.0; // aligned with the prototype
    grid.tokens(3, 1) = 5.0;                                 // orthogonal outlier
    const AnomalyMap map = inp_distance_map(grid, inps, CoherenceMode::Hard);
    for (int64_t i = 0; i < 3; ++i) CHECK(map.scores[3] > map.scores[i]);
}

TEST_CASE("hard distance map matches the exhaustive min-distance oracle") {
    Rng rng(27);
    TokenGrid grid;
    grid.h = 3;
    grid.w = 2;
    grid.tokens = random_tensor(6, 4, rng);
    Tensor inps = random_tensor(3, 4, rng);
    const AnomalyMap map = inp_distance_map(grid, inps, CoherenceMode::Hard);
    for (int64_t i = 0; i < 6; ++i) {
        double best = 1e300;
        for (int64_t mth = 0; mth < 3; ++mth) {
            best = std::min(best, 1.0 - plain_cos(row_of(grid.tokens, i), row_of(inps, mth)));
        }
        CHECK(map.scores[i] == doctest::Approx(best).epsilon(1e-10));
    }
}

TEST_CASE("assign_tokens maps exact prototype copies to their own index") {
    Tensor inps = Tensor::from_vector(3, 2, {1.0, 0.0, 0.0, 1.0, -1.0, 0.0});
    Tensor f_q = inps;
    const auto assign = assign_tokens(f_q, inps);
    CHECK(assign[0] == 0);
    CHECK(assign[1] == 1);
    CHECK(assign[2] == 2);
}

TEST_CASE("collapsed assignment yields shortcut fraction 1") {
    Tensor inps = Tensor::from_vector(2, 2, {1.0, 0.0, 0.0, 1.0});
    Tensor f_q(5, 2);
    for (int64_t i = 0; i < 5; ++i) f_q(i, 0) = 1.0 + 0.1 * static_cast<double>(i);
    const auto assign = assign_tokens(f_q, inps);
    for (int64_t a : assign) CHECK(a == 0);
    CHECK(shortcut_collapse_fraction(assign, 2) == doctest::Approx(1.0));
}

TEST_CASE("assign_tokens matches the exhaustive argmin oracle and is scale invariant") {
    Rng rng(28);
    Tensor f_q = random_tensor(8, 5, rng);
    Tensor inps = random_tensor(4, 5, rng);
    const auto assign = assign_tokens(f_q, inps);
    for (int64_t i = 0; i < 8; ++i) {
        double best = 1e300;
        int64_t arg = 0;
        for (int64_t mth = 0; mth < 4; ++mth) {
            const double d = 1.0 - plain_cos(row_of(f_q, i), row_of(inps, mth));
            if (d < best) {
                best = d;
                arg = mth;
            }
        }
        CHECK(assign[static_cast<size_t>(i)] == arg);
    }
    Tensor scaled = f_q;
    for (int64_t i = 0; i < 8; ++i) {
        const double s = 0.1 + 3.0 * rng.uniform();
        for (int64_t j = 0; j < 5; ++j) scaled(i, j) *= s;
    }
    const auto assign_scaled = assign_tokens(scaled, inps);
    for (size_t i = 0; i < assign.size(); ++i) CHECK(assign[i] == assign_scaled[i]);
}
