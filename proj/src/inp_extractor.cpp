// SPDX-License-Identifier: Apache-2.0
#include "inpad/inp_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace inpad {

ExtractorParams ExtractorParams::seeded(int64_t c, Rng& rng) {
    ExtractorParams p;
    const double ws = 1.0 / std::sqrt(static_cast<double>(c));
    p.wq = Param("extractor.wq", rng.gaussian_tensor(c, c, 0.0, ws));
    p.wk = Param("extractor.wk", rng.gaussian_tensor(c, c, 0.0, ws));
    p.wv = Param("extractor.wv", rng.gaussian_tensor(c, c, 0.0, ws));
    p.ffn_w1 = Param("extractor.ffn_w1", rng.gaussian_tensor(c, 4 * c, 0.0, ws));
    p.ffn_b1 = Param("extractor.ffn_b1", Tensor::zeros(1, 4 * c));
    p.ffn_w2 = Param("extractor.ffn_w2", rng.gaussian_tensor(4 * c, c, 0.0, 1.0 / std::sqrt(4.0 * static_cast<double>(c))));
    p.ffn_b2 = Param("extractor.ffn_b2", Tensor::zeros(1, c));
    return p;
}

ExtractorParams ExtractorParams::identity_no_ffn(int64_t c) {
    ExtractorParams p;
    p.wq = Param("extractor.wq", Tensor::identity(c));
    p.wk = Param("extractor.wk", Tensor::identity(c));
    p.wv = Param("extractor.wv", Tensor::identity(c));
    p.ffn_w1 = Param("extractor.ffn_w1", Tensor::zeros(c, 4 * c));
    p.ffn_b1 = Param("extractor.ffn_b1", Tensor::zeros(1, 4 * c));
    p.ffn_w2 = Param("extractor.ffn_w2", Tensor::zeros(4 * c, c));
    p.ffn_b2 = Param("extractor.ffn_b2", Tensor::zeros(1, c));
    return p;
}

std::vector<Param*> ExtractorParams::params() {
    return {&wq, &wk, &wv, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2};
}

Var extract_inps(Tape& tape, Var f_q, Var tokens, ExtractorParams& params) {
    const int64_t c = tape.value(tokens).cols();
    if (tape.value(f_q).cols() != c) {
        throw std::invalid_argument("extract_inps: token/feature channel mismatch");
    }
    Var q = tape.matmul(tokens, tape.param(params.wq));
    Var k = tape.matmul(f_q, tape.param(params.wk));
    Var v = tape.matmul(f_q, tape.param(params.wv));
    Var scores = tape.affine(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(c)), 0.0);
    Var attn = tape.matmul(tape.softmax_rows(scores), v);
    Var t_prime = tape.add(attn, tokens);
    Var hidden = tape.gelu(tape.add_rowvec(tape.matmul(t_prime, tape.param(params.ffn_w1)), tape.param(params.ffn_b1)));
    Var ffn = tape.add_rowvec(tape.matmul(hidden, tape.param(params.ffn_w2)), tape.param(params.ffn_b2));
    return tape.add(ffn, t_prime);
}

Tensor extract_inps(const Tensor& f_q, const Tensor& tokens, const ExtractorParams& params) {
    Tape tape;
    ExtractorParams& p = const_cast<ExtractorParams&>(params);
    Var out = extract_inps(tape, tape.leaf(f_q), tape.leaf(tokens), p);
    return tape.value(out);
}

Var coherence_loss_hard(Tape& tape, Var f_q, Var inps) {
    Var cos = tape.cosine_cross(f_q, inps);
    Var dist = tape.row_min(tape.affine(cos, -1.0, 1.0));
    return tape.mean_all(dist);
}

CoherenceResult coherence_loss_hard(const Tensor& f_q, const Tensor& inps) {
    Tape tape;
    Var f = tape.leaf(f_q);
    Var p = tape.leaf(inps);
    Var cos = tape.cosine_cross(f, p);
    Var dist = tape.row_min(tape.affine(cos, -1.0, 1.0));
    Var loss = tape.mean_all(dist);
    CoherenceResult r;
    r.loss = tape.value(loss)[0];
    r.distances = tape.value(dist);
    for (int64_t i = 0; i < f_q.rows(); ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < f_q.cols(); ++j) s += f_q(i, j) * f_q(i, j);
        if (std::sqrt(s) <= Tape::kNormEps) r.had_zero_norm = true;
    }
    return r;
}

Var coherence_loss_soft(Tape& tape, Var f_q, Var inps) {
    Var cos = tape.cosine_cross(f_q, inps);
    Var weights = tape.softmax_rows(cos);
    Var recon = tape.matmul(weights, inps);
    return tape.global_cosine_dist(f_q, recon);
}

CoherenceResult coherence_loss_soft(const Tensor& f_q, const Tensor& inps) {
    Tape tape;
    Var f = tape.leaf(f_q);
    Var p = tape.leaf(inps);
    Var cos = tape.cosine_cross(f, p);
    Var weights = tape.softmax_rows(cos);
    Var recon = tape.matmul(weights, p);
    Var loss = tape.global_cosine_dist(f, recon);
    CoherenceResult r;
    r.loss = tape.value(loss)[0];
    r.weights = tape.value(weights);
    return r;
}

AnomalyMap inp_distance_map(const TokenGrid& f_q, const Tensor& inps, CoherenceMode mode) {
    const int64_t n = f_q.n();
    AnomalyMap map;
    map.resolution = MapResolution::Grid;
    map.scores = Tensor(f_q.h, f_q.w);
    if (mode == CoherenceMode::Hard) {
        CoherenceResult r = coherence_loss_hard(f_q.tokens, inps);
        for (int64_t i = 0; i < n; ++i) map.scores[i] = r.distances(i, 0);
    } else {
        CoherenceResult r = coherence_loss_soft(f_q.tokens, inps);
        Tensor recon = matmul(r.weights, inps);
        for (int64_t i = 0; i < n; ++i) {
            const double cs = cosine(f_q.tokens.data() + i * f_q.c(), recon.data() + i * f_q.c(), f_q.c());
            map.scores[i] = 1.0 - cs;
        }
    }
    return map;
}

std::vector<int64_t> assign_tokens(const Tensor& f_q, const Tensor& inps) {
    const int64_t n = f_q.rows(), m = inps.rows(), c = f_q.cols();
    if (inps.cols() != c) throw std::invalid_argument("assign_tokens: channel mismatch");
    std::vector<int64_t> out(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        double best = 1.0 - cosine(f_q.data() + i * c, inps.data(), c);
        int64_t arg = 0;
        for (int64_t j = 1; j < m; ++j) {
            const double d = 1.0 - cosine(f_q.data() + i * c, inps.data() + j * c, c);
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        out[static_cast<size_t>(i)] = arg;
    }
    return out;
}

double shortcut_collapse_fraction(const std::vector<int64_t>& assignment, int64_t m) {
    if (assignment.empty()) return 0.0;
    std::vector<int64_t> counts(static_cast<size_t>(m), 0);
    for (int64_t a : assignment) counts[static_cast<size_t>(a)]++;
    const int64_t mode = *std::max_element(counts.begin(), counts.end());
    return static_cast<double>(mode) / static_cast<double>(assignment.size());
}

} // namespace inpad
