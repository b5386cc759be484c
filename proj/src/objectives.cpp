// SPDX-License-Identifier: Apache-2.0
#include "inpad/objectives.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace inpad {

DifficultyField difficulty_fields(const TokenGrid& enc_group, const TokenGrid& dec_group) {
    check_same_shape(enc_group.tokens, dec_group.tokens, "difficulty_fields");
    if (enc_group.h != dec_group.h || enc_group.w != dec_group.w) {
        throw std::invalid_argument("difficulty_fields: grid dims mismatch");
    }
    const int64_t n = enc_group.n(), c = enc_group.c();
    DifficultyField f;
    f.h = enc_group.h;
    f.w = enc_group.w;
    f.m_cos = Tensor(enc_group.h, enc_group.w);
    f.m_mse = Tensor(enc_group.h, enc_group.w);
    for (int64_t i = 0; i < n; ++i) {
        const double* e = enc_group.tokens.data() + i * c;
        const double* d = dec_group.tokens.data() + i * c;
        f.m_cos[i] = 1.0 - cosine(e, d, c, Tape::kNormEps);
        double s = 0.0;
        for (int64_t k = 0; k < c; ++k) {
            const double diff = e[k] - d[k];
            s += diff * diff;
        }
        f.m_mse[i] = s / static_cast<double>(c);
    }
    return f;
}

Tensor mining_weights_field(const Tensor& field, double u, double gamma) {
    Tensor w(field.rows(), field.cols(), 1.0);
    if (u <= 0.0) return w;
    for (int64_t i = 0; i < field.size(); ++i) w[i] = std::pow(field[i] / u, gamma);
    return w;
}

MiningWeights mining_weights(const DifficultyField& field, double gamma) {
    return mining_weights(field, field.mean_cos(), field.mean_mse(), gamma);
}

MiningWeights mining_weights(const DifficultyField& field, double u_cos, double u_mse, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("mining_weights: gamma must be >= 0");
    MiningWeights w;
    w.gamma = gamma;
    w.w_cos = mining_weights_field(field.m_cos, u_cos, gamma);
    w.w_mse = mining_weights_field(field.m_mse, u_mse, gamma);
    return w;
}

SoftMiningVars soft_mining_loss(Tape& tape, const std::vector<GroupTerm>& terms, double gamma) {
    if (terms.empty()) throw std::invalid_argument("soft_mining_loss: no group terms");

    // Per-cell difficulty from current values, then the batch mean per group.
    struct Fields {
        Tensor m_cos, m_mse;
    };
    std::vector<Fields> fields(terms.size());
    std::map<int, std::pair<double, int64_t>> acc_cos, acc_mse; // group -> (sum, count)
    for (size_t t = 0; t < terms.size(); ++t) {
        const Tensor& enc = terms[t].enc;
        const Tensor& dec = tape.value(terms[t].dec);
        check_same_shape(enc, dec, "soft_mining_loss");
        const int64_t n = enc.rows(), c = enc.cols();
        fields[t].m_cos = Tensor(n, 1);
        fields[t].m_mse = Tensor(n, 1);
        for (int64_t i = 0; i < n; ++i) {
            fields[t].m_cos(i, 0) = 1.0 - cosine(enc.data() + i * c, dec.data() + i * c, c, Tape::kNormEps);
            double s = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                const double diff = enc(i, k) - dec(i, k);
                s += diff * diff;
            }
            fields[t].m_mse(i, 0) = s / static_cast<double>(c);
        }
        auto& ac = acc_cos[terms[t].group];
        auto& am = acc_mse[terms[t].group];
        ac.first += fields[t].m_cos.sum();
        ac.second += n;
        am.first += fields[t].m_mse.sum();
        am.second += n;
    }

    std::vector<Var> cos_terms, mse_terms;
    for (size_t t = 0; t < terms.size(); ++t) {
        const auto& ac = acc_cos[terms[t].group];
        const auto& am = acc_mse[terms[t].group];
        const double u_cos = ac.first / static_cast<double>(ac.second);
        const double u_mse = am.first / static_cast<double>(am.second);
        Tensor w_cos = mining_weights_field(fields[t].m_cos, u_cos, gamma);
        Tensor w_mse = mining_weights_field(fields[t].m_mse, u_mse, gamma);

        Var enc_leaf = tape.leaf(terms[t].enc);
        Var dec_cos = tape.grad_scale_rows(terms[t].dec, w_cos);
        Var dec_mse = tape.grad_scale_rows(terms[t].dec, w_mse);
        cos_terms.push_back(tape.global_cosine_dist(enc_leaf, dec_cos));
        mse_terms.push_back(tape.mse_mean(enc_leaf, dec_mse));
    }
    const double inv = 1.0 / static_cast<double>(terms.size());
    SoftMiningVars out;
    out.l_sm_cos = tape.affine(tape.add_n(cos_terms), inv, 0.0);
    out.l_sm_mse = tape.affine(tape.add_n(mse_terms), inv, 0.0);
    out.l_sm = tape.add(out.l_sm_cos, out.l_sm_mse);
    return out;
}

LossBundle soft_mining_loss_value(const std::vector<std::pair<Tensor, Tensor>>& enc_dec_pairs, double gamma) {
    Tape tape;
    std::vector<GroupTerm> terms;
    int g = 0;
    for (const auto& [enc, dec] : enc_dec_pairs) {
        terms.push_back(GroupTerm{enc, tape.leaf(dec), g++});
    }
    SoftMiningVars v = soft_mining_loss(tape, terms, gamma);
    LossBundle b;
    b.l_sm_cos = tape.value(v.l_sm_cos)[0];
    b.l_sm_mse = tape.value(v.l_sm_mse)[0];
    b.l_sm = tape.value(v.l_sm)[0];
    return b;
}

Var npm_loss(Tape& tape, Var l_sm, Var l_sc, double lambda) {
    return tape.add_scaled(l_sm, l_sc, lambda);
}

} // namespace inpad
