// SPDX-License-Identifier: Apache-2.0
#include "inpad/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace inpad {

DecoderLayerParams DecoderLayerParams::seeded(int64_t c, int layer_index, Rng& rng) {
    DecoderLayerParams p;
    const std::string prefix = "decoder." + std::to_string(layer_index) + ".";
    const double ws = 1.0 / std::sqrt(static_cast<double>(c));
    // the relu attention has no softmax; small score projections keep the
    // layer gain below one at initialization
    const double score_ws = 0.2 * ws;
    p.wq = Param(prefix + "wq", rng.gaussian_tensor(c, c, 0.0, score_ws));
    p.wk = Param(prefix + "wk", rng.gaussian_tensor(c, c, 0.0, score_ws));
    p.wv = Param(prefix + "wv", rng.gaussian_tensor(c, c, 0.0, ws));
    p.ffn_w1 = Param(prefix + "ffn_w1", rng.gaussian_tensor(c, 4 * c, 0.0, ws));
    p.ffn_b1 = Param(prefix + "ffn_b1", Tensor::zeros(1, 4 * c));
    p.ffn_w2 = Param(prefix + "ffn_w2", rng.gaussian_tensor(4 * c, c, 0.0, 1.0 / std::sqrt(4.0 * static_cast<double>(c))));
    p.ffn_b2 = Param(prefix + "ffn_b2", Tensor::zeros(1, c));
    p.layer_index = layer_index;
    return p;
}

std::vector<Param*> DecoderLayerParams::params() {
    return {&wq, &wk, &wv, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2};
}

Var decoder_layer(Tape& tape, Var f_prev, Var inps, DecoderLayerParams& params) {
    if (tape.value(f_prev).cols() != tape.value(inps).cols()) {
        throw std::invalid_argument("decoder_layer: feature/INP channel mismatch");
    }
    Var q = tape.matmul(f_prev, tape.param(params.wq));
    Var k = tape.matmul(inps, tape.param(params.wk));
    Var v = tape.matmul(inps, tape.param(params.wv));
    Var attn = tape.relu(tape.matmul_nt(q, k));
    Var f_mid = tape.matmul(attn, v);
    Var hidden = tape.gelu(tape.add_rowvec(tape.matmul(f_mid, tape.param(params.ffn_w1)), tape.param(params.ffn_b1)));
    Var ffn = tape.add_rowvec(tape.matmul(hidden, tape.param(params.ffn_w2)), tape.param(params.ffn_b2));
    return tape.add(ffn, f_mid);
}

Tensor decoder_layer(const Tensor& f_prev, const Tensor& inps, const DecoderLayerParams& params) {
    Tape tape;
    DecoderLayerParams& p = const_cast<DecoderLayerParams&>(params);
    Var out = decoder_layer(tape, tape.leaf(f_prev), tape.leaf(inps), p);
    return tape.value(out);
}

std::vector<Var> decode(Tape& tape, Var fused, Var inps, std::vector<DecoderLayerParams>& layers,
                        const GroupSpec& groups) {
    groups.validate();
    int max_index = 0;
    for (const auto& g : groups.decoder_groups)
        for (int idx : g) max_index = std::max(max_index, idx);
    if (max_index > static_cast<int>(layers.size())) {
        throw std::invalid_argument("decode: decoder group references layer " + std::to_string(max_index) +
                                    " but only " + std::to_string(layers.size()) + " layers exist");
    }
    std::vector<Var> layer_outputs;
    Var f = fused;
    for (auto& layer : layers) {
        f = decoder_layer(tape, f, inps, layer);
        layer_outputs.push_back(f);
    }
    std::vector<Var> group_sums;
    for (const auto& g : groups.decoder_groups) {
        std::vector<Var> members;
        for (int idx : g) members.push_back(layer_outputs[static_cast<size_t>(idx - 1)]);
        group_sums.push_back(tape.add_n(members));
    }
    return group_sums;
}

OperationCount attention_cost(int64_t n, int64_t keys, int64_t c) {
    if (n <= 0 || keys <= 0 || c <= 0) throw std::invalid_argument("attention_cost: non-positive argument");
    OperationCount oc;
    // One dot product of length d costs d multiplies + (d-1) adds = 2d - 1.
    oc.qk_multiply_adds = n * keys * (2 * c - 1);
    oc.av_multiply_adds = n * c * (2 * keys - 1);
    oc.q_bytes = n * c * 4;
    oc.k_bytes = keys * c * 4;
    oc.v_bytes = keys * c * 4;
    oc.a_bytes = n * keys * 4;
    return oc;
}

std::string cost_report(int64_t n, int64_t m, int64_t c) {
    const OperationCount self = attention_cost(n, n, c);
    const OperationCount inp = attention_cost(n, m, c);
    char buf[1024];
    std::string out;
    out += "attention cost comparison (N=" + std::to_string(n) + ", M=" + std::to_string(m) +
           ", C=" + std::to_string(c) + ")\n";
    out += "calculation            self-attention    inp-guided\n";
    std::snprintf(buf, sizeof(buf), "%-22s %15lld %13lld\n", "A = Q K^T (mul+add)",
                  static_cast<long long>(self.qk_multiply_adds), static_cast<long long>(inp.qk_multiply_adds));
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %15lld %13lld\n", "f' = A V (mul+add)",
                  static_cast<long long>(self.av_multiply_adds), static_cast<long long>(inp.av_multiply_adds));
    out += buf;
    out += "memory usage (MB)\n";
    auto mb = [](double v) {
        char tmp[32];
        // two decimals for large buffers, three once they drop below 0.1 MB
        std::snprintf(tmp, sizeof(tmp), v >= 0.1 ? "%.2f" : "%.3f", v);
        return std::string(tmp);
    };
    std::snprintf(buf, sizeof(buf), "%-22s %15s %13s\n", "Q", mb(self.q_mb()).c_str(), mb(inp.q_mb()).c_str());
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %15s %13s\n", "K", mb(self.k_mb()).c_str(), mb(inp.k_mb()).c_str());
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %15s %13s\n", "V", mb(self.v_mb()).c_str(), mb(inp.v_mb()).c_str());
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %15s %13s\n", "A", mb(self.a_mb()).c_str(), mb(inp.a_mb()).c_str());
    out += buf;
    return out;
}

} // namespace inpad
