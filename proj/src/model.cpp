// SPDX-License-Identifier: Apache-2.0
#include "inpad/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace inpad {

Model Model::seeded(const RunConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    Rng token_rng = rng.fork(1);
    Rng extractor_rng = rng.fork(2);
    Rng bottleneck_rng = rng.fork(3);
    Rng decoder_rng = rng.fork(4);
    Rng head_rng = rng.fork(5);
    m.tokens = LearnableTokens(cfg.num_inps, cfg.embed_dim, token_rng);
    m.extractor = ExtractorParams::seeded(cfg.embed_dim, extractor_rng);
    m.bottleneck = BottleneckParams::seeded(cfg.embed_dim, bottleneck_rng);
    for (int l = 1; l <= cfg.decoder_layers; ++l) {
        m.decoder.push_back(DecoderLayerParams::seeded(cfg.embed_dim, l, decoder_rng));
    }
    m.seg_head = SegHeadParams::seeded(cfg.embed_dim, head_rng);
    return m;
}

std::vector<Param*> Model::npm_params() {
    std::vector<Param*> ps;
    ps.push_back(&tokens.tokens);
    for (Param* p : extractor.params()) ps.push_back(p);
    for (Param* p : bottleneck.params()) ps.push_back(p);
    for (auto& layer : decoder) {
        for (Param* p : layer.params()) ps.push_back(p);
    }
    return ps;
}

std::vector<Param*> Model::head_params() { return seg_head.params(); }

std::vector<Param*> Model::all_params() {
    std::vector<Param*> ps = npm_params();
    for (Param* p : head_params()) ps.push_back(p);
    return ps;
}

double Model::checksum() const {
    double s = 0.0;
    int64_t idx = 1;
    auto fold = [&](const Param& p) {
        for (int64_t i = 0; i < p.value.size(); ++i) {
            s += p.value[i] * std::cos(static_cast<double>(idx));
            ++idx;
        }
    };
    Model& self = const_cast<Model&>(*this);
    for (Param* p : self.all_params()) fold(*p);
    return s;
}

GraphForward model_forward_graph(Tape& tape, Model& model, const FeatureStack& stack) {
    const GroupSpec spec = model.cfg.group_spec();
    GraphForward out;
    out.h = stack.layers.at(0).h;
    out.w = stack.layers.at(0).w;

    Tensor f_total;
    for (size_t g = 0; g < spec.encoder_groups.size(); ++g) {
        TokenGrid agg = aggregate_group(stack, spec.encoder_groups[g]);
        if (g == 0) {
            f_total = agg.tokens;
        } else {
            f_total += agg.tokens;
        }
        out.enc_group_leaves.push_back(tape.leaf(agg.tokens));
        out.enc_groups.push_back(std::move(agg.tokens));
    }
    out.f_q_total_leaf = tape.leaf(std::move(f_total));

    Var fused = bottleneck_forward(tape, out.f_q_total_leaf, model.bottleneck);
    out.inps = extract_inps(tape, out.f_q_total_leaf, tape.param(model.tokens.tokens), model.extractor);
    out.dec_groups = decode(tape, fused, out.inps, model.decoder, spec);
    return out;
}

ForwardResult model_forward(const Model& model, const FeatureStack& stack) {
    Tape tape;
    Model& m = const_cast<Model&>(model);
    GraphForward gf = model_forward_graph(tape, m, stack);
    ForwardResult r;
    r.h = gf.h;
    r.w = gf.w;
    r.f_q_total = tape.value(gf.f_q_total_leaf);
    r.inps = tape.value(gf.inps);
    for (size_t g = 0; g < gf.dec_groups.size(); ++g) {
        TokenGrid enc;
        enc.tokens = gf.enc_groups[g];
        enc.h = gf.h;
        enc.w = gf.w;
        r.enc_groups.push_back(std::move(enc));
        TokenGrid dec;
        dec.tokens = tape.value(gf.dec_groups[g]);
        dec.h = gf.h;
        dec.w = gf.w;
        r.dec_groups.push_back(std::move(dec));
    }
    return r;
}

Checkpoint Checkpoint::from_model(const Model& model, int64_t step) {
    Checkpoint c;
    c.config = model.cfg;
    c.step = step;
    Model& m = const_cast<Model&>(model);
    for (Param* p : m.all_params()) c.arrays.emplace_back(p->name, p->value);
    return c;
}

Model Checkpoint::to_model() const {
    Model m = Model::seeded(config);
    std::vector<Param*> params = m.all_params();
    if (params.size() != arrays.size()) {
        throw CheckpointFormatError("checkpoint: parameter count mismatch");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != arrays[i].first || !params[i]->value.same_shape(arrays[i].second)) {
            throw CheckpointFormatError("checkpoint: parameter '" + arrays[i].first + "' does not match model");
        }
        params[i]->value = arrays[i].second;
    }
    return m;
}

namespace {
constexpr char kCkptMagic[8] = {'I', 'N', 'P', 'A', 'D', 'C', 'K', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    const uint32_t version = Checkpoint::kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));

    nlohmann::ordered_json header;
    header["config"] = nlohmann::json::parse(config_to_json(ckpt.config));
    header["step"] = ckpt.step;
    nlohmann::ordered_json hist = nlohmann::json::array();
    for (const auto& [k, v] : ckpt.metric_history) hist.push_back({{"key", k}, {"value", v}});
    header["metric_history"] = hist;
    nlohmann::ordered_json dir = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.arrays) dir.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    header["arrays"] = dir;
    const std::string header_str = header.dump();
    const uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_len));

    for (const auto& [name, t] : ckpt.arrays) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != std::string(kCkptMagic, 8)) {
        throw CheckpointFormatError("load_checkpoint: bad magic in " + path);
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != Checkpoint::kVersion) {
        throw CheckpointFormatError("load_checkpoint: unsupported version " + std::to_string(version) +
                                    " (expected " + std::to_string(Checkpoint::kVersion) + ")");
    }
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointFormatError("load_checkpoint: truncated header in " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception&) {
        throw CheckpointFormatError("load_checkpoint: corrupt header in " + path);
    }

    Checkpoint c;
    c.config = config_from_json(header.at("config").dump());
    c.step = header.at("step").get<int64_t>();
    for (const auto& item : header.at("metric_history")) {
        c.metric_history.emplace_back(item.at("key").get<std::string>(), item.at("value").get<double>());
    }
    for (const auto& entry : header.at("arrays")) {
        Tensor t(entry.at("rows").get<int64_t>(), entry.at("cols").get<int64_t>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw CheckpointFormatError("load_checkpoint: truncated array data in " + path);
        c.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return c;
}

} // namespace inpad
