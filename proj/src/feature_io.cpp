// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include <json.hpp>

#include "inpad/encoder.hpp"

namespace inpad {

namespace {
constexpr char kMagic[8] = {'I', 'N', 'P', 'A', 'D', 'F', 'T', '1'};
}

void write_feature_file(const std::string& path, const FeatureStack& stack) {
    if (stack.layers.empty()) throw std::invalid_argument("write_feature_file: empty stack");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_feature_file: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    nlohmann::json meta;
    meta["patch_size"] = stack.patch_size;
    meta["extractor_tag"] = stack.extractor_tag;
    meta["layers"] = stack.num_layers();
    meta["h"] = stack.layers[0].h;
    meta["w"] = stack.layers[0].w;
    meta["c"] = stack.layers[0].c();
    const std::string meta_str = meta.dump();
    const uint64_t meta_len = meta_str.size();
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_len));
    for (const TokenGrid& g : stack.layers) {
        out.write(reinterpret_cast<const char*>(g.tokens.data()),
                  static_cast<std::streamsize>(g.tokens.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write_feature_file: write failed for " + path);
}

FeatureStack read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_feature_file: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
        throw std::runtime_error("read_feature_file: bad magic in " + path);
    }
    uint64_t meta_len = 0;
    in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    nlohmann::json meta = nlohmann::json::parse(meta_str);

    FeatureStack stack;
    stack.patch_size = meta.at("patch_size").get<int64_t>();
    stack.extractor_tag = meta.at("extractor_tag").get<std::string>();
    const int64_t layers = meta.at("layers").get<int64_t>();
    const int64_t h = meta.at("h").get<int64_t>();
    const int64_t w = meta.at("w").get<int64_t>();
    const int64_t c = meta.at("c").get<int64_t>();
    for (int64_t l = 0; l < layers; ++l) {
        TokenGrid g;
        g.h = h;
        g.w = w;
        g.layer = l + 1;
        g.tokens = Tensor(h * w, c);
        in.read(reinterpret_cast<char*>(g.tokens.data()),
                static_cast<std::streamsize>(g.tokens.size() * sizeof(double)));
        if (!in) throw std::runtime_error("read_feature_file: truncated file " + path);
        stack.layers.push_back(std::move(g));
    }
    return stack;
}

} // namespace inpad
