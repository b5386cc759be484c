// SPDX-License-Identifier: Apache-2.0
#include "inpad/config.hpp"

#include <fstream>

#include <json.hpp>

namespace inpad {

std::string to_string(RunMode mode) {
    switch (mode) {
        case RunMode::SingleClass: return "single-class";
        case RunMode::MultiClass: return "multi-class";
        case RunMode::FewShot: return "few-shot";
        case RunMode::SemiSupervised: return "semi-supervised";
        case RunMode::ZeroShotEval: return "zero-shot-eval";
    }
    throw std::logic_error("to_string(RunMode): unreachable");
}

RunMode run_mode_from_string(const std::string& s) {
    if (s == "single-class") return RunMode::SingleClass;
    if (s == "multi-class") return RunMode::MultiClass;
    if (s == "few-shot") return RunMode::FewShot;
    if (s == "semi-supervised") return RunMode::SemiSupervised;
    if (s == "zero-shot-eval") return RunMode::ZeroShotEval;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

GroupSpec RunConfig::group_spec() const {
    GroupSpec spec;
    spec.encoder_groups = encoder_groups;
    spec.decoder_groups = decoder_groups;
    spec.validate();
    return spec;
}

void RunConfig::validate() const {
    if (num_inps < 1) throw std::invalid_argument("RunConfig: num_inps must be >= 1");
    if (gamma < 0.0) throw std::invalid_argument("RunConfig: gamma must be >= 0");
    if (decoder_layers < 1) throw std::invalid_argument("RunConfig: decoder_layers must be >= 1");
    if (crop % patch_size != 0) {
        throw std::invalid_argument("RunConfig: crop size must be divisible by patch size");
    }
    if (crop > resize) throw std::invalid_argument("RunConfig: crop exceeds resize");
    if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
    if (beta_min < 0.0 || beta_max > 1.0 || beta_min > beta_max) {
        throw std::invalid_argument("RunConfig: beta range must sit inside [0,1]");
    }
    if (residual_mix_normal < 0.0 || residual_mix_normal >= 1.0) {
        throw std::invalid_argument("RunConfig: residual_mix_normal must be in [0,1)");
    }
    group_spec();
    for (const auto& g : encoder_groups) {
        for (int idx : g) {
            if (idx < 1 || idx > static_cast<int>(encoder_layers)) {
                throw std::invalid_argument("RunConfig: encoder group index out of range");
            }
        }
    }
    for (const auto& g : decoder_groups) {
        for (int idx : g) {
            if (idx < 1 || idx > static_cast<int>(decoder_layers)) {
                throw std::invalid_argument("RunConfig: decoder group index out of range");
            }
        }
    }
}

std::string config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["mode"] = to_string(c.mode);
    j["seed"] = c.seed;
    j["num_inps"] = c.num_inps;
    j["gamma"] = c.gamma;
    j["lambda"] = c.lambda;
    j["decoder_layers"] = c.decoder_layers;
    j["encoder_type"] = c.encoder_type;
    j["encoder_layers"] = c.encoder_layers;
    j["embed_dim"] = c.embed_dim;
    j["patch_size"] = c.patch_size;
    j["encoder_seed"] = c.encoder_seed;
    j["feature_dir"] = c.feature_dir;
    j["encoder_groups"] = c.encoder_groups;
    j["decoder_groups"] = c.decoder_groups;
    j["resize"] = c.resize;
    j["crop"] = c.crop;
    j["norm_mean"] = c.norm_mean;
    j["norm_std"] = c.norm_std;
    j["learning_rate"] = c.learning_rate;
    j["weight_decay"] = c.weight_decay;
    j["epochs"] = c.epochs;
    j["max_steps"] = c.max_steps;
    j["batch_size"] = c.batch_size;
    j["residual_learning"] = c.residual_learning;
    j["stop_gradient"] = c.stop_gradient;
    j["two_phase"] = c.two_phase;
    j["residual_mix_normal"] = c.residual_mix_normal;
    j["few_shot_k"] = c.few_shot_k;
    j["few_shot_expansion"] = c.few_shot_expansion;
    j["semi_supervised_count"] = c.semi_supervised_count;
    j["real_embed_fraction"] = c.real_embed_fraction;
    j["texture_dir"] = c.texture_dir;
    j["beta_min"] = c.beta_min;
    j["beta_max"] = c.beta_max;
    j["perlin_threshold"] = c.perlin_threshold;
    j["min_area"] = c.min_area;
    j["max_area"] = c.max_area;
    j["zero_shot_mode"] = c.zero_shot_mode;
    j["aupro_fpr_limit"] = c.aupro_fpr_limit;
    return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    RunConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("mode")) c.mode = run_mode_from_string(j.at("mode").get<std::string>());
    get("seed", c.seed);
    get("num_inps", c.num_inps);
    get("gamma", c.gamma);
    get("lambda", c.lambda);
    get("decoder_layers", c.decoder_layers);
    get("encoder_type", c.encoder_type);
    get("encoder_layers", c.encoder_layers);
    get("embed_dim", c.embed_dim);
    get("patch_size", c.patch_size);
    get("encoder_seed", c.encoder_seed);
    get("feature_dir", c.feature_dir);
    get("encoder_groups", c.encoder_groups);
    get("decoder_groups", c.decoder_groups);
    get("resize", c.resize);
    get("crop", c.crop);
    get("norm_mean", c.norm_mean);
    get("norm_std", c.norm_std);
    get("learning_rate", c.learning_rate);
    get("weight_decay", c.weight_decay);
    get("epochs", c.epochs);
    get("max_steps", c.max_steps);
    get("batch_size", c.batch_size);
    get("residual_learning", c.residual_learning);
    get("stop_gradient", c.stop_gradient);
    get("two_phase", c.two_phase);
    get("residual_mix_normal", c.residual_mix_normal);
    get("few_shot_k", c.few_shot_k);
    get("few_shot_expansion", c.few_shot_expansion);
    get("semi_supervised_count", c.semi_supervised_count);
    get("real_embed_fraction", c.real_embed_fraction);
    get("texture_dir", c.texture_dir);
    get("beta_min", c.beta_min);
    get("beta_max", c.beta_max);
    get("perlin_threshold", c.perlin_threshold);
    get("min_area", c.min_area);
    get("max_area", c.max_area);
    get("zero_shot_mode", c.zero_shot_mode);
    get("aupro_fpr_limit", c.aupro_fpr_limit);
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_config: cannot open " + path);
    out << config_to_json(cfg);
}

RunConfig desk_config(uint64_t seed) {
    RunConfig c;
    c.mode = RunMode::SingleClass;
    c.seed = seed;
    c.num_inps = 6;
    c.decoder_layers = 4;
    c.encoder_type = "toy";
    c.encoder_layers = 4;
    c.embed_dim = 16;
    c.patch_size = 7;
    c.encoder_seed = 7;
    c.encoder_groups = {{1, 2}, {3, 4}};
    c.decoder_groups = {{1, 2}, {3, 4}};
    c.resize = 56;
    c.crop = 56;
    c.epochs = 0;
    c.max_steps = 500;
    c.batch_size = 8;
    c.learning_rate = 5e-3;
    c.beta_min = 0.5;
    c.norm_mean = {0.5, 0.5, 0.5};
    c.norm_std = {0.5, 0.5, 0.5};
    return c;
}

} // namespace inpad
