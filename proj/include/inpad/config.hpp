// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inpad/types.hpp"

namespace inpad {

enum class RunMode { SingleClass, MultiClass, FewShot, SemiSupervised, ZeroShotEval };

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& s);

/// Full hyperparameter and setting record. Serialized as a flat JSON
/// document whose keys mirror the field names exactly.
struct RunConfig {
    RunMode mode = RunMode::MultiClass;
    uint64_t seed = 1;

    int64_t num_inps = 6;
    double gamma = 3.0;
    double lambda = 0.2;
    int64_t decoder_layers = 8;

    std::string encoder_type = "toy"; // toy | precomputed | <pretrained name>
    int64_t encoder_layers = 12;
    int64_t embed_dim = 768;
    int64_t patch_size = 14;
    uint64_t encoder_seed = 7;
    std::string feature_dir;

    std::vector<std::vector<int>> encoder_groups{{3, 4, 5, 6}, {7, 8, 9, 10}};
    std::vector<std::vector<int>> decoder_groups{{1, 2, 3, 4}, {5, 6, 7, 8}};

    int64_t resize = 448;
    int64_t crop = 392;
    std::vector<double> norm_mean{0.0, 0.0, 0.0};
    std::vector<double> norm_std{1.0, 1.0, 1.0};

    double learning_rate = 5e-4;
    double weight_decay = 1e-4;
    int64_t epochs = 200;
    int64_t max_steps = 0; // 0: derive from epochs and dataset size
    int64_t batch_size = 16;

    bool residual_learning = true;
    bool stop_gradient = true;
    bool two_phase = false; // default interleaves one npm and one seg update
    double residual_mix_normal = 0.5;

    int64_t few_shot_k = 0;
    int64_t few_shot_expansion = 8;
    int64_t semi_supervised_count = 0;
    double real_embed_fraction = 0.3;

    std::string texture_dir;
    double beta_min = 0.15;
    double beta_max = 1.0;
    double perlin_threshold = 0.5;
    double min_area = 0.001;
    double max_area = 0.30;

    std::string zero_shot_mode = "soft"; // soft | hard
    double aupro_fpr_limit = 0.3;

    GroupSpec group_spec() const;
    void validate() const;
};

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& json_text);

/// Compact desk-scale preset: toy encoder, C=16, k=7, 4 layers, 2 groups.
RunConfig desk_config(uint64_t seed);

} // namespace inpad
