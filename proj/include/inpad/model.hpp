// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "inpad/config.hpp"
#include "inpad/decoder.hpp"
#include "inpad/encoder.hpp"
#include "inpad/inp_extractor.hpp"
#include "inpad/residual_seg.hpp"

namespace inpad {

/// All trainable state: seed tokens, INP extractor block, bottleneck,
/// decoder layers, segmentation head. The frozen feature extractor is held
/// separately and identified by tag only.
struct Model {
    RunConfig cfg;
    LearnableTokens tokens;
    ExtractorParams extractor;
    BottleneckParams bottleneck;
    std::vector<DecoderLayerParams> decoder;
    SegHeadParams seg_head;

    static Model seeded(const RunConfig& cfg);

    std::vector<Param*> npm_params();
    std::vector<Param*> head_params();
    std::vector<Param*> all_params();
    /// Order- and value-sensitive fingerprint over all parameters.
    double checksum() const;
};

/// Value-level products of one forward pass.
struct ForwardResult {
    std::vector<TokenGrid> enc_groups;
    std::vector<TokenGrid> dec_groups;
    Tensor f_q_total; // extractor/bottleneck input: sum of group aggregates
    Tensor inps;      // M x C
    int64_t h = 0;
    int64_t w = 0;
};

/// In-graph products of one forward pass; encoder-side tensors stay leaves.
struct GraphForward {
    std::vector<Tensor> enc_groups;
    std::vector<Var> enc_group_leaves;
    std::vector<Var> dec_groups;
    Var inps;
    Var f_q_total_leaf;
    int64_t h = 0;
    int64_t w = 0;
};

GraphForward model_forward_graph(Tape& tape, Model& model, const FeatureStack& stack);
ForwardResult model_forward(const Model& model, const FeatureStack& stack);

/// Persistent training state snapshot. Round-trips bit-exactly; the frozen
/// extractor is identified by the config fields, not stored.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    RunConfig config;
    int64_t step = 0;
    std::vector<std::pair<std::string, double>> metric_history;
    std::vector<std::pair<std::string, Tensor>> arrays;

    static Checkpoint from_model(const Model& model, int64_t step);
    Model to_model() const;
};

class CheckpointFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace inpad
