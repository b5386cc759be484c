// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "inpad/dataset.hpp"
#include "inpad/metrics.hpp"
#include "inpad/model.hpp"
#include "inpad/optimizer.hpp"
#include "inpad/scoring.hpp"
#include "inpad/synthesis.hpp"

namespace inpad {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepLosses {
    int64_t step = 0;
    double l_sm_cos = 0.0;
    double l_sm_mse = 0.0;
    double l_sc = 0.0;
    double l_npm = 0.0;
    double l_seg = 0.0;
};

struct TrainOutput {
    Checkpoint checkpoint;
    std::vector<StepLosses> log;
    static constexpr const char* kCsvHeader = "step,l_sm_cos,l_sm_mse,l_sc,l_npm,l_seg";
};

/// Runs normal-pattern modeling and, when enabled, residual learning.
/// Deterministic given (config, seeds, dataset). Writes config snapshot,
/// per-step CSV log and final checkpoint into out_dir when non-empty.
TrainOutput train(const RunConfig& cfg, const DatasetIndex& index, const std::string& out_dir = "");

/// One residual-learning update on a synthesized batch. With stop_gradient
/// the residual enters the head as a constant and only head parameters
/// move; without it the loss also backpropagates into the reconstruction
/// stack through npm_opt.
double residual_training_step(Model& model, const FeatureExtractorHandle& extractor,
                              const std::vector<PseudoAnomalySample>& batch, StableAdamW& head_opt,
                              StableAdamW* npm_opt, bool stop_gradient);

struct EvalOptions {
    bool use_seg_head = true; // false scores by reconstruction error alone
    bool zero_shot = false;   // score by INP distance maps instead
    std::string export_dir;
    bool export_diagnostics = false;
};

struct EvalOutput {
    MetricReport pooled;
    std::vector<std::pair<std::string, MetricReport>> per_category;
    std::string report_text() const;
};

EvalOutput evaluate(const Checkpoint& ckpt, const DatasetIndex& index, const EvalOptions& opts = {});

struct AugmentedView {
    ImageTensor image;
    size_t source_index = 0;
    int rotation_quarters = 0;
    bool flip_h = false;
    bool flip_v = false;
    int64_t dy = 0;
    int64_t dx = 0;
};

/// Selects k seeded source images and expands each into `expansion` views
/// via 90-degree rotations, flips and small integer translations. View 0 of
/// each source is the identity.
std::vector<AugmentedView> few_shot_augment(const std::vector<ImageTensor>& images, int64_t k, uint64_t seed,
                                            int64_t expansion);
ImageTensor apply_view_transform(const ImageTensor& img, const AugmentedView& view);
ImageTensor invert_view_transform(const ImageTensor& img, const AugmentedView& view);

/// Distance map between tokens and the image's own INPs, upsampled to image
/// resolution; the image score is the top-1% mean.
AnomalyMap zero_shot_infer(const Model& model, const FeatureExtractorHandle& extractor,
                           const ImageTensor& image, CoherenceMode mode);

/// Assignment grid and per-INP cross-attention maps as image files.
void export_extractor_diagnostics(const std::string& dir, const std::string& stem, const Model& model,
                                  const FeatureStack& stack);

/// Cross-attention weights of the extractor block (M x N), forward only.
Tensor extractor_attention(const Tensor& f_q, const Tensor& tokens, const ExtractorParams& params);

} // namespace inpad
