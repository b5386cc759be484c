// SPDX-License-Identifier: Apache-2.0
#include "inpad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "inpad/image_io.hpp"
#include "inpad/inp_extractor.hpp"
#include "inpad/objectives.hpp"
#include "inpad/residual_seg.hpp"

namespace fs = std::filesystem;

namespace inpad {

namespace {

struct TrainItem {
    ImageTensor image; // preprocessed to crop size
    std::string stem;
};

int64_t reflect_index(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

ImageTensor translate_reflect(const ImageTensor& img, int64_t dy, int64_t dx) {
    ImageTensor out(img.height, img.width);
    for (int64_t y = 0; y < img.height; ++y) {
        const int64_t sy = reflect_index(y - dy, img.height);
        for (int64_t x = 0; x < img.width; ++x) {
            const int64_t sx = reflect_index(x - dx, img.width);
            for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

ImageTensor rotate90_image(const ImageTensor& img, int quarters) {
    ImageTensor out = img;
    for (int t = 0; t < ((quarters % 4) + 4) % 4; ++t) {
        ImageTensor r(out.width, out.height);
        for (int64_t y = 0; y < out.height; ++y) {
            for (int64_t x = 0; x < out.width; ++x) {
                for (int64_t c = 0; c < 3; ++c) r.at(x, out.height - 1 - y, c) = out.at(y, x, c);
            }
        }
        out = std::move(r);
    }
    return out;
}

ImageTensor flip_image(const ImageTensor& img, bool horizontal, bool vertical) {
    ImageTensor out(img.height, img.width);
    for (int64_t y = 0; y < img.height; ++y) {
        const int64_t sy = vertical ? img.height - 1 - y : y;
        for (int64_t x = 0; x < img.width; ++x) {
            const int64_t sx = horizontal ? img.width - 1 - x : x;
            for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

/// Feature cache keyed by item index; the frozen extractor makes repeated
/// extraction redundant.
class FeatureCache {
public:
    FeatureCache(const FeatureExtractorHandle& extractor) : extractor_(extractor) {}

    const FeatureStack& get(size_t idx, const TrainItem& item) {
        auto it = cache_.find(idx);
        if (it != cache_.end()) return it->second;
        bind(item.stem);
        auto [pos, inserted] = cache_.emplace(idx, extractor_.extract(item.image));
        return pos->second;
    }

    FeatureStack extract_uncached(const ImageTensor& image, const std::string& stem) const {
        bind(stem);
        return extractor_.extract(image);
    }

private:
    void bind(const std::string& stem) const {
        if (const auto* loader = dynamic_cast<const PrecomputedFeatureLoader*>(&extractor_)) {
            loader->bind_image(stem);
        }
    }

    const FeatureExtractorHandle& extractor_;
    std::unordered_map<size_t, FeatureStack> cache_;
};

struct SynthesisContext {
    std::vector<ImageTensor> textures;
    std::vector<std::pair<ImageTensor, Mask>> pool; // preprocessed donors
    PerlinMaskConfig mask_cfg;
    double beta_min, beta_max;
    double real_embed_fraction;
};

PseudoAnomalySample make_anomalous_sample(const ImageTensor& normal, SynthesisContext& ctx, Rng& rng) {
    if (!ctx.pool.empty() && rng.uniform() < ctx.real_embed_fraction) {
        const auto& donor = ctx.pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ctx.pool.size()) - 1))];
        try {
            return embed_real_anomaly(normal, donor.first, donor.second, rng.next_u64());
        } catch (const std::exception&) {
            // fall through to perlin synthesis when the donor cannot be placed
        }
    }
    const Mask mask = sample_perlin_mask(normal.height, normal.width, ctx.mask_cfg, rng);
    const ImageTensor& texture =
        ctx.textures[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ctx.textures.size()) - 1))];
    const double beta = rng.uniform(ctx.beta_min, ctx.beta_max);
    return synthesize_pseudo_anomaly(normal, texture, mask, beta);
}

std::vector<ImageTensor> load_textures(const RunConfig& cfg, const std::string& data_root) {
    std::vector<ImageTensor> textures;
    std::string dir = cfg.texture_dir;
    if (dir.empty()) {
        const fs::path candidate = fs::path(data_root) / "textures";
        if (fs::exists(candidate)) dir = candidate.string();
    }
    if (!dir.empty() && fs::exists(dir)) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            textures.push_back(preprocess_image(read_ppm(f), cfg.crop, cfg.crop));
        }
    }
    if (textures.empty()) {
        // procedural fallback: seeded color noise fields
        Rng rng(cfg.seed ^ 0x7455u);
        for (int i = 0; i < 8; ++i) {
            ImageTensor tex(cfg.crop, cfg.crop);
            int64_t scale = 4;
            while (cfg.crop % scale != 0 && scale > 1) scale /= 2;
            for (int64_t c = 0; c < 3; ++c) {
                const NoiseField f = perlin_noise(cfg.crop, cfg.crop, scale, rng.next_u64());
                const double lo = rng.uniform(0.0, 0.4), hi = lo + rng.uniform(0.4, 0.6);
                for (int64_t px = 0; px < f.values.size(); ++px) {
                    tex.pixels[static_cast<size_t>(px * 3 + c)] = lo + 0.5 * (f.values[px] + 1.0) * (hi - lo);
                }
            }
            textures.push_back(std::move(tex));
        }
    }
    return textures;
}

double npm_training_step(Model& model, FeatureCache& cache, const std::vector<size_t>& batch,
                         const std::vector<TrainItem>& items, StableAdamW& opt, StepLosses& row) {
    Tape tape;
    std::vector<GroupTerm> terms;
    std::vector<Var> sc_terms;
    for (size_t idx : batch) {
        const FeatureStack& stack = cache.get(idx, items[idx]);
        GraphForward gf = model_forward_graph(tape, model, stack);
        for (size_t g = 0; g < gf.dec_groups.size(); ++g) {
            terms.push_back(GroupTerm{gf.enc_groups[g], gf.dec_groups[g], static_cast<int>(g)});
        }
        sc_terms.push_back(coherence_loss_soft(tape, gf.f_q_total_leaf, gf.inps));
    }
    SoftMiningVars sm = soft_mining_loss(tape, terms, model.cfg.gamma);
    Var l_sc = tape.affine(tape.add_n(sc_terms), 1.0 / static_cast<double>(sc_terms.size()), 0.0);
    Var l_npm = npm_loss(tape, sm.l_sm, l_sc, model.cfg.lambda);

    row.l_sm_cos = tape.value(sm.l_sm_cos)[0];
    row.l_sm_mse = tape.value(sm.l_sm_mse)[0];
    row.l_sc = tape.value(l_sc)[0];
    row.l_npm = tape.value(l_npm)[0];
    if (!std::isfinite(row.l_npm)) {
        throw DivergenceError("train: non-finite L_npm at step " + std::to_string(row.step) +
                              " (l_sm_cos=" + std::to_string(row.l_sm_cos) +
                              ", l_sm_mse=" + std::to_string(row.l_sm_mse) + ", l_sc=" + std::to_string(row.l_sc) +
                              ")");
    }
    tape.backward(l_npm);
    opt.step();
    return row.l_npm;
}

} // namespace

double residual_training_step(Model& model, const FeatureExtractorHandle& extractor,
                              const std::vector<PseudoAnomalySample>& batch, StableAdamW& head_opt,
                              StableAdamW* npm_opt, bool stop_gradient) {
    if (batch.empty()) throw std::invalid_argument("residual_training_step: empty batch");
    Tape tape;
    std::vector<Var> preds;
    std::vector<Tensor> gts;
    for (const PseudoAnomalySample& sample : batch) {
        const FeatureStack stack = extractor.extract(sample.image);
        Var pred;
        int64_t h = 0, w = 0;
        if (stop_gradient) {
            const ForwardResult fr = model_forward(model, stack);
            const FeatureResidual res = feature_residual(fr.enc_groups, fr.dec_groups);
            h = res.h;
            w = res.w;
            pred = seg_forward(tape, tape.leaf(res.values), h, w, model.seg_head, sample.image.height,
                               sample.image.width);
        } else {
            GraphForward gf = model_forward_graph(tape, model, stack);
            Var res = feature_residual(tape, gf.enc_group_leaves, gf.dec_groups);
            h = gf.h;
            w = gf.w;
            pred = seg_forward(tape, res, h, w, model.seg_head, sample.image.height, sample.image.width);
        }
        preds.push_back(pred);
        Tensor gt(sample.mask.height, sample.mask.width);
        for (int64_t i = 0; i < gt.size(); ++i) gt[i] = sample.mask.values[static_cast<size_t>(i)];
        gts.push_back(std::move(gt));
    }
    Var l_seg = tape.dice_loss(preds, gts);
    const double loss = tape.value(l_seg)[0];
    if (!std::isfinite(loss)) throw DivergenceError("residual_training_step: non-finite L_seg");
    tape.backward(l_seg);
    head_opt.step();
    if (!stop_gradient) {
        if (npm_opt == nullptr) {
            throw std::invalid_argument("residual_training_step: npm optimizer required without stop-gradient");
        }
        npm_opt->step();
    } else if (npm_opt != nullptr) {
        npm_opt->zero_grad();
    }
    return loss;
}

std::vector<AugmentedView> few_shot_augment(const std::vector<ImageTensor>& images, int64_t k, uint64_t seed,
                                            int64_t expansion) {
    if (k < 1 || k > static_cast<int64_t>(images.size())) {
        throw std::invalid_argument("few_shot_augment: k=" + std::to_string(k) + " exceeds available normals (" +
                                    std::to_string(images.size()) + ")");
    }
    if (expansion < 1) throw std::invalid_argument("few_shot_augment: expansion must be >= 1");
    Rng rng(seed);
    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    order.resize(static_cast<size_t>(k));

    std::vector<AugmentedView> views;
    for (size_t src : order) {
        for (int64_t e = 0; e < expansion; ++e) {
            AugmentedView v;
            v.source_index = src;
            if (e > 0) {
                v.rotation_quarters = static_cast<int>(rng.uniform_int(0, 3));
                v.flip_h = rng.uniform() < 0.5;
                v.flip_v = rng.uniform() < 0.5;
                v.dy = rng.uniform_int(-3, 3);
                v.dx = rng.uniform_int(-3, 3);
            }
            v.image = apply_view_transform(images[src], v);
            views.push_back(std::move(v));
        }
    }
    return views;
}

ImageTensor apply_view_transform(const ImageTensor& img, const AugmentedView& view) {
    ImageTensor out = rotate90_image(img, view.rotation_quarters);
    out = flip_image(out, view.flip_h, view.flip_v);
    return translate_reflect(out, view.dy, view.dx);
}

ImageTensor invert_view_transform(const ImageTensor& img, const AugmentedView& view) {
    ImageTensor out = translate_reflect(img, -view.dy, -view.dx);
    out = flip_image(out, view.flip_h, view.flip_v);
    return rotate90_image(out, 4 - view.rotation_quarters);
}

TrainOutput train(const RunConfig& cfg, const DatasetIndex& index, const std::string& out_dir) {
    cfg.validate();
    if (cfg.mode == RunMode::SingleClass && index.categories.size() != 1) {
        throw std::invalid_argument("train: single-class mode expects exactly one category in the index");
    }
    if (cfg.mode == RunMode::ZeroShotEval) {
        throw std::invalid_argument("train: zero-shot-eval is an inference mode");
    }
    if (cfg.encoder_type == "precomputed" && cfg.residual_learning) {
        throw std::invalid_argument(
            "train: residual learning synthesizes new images and needs a live extractor; "
            "disable residual_learning when encoder_type is 'precomputed'");
    }

    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = cfg.patch_size;
    enc_cfg.dim = cfg.embed_dim;
    enc_cfg.num_layers = cfg.encoder_layers;
    enc_cfg.seed = cfg.encoder_seed;
    enc_cfg.norm_mean = cfg.norm_mean;
    enc_cfg.norm_std = cfg.norm_std;
    const auto extractor = make_extractor(cfg.encoder_type, enc_cfg, cfg.feature_dir);
    const double frozen_checksum = extractor->checksum();

    // Training set: preprocessed normal images across all categories.
    std::vector<TrainItem> items;
    for (const auto& cat : index.categories) {
        std::vector<ImageTensor> normals;
        std::vector<std::string> stems;
        for (const std::string& path : cat.train_normal) {
            normals.push_back(preprocess_image(read_ppm(path), cfg.resize, cfg.crop));
            stems.push_back(cat.name + "/" + fs::path(path).stem().string());
        }
        if (cfg.mode == RunMode::FewShot) {
            if (cfg.few_shot_k < 1) throw std::invalid_argument("train: few-shot mode requires few_shot_k >= 1");
            auto views = few_shot_augment(normals, cfg.few_shot_k, cfg.seed ^ 0xfe57u, cfg.few_shot_expansion);
            for (size_t vi = 0; vi < views.size(); ++vi) {
                items.push_back(TrainItem{std::move(views[vi].image),
                                          stems[views[vi].source_index] + "_v" + std::to_string(vi)});
            }
        } else {
            for (size_t i = 0; i < normals.size(); ++i) {
                items.push_back(TrainItem{std::move(normals[i]), stems[i]});
            }
        }
    }
    if (items.empty()) throw std::invalid_argument("train: empty training set");

    Model model = Model::seeded(cfg);
    StableAdamW::Options opt_cfg;
    opt_cfg.lr = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    StableAdamW npm_opt(model.npm_params(), opt_cfg);
    StableAdamW head_opt(model.head_params(), opt_cfg);

    SynthesisContext synth;
    synth.textures = load_textures(cfg, index.root);
    synth.mask_cfg.threshold = cfg.perlin_threshold;
    synth.mask_cfg.bounds = MaskBounds{cfg.min_area, cfg.max_area};
    for (int64_t s = 2; s <= 32; s *= 2) synth.mask_cfg.scales.push_back(s);
    synth.beta_min = cfg.beta_min;
    synth.beta_max = cfg.beta_max;
    synth.real_embed_fraction = cfg.real_embed_fraction;
    for (const auto& cat : index.categories) {
        for (const auto& donor : cat.anomaly_pool) {
            ImageTensor img = preprocess_image(read_ppm(donor.image_path), cfg.resize, cfg.crop);
            Mask mask = center_crop(resize_mask_nearest(read_pgm_mask(donor.mask_path), cfg.resize, cfg.resize),
                                    cfg.crop);
            if (mask.empty_mask()) continue; // anomaly cropped away
            synth.pool.emplace_back(std::move(img), std::move(mask));
        }
    }

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(items.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;

    FeatureCache cache(*extractor);
    Rng order_rng(cfg.seed ^ 0x0bdeu);
    Rng synth_rng(cfg.seed ^ 0x5e17u);
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size(); // forces an initial shuffle

    auto next_batch = [&]() {
        std::vector<size_t> batch;
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                order_rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        return batch;
    };

    auto make_residual_batch = [&](const std::vector<size_t>& npm_batch) {
        std::vector<PseudoAnomalySample> batch;
        const int64_t n_normal = static_cast<int64_t>(std::llround(cfg.residual_mix_normal *
                                                                   static_cast<double>(cfg.batch_size)));
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = npm_batch[static_cast<size_t>(b % static_cast<int64_t>(npm_batch.size()))];
            const ImageTensor& normal = items[idx].image;
            if (b < n_normal) {
                PseudoAnomalySample s;
                s.image = normal;
                s.mask = Mask(normal.height, normal.width);
                s.beta = 0.0;
                s.source_id = items[idx].stem;
                batch.push_back(std::move(s));
            } else {
                PseudoAnomalySample s = make_anomalous_sample(normal, synth, synth_rng);
                s.source_id = items[idx].stem;
                batch.push_back(std::move(s));
            }
        }
        return batch;
    };

    TrainOutput out;
    const bool do_residual = cfg.residual_learning;
    auto run_npm_step = [&](int64_t step) {
        StepLosses row;
        row.step = step;
        npm_training_step(model, cache, next_batch(), items, npm_opt, row);
        return row;
    };

    if (!cfg.two_phase) {
        for (int64_t step = 1; step <= total_steps; ++step) {
            StepLosses row = run_npm_step(step);
            if (do_residual) {
                row.l_seg = residual_training_step(model, *extractor, make_residual_batch(next_batch()), head_opt,
                                                   cfg.stop_gradient ? nullptr : &npm_opt, cfg.stop_gradient);
            }
            out.log.push_back(row);
        }
    } else {
        for (int64_t step = 1; step <= total_steps; ++step) {
            out.log.push_back(run_npm_step(step));
        }
        if (do_residual) {
            for (int64_t step = 1; step <= total_steps; ++step) {
                StepLosses row;
                row.step = total_steps + step;
                row.l_seg = residual_training_step(model, *extractor, make_residual_batch(next_batch()), head_opt,
                                                   cfg.stop_gradient ? nullptr : &npm_opt, cfg.stop_gradient);
                out.log.push_back(row);
            }
        }
    }

    if (extractor->checksum() != frozen_checksum) {
        throw std::logic_error("train: frozen extractor weights changed during training");
    }

    out.checkpoint = Checkpoint::from_model(model, total_steps);
    if (!out.log.empty()) {
        out.checkpoint.metric_history.emplace_back("final_l_npm", out.log.back().l_npm);
        out.checkpoint.metric_history.emplace_back("final_l_seg", out.log.back().l_seg);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        save_config(cfg, (fs::path(out_dir) / "config.json").string());
        std::ofstream log_file(fs::path(out_dir) / "log.csv");
        log_file << TrainOutput::kCsvHeader << "\n";
        for (const StepLosses& row : out.log) {
            log_file << row.step << "," << row.l_sm_cos << "," << row.l_sm_mse << "," << row.l_sc << ","
                     << row.l_npm << "," << row.l_seg << "\n";
        }
        save_checkpoint(out.checkpoint, (fs::path(out_dir) / "checkpoint.inpad").string());
    }
    return out;
}

namespace {

struct EvalItemResult {
    double score = 0.0;
    Tensor map; // image resolution
    Mask gt;    // image resolution
    bool anomalous = false;
    std::string name;
};

MetricReport compute_report(const std::vector<EvalItemResult>& results, double fpr_limit,
                            std::vector<std::string>& warnings) {
    MetricReport r;
    std::vector<double> img_scores;
    std::vector<int> img_labels;
    std::vector<double> px_scores;
    std::vector<int> px_labels;
    std::vector<Tensor> maps;
    std::vector<Mask> masks;
    for (const auto& item : results) {
        img_scores.push_back(item.score);
        img_labels.push_back(item.anomalous ? 1 : 0);
        for (int64_t i = 0; i < item.map.size(); ++i) {
            px_scores.push_back(item.map[i]);
            px_labels.push_back(item.gt.values[static_cast<size_t>(i)]);
        }
        maps.push_back(item.map);
        masks.push_back(item.gt);
    }
    r.image_count = static_cast<int64_t>(results.size());
    r.pixel_count = static_cast<int64_t>(px_scores.size());
    auto guarded = [&](const char* name, auto&& fn, double& out) {
        try {
            out = fn();
        } catch (const UndefinedMetricError& e) {
            warnings.push_back(std::string(name) + ": " + e.what());
        }
    };
    guarded("i_auroc", [&] { return auroc(img_scores, img_labels); }, r.i_auroc);
    guarded("i_ap", [&] { return average_precision(img_scores, img_labels); }, r.i_ap);
    guarded("i_f1max", [&] { return f1_max(img_scores, img_labels); }, r.i_f1max);
    guarded("p_auroc", [&] { return auroc(px_scores, px_labels); }, r.p_auroc);
    guarded("p_ap", [&] { return average_precision(px_scores, px_labels); }, r.p_ap);
    guarded("p_f1max", [&] { return f1_max(px_scores, px_labels); }, r.p_f1max);
    guarded("aupro", [&] { return aupro(maps, masks, fpr_limit); }, r.aupro);
    r.warnings = warnings;
    return r;
}

} // namespace

std::string EvalOutput::report_text() const {
    std::string text = pooled.to_key_value("all.");
    for (const auto& [name, report] : per_category) text += report.to_key_value(name + ".");
    return text;
}

EvalOutput evaluate(const Checkpoint& ckpt, const DatasetIndex& index, const EvalOptions& opts) {
    const RunConfig& cfg = ckpt.config;
    Model model = ckpt.to_model();

    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = cfg.patch_size;
    enc_cfg.dim = cfg.embed_dim;
    enc_cfg.num_layers = cfg.encoder_layers;
    enc_cfg.seed = cfg.encoder_seed;
    enc_cfg.norm_mean = cfg.norm_mean;
    enc_cfg.norm_std = cfg.norm_std;
    const auto extractor = make_extractor(cfg.encoder_type, enc_cfg, cfg.feature_dir);

    verify_pool_isolation(index);

    EvalOutput out;
    std::vector<EvalItemResult> all_results;
    for (const auto& cat : index.categories) {
        std::vector<EvalItemResult> results;
        for (const TestItem& item : cat.test_items) {
            ImageTensor img = preprocess_image(read_ppm(item.image_path), cfg.resize, cfg.crop);
            if (const auto* loader = dynamic_cast<const PrecomputedFeatureLoader*>(extractor.get())) {
                loader->bind_image(cat.name + "/" + fs::path(item.image_path).stem().string());
            }

            EvalItemResult r;
            r.anomalous = item.anomalous;
            r.name = item.defect + "_" + fs::path(item.image_path).stem().string();
            if (item.anomalous) {
                Mask m = read_pgm_mask(item.mask_path);
                r.gt = center_crop(resize_mask_nearest(m, cfg.resize, cfg.resize), cfg.crop);
            } else {
                r.gt = Mask(cfg.crop, cfg.crop);
            }

            if (opts.zero_shot) {
                const AnomalyMap map = zero_shot_infer(model, *extractor, img,
                                                       cfg.zero_shot_mode == "hard" ? CoherenceMode::Hard
                                                                                    : CoherenceMode::Soft);
                r.map = map.scores;
                r.score = image_score(map);
            } else {
                const FeatureStack stack = extractor->extract(img);
                const ForwardResult fr = model_forward(model, stack);
                const AnomalyMap recon = recon_error_map(fr.enc_groups, fr.dec_groups);
                AnomalyMap fused;
                if (opts.use_seg_head && cfg.residual_learning) {
                    const FeatureResidual res = feature_residual(fr.enc_groups, fr.dec_groups);
                    const Tensor pred = seg_forward(res, model.seg_head, img.height, img.width);
                    fused = fuse_anomaly_map(recon, &pred, img.height, img.width);
                } else {
                    fused = fuse_anomaly_map(recon, nullptr, img.height, img.width);
                }
                r.map = fused.scores;
                r.score = image_score(fused);

                if (!opts.export_dir.empty() && opts.export_diagnostics) {
                    export_extractor_diagnostics((fs::path(opts.export_dir) / cat.name / "diagnostics").string(),
                                                 r.name, model, stack);
                }
            }

            if (!opts.export_dir.empty()) {
                const fs::path dir = fs::path(opts.export_dir) / cat.name;
                fs::create_directories(dir);
                write_pgm16((dir / (r.name + "_amap.pgm")).string(), r.map);
                write_raw_map((dir / (r.name + "_amap.bin")).string(), r.map);
            }
            results.push_back(std::move(r));
        }
        std::vector<std::string> warnings;
        out.per_category.emplace_back(cat.name, compute_report(results, cfg.aupro_fpr_limit, warnings));
        for (auto& r : results) all_results.push_back(std::move(r));
    }
    std::vector<std::string> pooled_warnings;
    out.pooled = compute_report(all_results, cfg.aupro_fpr_limit, pooled_warnings);

    if (!opts.export_dir.empty()) {
        fs::create_directories(opts.export_dir);
        std::ofstream report(fs::path(opts.export_dir) / "report.txt");
        report << out.report_text();
    }
    return out;
}

AnomalyMap zero_shot_infer(const Model& model, const FeatureExtractorHandle& extractor, const ImageTensor& image,
                           CoherenceMode mode) {
    const FeatureStack stack = extractor.extract(image);
    const GroupSpec spec = model.cfg.group_spec();
    Tensor f_total;
    bool first = true;
    TokenGrid grid;
    for (const auto& g : spec.encoder_groups) {
        TokenGrid agg = aggregate_group(stack, g);
        if (first) {
            f_total = agg.tokens;
            grid = agg;
            first = false;
        } else {
            f_total += agg.tokens;
        }
    }
    grid.tokens = f_total;
    const Tensor inps = extract_inps(f_total, model.tokens.tokens.value, model.extractor);
    const AnomalyMap grid_map = inp_distance_map(grid, inps, mode);
    AnomalyMap out;
    out.resolution = MapResolution::Image;
    out.scores = upsample_bilinear_map(grid_map.scores, image.height, image.width);
    return out;
}

Tensor extractor_attention(const Tensor& f_q, const Tensor& tokens, const ExtractorParams& params) {
    const int64_t c = tokens.cols();
    Tensor q = matmul(tokens, params.wq.value);
    Tensor k = matmul(f_q, params.wk.value);
    Tensor scores = matmul_nt(q, k);
    scores *= 1.0 / std::sqrt(static_cast<double>(c));
    // row softmax
    for (int64_t i = 0; i < scores.rows(); ++i) {
        double mx = scores(i, 0);
        for (int64_t j = 1; j < scores.cols(); ++j) mx = std::max(mx, scores(i, j));
        double s = 0.0;
        for (int64_t j = 0; j < scores.cols(); ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            s += scores(i, j);
        }
        for (int64_t j = 0; j < scores.cols(); ++j) scores(i, j) /= s;
    }
    return scores;
}

void export_extractor_diagnostics(const std::string& dir, const std::string& stem, const Model& model,
                                  const FeatureStack& stack) {
    fs::create_directories(dir);
    const GroupSpec spec = model.cfg.group_spec();
    Tensor f_total;
    int64_t h = 0, w = 0;
    bool first = true;
    for (const auto& g : spec.encoder_groups) {
        TokenGrid agg = aggregate_group(stack, g);
        h = agg.h;
        w = agg.w;
        if (first) {
            f_total = agg.tokens;
            first = false;
        } else {
            f_total += agg.tokens;
        }
    }
    const Tensor inps = extract_inps(f_total, model.tokens.tokens.value, model.extractor);
    const std::vector<int64_t> assignment = assign_tokens(f_total, inps);
    Tensor assign_map(h, w);
    for (int64_t i = 0; i < h * w; ++i) assign_map[i] = static_cast<double>(assignment[static_cast<size_t>(i)]) + 1.0;
    write_pgm16((fs::path(dir) / (stem + "_assignment.pgm")).string(), assign_map);

    const Tensor attn = extractor_attention(f_total, model.tokens.tokens.value, model.extractor);
    for (int64_t m = 0; m < attn.rows(); ++m) {
        Tensor amap(h, w);
        for (int64_t i = 0; i < h * w; ++i) amap[i] = attn(m, i);
        write_pgm16((fs::path(dir) / (stem + "_attn" + std::to_string(m) + ".pgm")).string(), amap);
    }
}

} // namespace inpad
