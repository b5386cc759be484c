// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Returns nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <vector>

#include "inpad/dataset.hpp"
#include "inpad/decoder.hpp"
#include "inpad/image_io.hpp"
#include "inpad/inp_extractor.hpp"
#include "inpad/model.hpp"
#include "inpad/objectives.hpp"
#include "inpad/residual_seg.hpp"
#include "inpad/scoring.hpp"
#include "inpad/synthesis.hpp"
#include "inpad/trainer.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

using namespace inpad;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* what, bool ok, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", criterion, what,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

Tensor random_tensor(int64_t r, int64_t c, Rng& rng, double s = 1.0) {
    Tensor t(r, c);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, s);
    return t;
}

// ---------------------------------------------------------------- criterion 1
void criterion_complexity_table() {
    const auto t0 = std::chrono::steady_clock::now();
    const OperationCount self = attention_cost(784, 784, 768);
    const OperationCount inp = attention_cost(784, 6, 768);
    bool ok = self.qk_multiply_adds == 943496960 && self.av_multiply_adds == 943509504 &&
              inp.qk_multiply_adds == 7220640 && inp.av_multiply_adds == 6623232;
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
    auto round3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
    ok = ok && round2(self.q_mb()) == 2.30 && round2(self.k_mb()) == 2.30 && round2(self.v_mb()) == 2.30 &&
         round2(self.a_mb()) == 2.34;
    ok = ok && round2(inp.q_mb()) == 2.30 && round3(inp.k_mb()) == 0.018 && round3(inp.v_mb()) == 0.018 &&
         round3(inp.a_mb()) == 0.018;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && secs < 1.0;
    report(1, "attention cost table exact (integers and MB rounding)", ok);
}

// ---------------------------------------------------------------- criterion 2
void criterion_loss_analytics() {
    bool ok = true;
    std::string detail;

    // coherence losses are exactly zero at exact reconstruction
    Tensor inps = Tensor::from_vector(2, 3, {1.0, 0.5, -0.25, -1.0, 2.0, 0.75});
    Tensor f_q(4, 3);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) f_q(i, j) = inps(i % 2, j);
    ok = ok && std::fabs(coherence_loss_hard(f_q, inps).loss) <= 1e-9;
    Tensor one_proto = Tensor::from_vector(1, 3, {0.4, -0.2, 1.0});
    Tensor f_same(3, 3);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) f_same(i, j) = one_proto(0, j);
    ok = ok && std::fabs(coherence_loss_soft(f_same, one_proto).loss) <= 1e-9;

    // dice closed forms
    Tensor a = Tensor::from_vector(2, 2, {1.0, 0.0, 1.0, 0.0});
    Tensor b = Tensor::from_vector(2, 2, {0.0, 1.0, 0.0, 1.0});
    Tensor p = Tensor::from_vector(1, 2, {0.5, 0.5});
    Tensor g = Tensor::from_vector(1, 2, {1.0, 0.0});
    ok = ok && std::fabs(dice_loss(a, a)) <= 1e-9;
    ok = ok && std::fabs(dice_loss(a, b) - 1.0) <= 1e-9;
    ok = ok && std::fabs(dice_loss(p, g) - 1.0 / 3.0) <= 1e-9;

    // mining weights power law
    Tensor field = Tensor::from_vector(1, 2, {1.0, 3.0});
    const Tensor w = mining_weights_field(field, 2.0, 3.0);
    ok = ok && std::fabs(w[0] - 0.125) <= 1e-9 && std::fabs(w[1] - 3.375) <= 1e-9;

    report(2, "loss analytics exact to 1e-9", ok);
}

// ---------------------------------------------------------------- criterion 3
void criterion_gradient_contracts() {
    Rng rng(301);
    bool ok = true;
    std::string detail;

    // (a) grad_rescale backward equals weights (.) upstream gradient
    {
        Tensor x = random_tensor(5, 4, rng);
        Tensor target = random_tensor(5, 4, rng);
        Tensor w(5, 1);
        for (int64_t i = 0; i < 5; ++i) w(i, 0) = 0.25 + rng.uniform();
        Tape t;
        Var v = t.leaf(x);
        Var scaled = t.grad_scale_rows(v, w);
        t.backward(t.mse_mean(scaled, t.leaf(target)));
        const Tensor& up = t.grad(scaled);
        const Tensor& gx = t.grad(v);
        for (int64_t i = 0; i < 5; ++i) {
            for (int64_t j = 0; j < 4; ++j) {
                if (std::fabs(gx(i, j) - up(i, j) * w(i, 0)) > 1e-6) ok = false;
            }
        }
        if (!ok) detail += "grad_rescale law violated; ";
    }

    // (b) finite differences for L_sc, L_c, decoder layer, seg head
    {
        Tensor f_q = random_tensor(5, 4, rng);
        Tensor inps = random_tensor(3, 4, rng);
        auto soft = [&]() {
            Tape t;
            return t.value(coherence_loss_soft(t, t.leaf(f_q), t.leaf(inps)))[0];
        };
        Tape ts;
        Var ps = ts.leaf(inps);
        ts.backward(coherence_loss_soft(ts, ts.leaf(f_q), ps));
        if (test::fd_max_rel_error(inps, ts.grad(ps), soft) >= 1e-3) {
            ok = false;
            detail += "L_sc fd mismatch; ";
        }
        auto hard = [&]() {
            Tape t;
            return t.value(coherence_loss_hard(t, t.leaf(f_q), t.leaf(inps)))[0];
        };
        Tape th;
        Var ph = th.leaf(inps);
        th.backward(coherence_loss_hard(th, th.leaf(f_q), ph));
        if (test::fd_max_rel_error(inps, th.grad(ph), hard) >= 1e-3) {
            ok = false;
            detail += "L_c fd mismatch; ";
        }
    }
    {
        DecoderLayerParams layer = DecoderLayerParams::seeded(4, 1, rng);
        Tensor f_prev = random_tensor(5, 4, rng);
        Tensor inps = random_tensor(2, 4, rng);
        auto loss = [&]() {
            Tape t;
            Var out = decoder_layer(t, t.leaf(f_prev), t.leaf(inps), layer);
            return t.value(t.mean_all(t.mul(out, out)))[0];
        };
        Tape t;
        Var out = decoder_layer(t, t.leaf(f_prev), t.leaf(inps), layer);
        t.backward(t.mean_all(t.mul(out, out)));
        for (Param* p : layer.params()) {
            if (test::fd_max_rel_error(p->value, p->grad, loss) >= 1e-3) {
                ok = false;
                detail += "decoder fd mismatch; ";
                break;
            }
            p->zero_grad();
        }
    }
    {
        SegHeadParams head = SegHeadParams::seeded(4, rng);
        Tensor res = random_tensor(4, 4, rng, 0.4);
        Tensor gt(14, 14);
        for (int64_t y = 3; y < 8; ++y)
            for (int64_t x = 2; x < 10; ++x) gt(y, x) = 1.0;
        auto loss = [&]() {
            Tape t;
            Var pred = seg_forward(t, t.leaf(res), 2, 2, head, 14, 14);
            return t.value(t.dice_loss({pred}, {gt}))[0];
        };
        Tape t;
        Var pred = seg_forward(t, t.leaf(res), 2, 2, head, 14, 14);
        t.backward(t.dice_loss({pred}, {gt}));
        for (Param* p : head.params()) {
            if (test::fd_max_rel_error(p->value, p->grad, loss) >= 1e-3) {
                ok = false;
                detail += "seg head fd mismatch; ";
                break;
            }
            p->zero_grad();
        }
    }

    // (c) gradients on all non-head parameters are exactly zero after an
    // L_seg backward under stop-gradient
    {
        RunConfig cfg = desk_config(9);
        cfg.embed_dim = 8;
        cfg.encoder_layers = 2;
        cfg.decoder_layers = 2;
        cfg.encoder_groups = {{1}, {2}};
        cfg.decoder_groups = {{1}, {2}};
        cfg.num_inps = 2;
        cfg.resize = 14;
        cfg.crop = 14;
        Model model = Model::seeded(cfg);
        ToyEncoderConfig ec;
        ec.patch_size = cfg.patch_size;
        ec.dim = cfg.embed_dim;
        ec.num_layers = cfg.encoder_layers;
        ec.seed = cfg.encoder_seed;
        ToyFrozenEncoder enc(ec);

        Rng img_rng(77);
        std::vector<PseudoAnomalySample> batch;
        for (int i = 0; i < 2; ++i) {
            PseudoAnomalySample s;
            s.image = ImageTensor(14, 14);
            for (auto& v : s.image.pixels) v = img_rng.uniform();
            s.mask = Mask(14, 14);
            for (int64_t y = 4; y < 9; ++y)
                for (int64_t x = 2; x < 11; ++x) s.mask.at(y, x) = 1;
            batch.push_back(std::move(s));
        }
        // manual backward so the gradients can be inspected before any step
        Tape tape;
        std::vector<Var> preds;
        std::vector<Tensor> gts;
        for (const auto& s : batch) {
            const FeatureStack stack = enc.extract(s.image);
            const ForwardResult fr = model_forward(model, stack);
            const FeatureResidual res = feature_residual(fr.enc_groups, fr.dec_groups);
            preds.push_back(seg_forward(tape, tape.leaf(res.values), res.h, res.w, model.seg_head, 14, 14));
            Tensor gt(14, 14);
            for (int64_t i = 0; i < gt.size(); ++i) gt[i] = s.mask.values[static_cast<size_t>(i)];
            gts.push_back(std::move(gt));
        }
        tape.backward(tape.dice_loss(preds, gts));
        for (Param* p : model.npm_params()) {
            for (int64_t i = 0; i < p->grad.size(); ++i) {
                if (p->grad[i] != 0.0) {
                    ok = false;
                    detail += "non-head gradient leaked; ";
                    break;
                }
            }
        }
        double head_grad_mass = 0.0;
        for (Param* p : model.head_params()) {
            for (int64_t i = 0; i < p->grad.size(); ++i) head_grad_mass += std::fabs(p->grad[i]);
        }
        if (head_grad_mass == 0.0) {
            ok = false;
            detail += "head received no gradient; ";
        }
    }

    report(3, "gradient contracts (rescale law, fd checks, stop-gradient)", ok, detail);
}

// ---------------------------------------------------------------- criterion 4
void criterion_metric_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    int instances = 0;

    for (uint64_t seed = 0; seed < 110; ++seed) {
        Rng rng(seed * 13 + 5);
        const int64_t n = rng.uniform_int(10, 200);
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        bool has_pos = false, has_neg = false;
        for (int64_t i = 0; i < n; ++i) {
            scores[static_cast<size_t>(i)] = std::round(rng.uniform() * 24.0) / 24.0;
            labels[static_cast<size_t>(i)] = rng.uniform() < 0.35 ? 1 : 0;
            has_pos |= labels[static_cast<size_t>(i)] == 1;
            has_neg |= labels[static_cast<size_t>(i)] == 0;
        }
        if (!has_pos) labels[0] = 1;
        if (!has_neg) labels[1] = 0;
        ok = ok && near(auroc(scores, labels), test::auroc_oracle(scores, labels), 1e-6);
        ok = ok && near(average_precision(scores, labels), test::ap_oracle(scores, labels), 1e-6);
        ok = ok && near(f1_max(scores, labels), test::f1_oracle(scores, labels), 1e-6);
        ++instances;
    }

    // aupro instances, including full 64x64 maps
    for (uint64_t seed = 0; seed < 24; ++seed) {
        Rng rng(seed * 31 + 7);
        const int64_t size = seed < 22 ? rng.uniform_int(8, 20) : 64;
        Mask gt(size, size);
        const int64_t regions = rng.uniform_int(1, 3);
        for (int64_t r = 0; r < regions; ++r) {
            const int64_t cy = rng.uniform_int(2, size - 3), cx = rng.uniform_int(2, size - 3);
            const int64_t ry = rng.uniform_int(1, size / 5 + 1), rx = rng.uniform_int(1, size / 5 + 1);
            for (int64_t y = std::max<int64_t>(0, cy - ry); y <= std::min(size - 1, cy + ry); ++y)
                for (int64_t x = std::max<int64_t>(0, cx - rx); x <= std::min(size - 1, cx + rx); ++x)
                    gt.at(y, x) = 1;
        }
        Tensor map(size, size);
        for (int64_t i = 0; i < map.size(); ++i) {
            double v = rng.uniform();
            if (gt.values[static_cast<size_t>(i)]) v += rng.uniform(0.0, 0.7);
            map[i] = std::round(v * 12.0) / 12.0;
        }
        ok = ok && near(aupro({map}, {gt}, 0.3), test::aupro_oracle({map}, {gt}, 0.3), 1e-6);
        ++instances;
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && secs < 60.0;
    report(4, "metric oracle equivalence within 1e-6",
           ok, std::to_string(instances) + " instances in " + std::to_string(secs).substr(0, 5) + "s");
}

// ---------------------------------------------------------------- criterion 5
void criterion_soft_mining_invariance() {
    Rng rng(501);
    bool ok = true;
    std::vector<std::pair<Tensor, Tensor>> pairs;
    pairs.emplace_back(random_tensor(8, 5, rng), random_tensor(8, 5, rng));
    pairs.emplace_back(random_tensor(8, 5, rng), random_tensor(8, 5, rng));
    const LossBundle v0 = soft_mining_loss_value(pairs, 0.0);
    const LossBundle v1 = soft_mining_loss_value(pairs, 1.0);
    const LossBundle v3 = soft_mining_loss_value(pairs, 3.0);
    ok = ok && near(v0.l_sm, v1.l_sm, 1e-9) && near(v0.l_sm, v3.l_sm, 1e-9);

    // gradients must differ for gamma > 0 on a non-uniform difficulty field
    auto grad_for = [&](double gamma) {
        Tape t;
        Param p("dec", pairs[0].second);
        Var dv = t.param(p);
        SoftMiningVars sm = soft_mining_loss(t, {GroupTerm{pairs[0].first, dv, 0}}, gamma);
        t.backward(sm.l_sm);
        return p.grad;
    };
    const Tensor g0 = grad_for(0.0);
    const Tensor g3 = grad_for(3.0);
    double diff = 0.0;
    for (int64_t i = 0; i < g0.size(); ++i) diff = std::max(diff, std::fabs(g0[i] - g3[i]));
    ok = ok && diff > 1e-6;
    report(5, "soft-mining forward value gamma-invariant, gradients gamma-sensitive", ok);
}

// ---------------------------------------------------------------- criterion 6
void criterion_soft_weight_law() {
    bool ok = true;
    int64_t rows_checked = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed + 11);
        const int64_t n = rng.uniform_int(2, 10);
        const int64_t m = rng.uniform_int(1, 8);
        Tensor f_q = random_tensor(n, 6, rng);
        Tensor inps = random_tensor(m, 6, rng);
        const CoherenceResult r = coherence_loss_soft(f_q, inps);
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                if (r.weights(i, j) <= 0.0) ok = false;
                s += r.weights(i, j);
            }
            if (std::fabs(s - 1.0) > 1e-6) ok = false;
            ++rows_checked;
        }
    }
    report(6, "soft coherence weight law over 1000 seeded instances", ok,
           std::to_string(rows_checked) + " weight rows");
}

// ---------------------------------------------------------------- criterion 7
void criterion_end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string root = (fs::temp_directory_path() / "inpad_acceptance_desk").string();
    fs::remove_all(root);
    DeskDatasetSpec spec;
    spec.seed = 1;
    generate_desk_dataset(root, spec);
    const DatasetIndex index = ingest_dataset(root);

    bool ok = true;
    std::string detail;
    // the 0.9 thresholds are per seed; the two ablation orderings are
    // directional claims, checked on the three-seed means
    double fused_ap_sum = 0.0, norl_ap_sum = 0.0;
    double stop_p_sum = 0.0, nostop_p_sum = 0.0;
    for (uint64_t seed : {1, 2, 3}) {
        RunConfig cfg = desk_config(seed);
        const TrainOutput out = train(cfg, index);
        const EvalOutput fused = evaluate(out.checkpoint, index);
        EvalOptions no_head;
        no_head.use_seg_head = false;
        const EvalOutput norl = evaluate(out.checkpoint, index, no_head);

        RunConfig no_stop = cfg;
        no_stop.stop_gradient = false;
        const TrainOutput out2 = train(no_stop, index);
        const EvalOutput nostop = evaluate(out2.checkpoint, index);

        char buf[160];
        std::snprintf(buf, sizeof(buf), "seed %llu: I-AUROC %.3f P-AUROC %.3f (no-stop %.3f); ",
                      static_cast<unsigned long long>(seed), fused.pooled.i_auroc, fused.pooled.p_auroc,
                      nostop.pooled.p_auroc);
        detail += buf;
        if (fused.pooled.i_auroc < 0.9 || fused.pooled.p_auroc < 0.9) ok = false;
        fused_ap_sum += fused.pooled.p_ap;
        norl_ap_sum += norl.pooled.p_ap;
        stop_p_sum += fused.pooled.p_auroc;
        nostop_p_sum += nostop.pooled.p_auroc;
    }
    if (fused_ap_sum < norl_ap_sum) {
        ok = false;
        detail += "residual learning decreased P-AP; ";
    }
    if (nostop_p_sum > stop_p_sum) {
        ok = false;
        detail += "dropping stop-gradient did not degrade P-AUROC; ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 600.0) {
        ok = false;
        detail += "over the runtime budget; ";
    }
    detail += std::to_string(secs).substr(0, 5) + "s total";
    fs::remove_all(root);
    report(7, "end-to-end desk run (3 seeds, ablation directions)", ok, detail);
}

// ---------------------------------------------------------------- criterion 8
void criterion_determinism_persistence() {
    const std::string root = (fs::temp_directory_path() / "inpad_acceptance_det").string();
    fs::remove_all(root);
    DeskDatasetSpec spec;
    spec.seed = 2;
    spec.train_normal = 16;
    spec.test_normal = 6;
    spec.test_anomalous = 6;
    generate_desk_dataset(root, spec);
    const DatasetIndex index = ingest_dataset(root);

    RunConfig cfg = desk_config(4);
    cfg.max_steps = 120;
    bool ok = true;
    std::string detail;

    const TrainOutput a = train(cfg, index);
    const TrainOutput b = train(cfg, index);
    if (a.checkpoint.arrays.size() != b.checkpoint.arrays.size()) {
        ok = false;
    } else {
        for (size_t i = 0; i < a.checkpoint.arrays.size() && ok; ++i) {
            const Tensor& ta = a.checkpoint.arrays[i].second;
            const Tensor& tb = b.checkpoint.arrays[i].second;
            for (int64_t j = 0; j < ta.size(); ++j) {
                if (ta[j] != tb[j]) {
                    ok = false;
                    detail += "checkpoints diverged at " + a.checkpoint.arrays[i].first + "; ";
                    break;
                }
            }
        }
    }

    const EvalOutput before = evaluate(a.checkpoint, index);
    const std::string path = (fs::temp_directory_path() / "inpad_acceptance.ckpt").string();
    save_checkpoint(a.checkpoint, path);
    const Checkpoint loaded = load_checkpoint(path);
    const EvalOutput after = evaluate(loaded, index);
    const double pairs[][2] = {
        {before.pooled.i_auroc, after.pooled.i_auroc},   {before.pooled.i_ap, after.pooled.i_ap},
        {before.pooled.i_f1max, after.pooled.i_f1max},   {before.pooled.p_auroc, after.pooled.p_auroc},
        {before.pooled.p_ap, after.pooled.p_ap},         {before.pooled.p_f1max, after.pooled.p_f1max},
        {before.pooled.aupro, after.pooled.aupro},
    };
    for (const auto& pr : pairs) {
        if (std::fabs(pr[0] - pr[1]) > 1e-12) {
            ok = false;
            detail += "metric drifted across save/load; ";
            break;
        }
    }
    fs::remove(path);
    fs::remove_all(root);
    report(8, "bit-identical reruns and lossless checkpoint round trip", ok, detail);
}

// ---------------------------------------------------------------- criterion 9
void criterion_synthesis_correctness() {
    bool ok = true;
    std::string detail;

    // lattice zeros, exhaustively
    for (uint64_t seed = 0; seed < 6; ++seed) {
        for (int64_t scale : {2, 4, 8}) {
            const NoiseField f = perlin_noise(56, 56, scale, seed);
            const int64_t cell = 56 / scale;
            for (int64_t y = 0; y < 56; y += cell) {
                for (int64_t x = 0; x < 56; x += cell) {
                    if (f.values(y, x) != 0.0) {
                        ok = false;
                        detail += "nonzero lattice point; ";
                    }
                }
            }
            if (f.values.min() < -1.0 || f.values.max() > 1.0) {
                ok = false;
                detail += "noise escaped [-1,1]; ";
            }
        }
    }

    // every sampled pseudo-anomaly satisfies the support and area contracts
    Rng rng(901);
    PerlinMaskConfig mask_cfg;
    mask_cfg.scales = {2, 4, 8};
    ImageTensor normal(56, 56), texture(56, 56);
    for (auto& v : normal.pixels) v = rng.uniform(0.3, 0.7);
    for (auto& v : texture.pixels) v = rng.uniform(0.0, 0.2);
    for (int sample = 0; sample < 200; ++sample) {
        const Mask mask = sample_perlin_mask(56, 56, mask_cfg, rng);
        if (!mask_area_ok(mask, mask_cfg.bounds)) {
            ok = false;
            detail += "area bounds violated; ";
        }
        const double beta = rng.uniform(0.15, 1.0);
        const PseudoAnomalySample s = synthesize_pseudo_anomaly(normal, texture, mask, beta);
        if (!mask_subset(changed_pixels(s.image, normal), s.mask)) {
            ok = false;
            detail += "changed pixels escaped the mask; ";
        }
    }
    report(9, "synthesis correctness (support, area bounds, lattice zeros)", ok, detail);
}

} // namespace

int main() {
    std::printf("acceptance suite\n================\n");
    criterion_complexity_table();
    criterion_loss_analytics();
    criterion_gradient_contracts();
    criterion_metric_oracles();
    criterion_soft_mining_invariance();
    criterion_soft_weight_law();
    criterion_end_to_end();
    criterion_determinism_persistence();
    criterion_synthesis_correctness();
    std::printf("================\n%s (%d failure%s)\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures == 0 ? 0 : 1;
}
