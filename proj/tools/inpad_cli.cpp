// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "inpad/config.hpp"
#include "inpad/dataset.hpp"
#include "inpad/decoder.hpp"
#include "inpad/image_io.hpp"
#include "inpad/scoring.hpp"
#include "inpad/trainer.hpp"

namespace fs = std::filesystem;
using namespace inpad;

namespace {

int cmd_train(const std::string& config_path, const std::string& data_root, const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    DatasetIndex index = ingest_dataset(data_root);
    if (cfg.mode == RunMode::SemiSupervised && cfg.semi_supervised_count > 0) {
        carve_semi_supervised_pool(index, cfg.semi_supervised_count, cfg.seed);
    }
    if (cfg.mode == RunMode::SingleClass) {
        // one model per category, each in its own subdirectory
        for (const auto& cat : index.categories) {
            const DatasetIndex sub = index.filter(cat.name);
            const std::string cat_out = (fs::path(out_dir) / cat.name).string();
            std::cout << "training category " << cat.name << " -> " << cat_out << "\n";
            TrainOutput result = train(cfg, sub, cat_out);
            std::cout << "  final l_npm=" << result.log.back().l_npm << " l_seg=" << result.log.back().l_seg
                      << "\n";
        }
    } else {
        TrainOutput result = train(cfg, index, out_dir);
        std::cout << "final l_npm=" << result.log.back().l_npm << " l_seg=" << result.log.back().l_seg << "\n";
    }
    std::cout << "done; artifacts in " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_root, const std::string& out_dir,
             bool no_seg_head, bool zero_shot, bool diagnostics) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetIndex index = ingest_dataset(data_root);
    if (ckpt.config.mode == RunMode::SemiSupervised && ckpt.config.semi_supervised_count > 0) {
        carve_semi_supervised_pool(index, ckpt.config.semi_supervised_count, ckpt.config.seed);
    }
    EvalOptions opts;
    opts.use_seg_head = !no_seg_head;
    opts.zero_shot = zero_shot;
    opts.export_dir = out_dir;
    opts.export_diagnostics = diagnostics;
    const EvalOutput out = evaluate(ckpt, index, opts);
    std::cout << out.report_text();
    for (const auto& [cat, report] : out.per_category) {
        for (const std::string& warning : report.warnings) {
            std::cerr << "warning [" << cat << "]: " << warning << "\n";
        }
    }
    return 0;
}

int cmd_synth_data(const std::string& out_dir, uint64_t seed, int64_t categories, int64_t train_n,
                   int64_t test_normal, int64_t test_anomalous, int64_t image_size) {
    DeskDatasetSpec spec;
    spec.seed = seed;
    spec.num_categories = categories;
    spec.train_normal = train_n;
    spec.test_normal = test_normal;
    spec.test_anomalous = test_anomalous;
    spec.image_size = image_size;
    generate_desk_dataset(out_dir, spec);
    std::cout << "synthetic dataset written to " << out_dir << "\n";
    std::cout << "categories=" << categories << " train=" << train_n << " test_normal=" << test_normal
              << " test_anomalous=" << test_anomalous << " size=" << image_size << "x" << image_size << "\n";
    return 0;
}

int cmd_cost_report(int64_t n, int64_t m, int64_t c) {
    std::cout << cost_report(n, m, c);
    return 0;
}

int cmd_zero_shot(const std::string& ckpt_path, const std::string& image_path, const std::string& out_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Model model = ckpt.to_model();
    ToyEncoderConfig enc_cfg;
    enc_cfg.patch_size = ckpt.config.patch_size;
    enc_cfg.dim = ckpt.config.embed_dim;
    enc_cfg.num_layers = ckpt.config.encoder_layers;
    enc_cfg.seed = ckpt.config.encoder_seed;
    enc_cfg.norm_mean = ckpt.config.norm_mean;
    enc_cfg.norm_std = ckpt.config.norm_std;
    const auto extractor = make_extractor(ckpt.config.encoder_type, enc_cfg, ckpt.config.feature_dir);

    const ImageTensor image = preprocess_image(read_ppm(image_path), ckpt.config.resize, ckpt.config.crop);
    const AnomalyMap map = zero_shot_infer(model, *extractor, image,
                                           ckpt.config.zero_shot_mode == "hard" ? CoherenceMode::Hard
                                                                                : CoherenceMode::Soft);
    std::cout << "image_score=" << image_score(map) << "\n";
    if (!out_path.empty()) {
        write_pgm16(out_path + ".pgm", map.scores);
        write_raw_map(out_path + ".bin", map.scores);
        std::cout << "map written to " << out_path << ".pgm / .bin\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-guided feature-reconstruction anomaly detection toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_root, out_dir, ckpt_path, image_path, out_path;
    bool no_seg_head = false, zero_shot = false, diagnostics = false;
    uint64_t seed = 1;
    int64_t categories = 1, train_n = 60, test_normal = 20, test_anomalous = 20, image_size = 56;
    int64_t cost_n = 784, cost_m = 6, cost_c = 768;

    auto* train_cmd = app.add_subcommand("train", "train on an MVTec-style dataset");
    train_cmd->add_option("--config", config_path, "run configuration file")->required();
    train_cmd->add_option("--data", data_root, "dataset root")->required();
    train_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_root, "dataset root")->required();
    eval_cmd->add_option("--out", out_dir, "export directory for maps and report");
    eval_cmd->add_flag("--no-seg-head", no_seg_head, "score by reconstruction error only");
    eval_cmd->add_flag("--zero-shot", zero_shot, "score by INP distance maps");
    eval_cmd->add_flag("--diagnostics", diagnostics, "export assignment grids and attention maps");

    auto* synth_cmd = app.add_subcommand("synth-data", "generate the bundled synthetic defect dataset");
    synth_cmd->add_option("--out", out_dir, "output directory")->required();
    synth_cmd->add_option("--seed", seed, "generator seed");
    synth_cmd->add_option("--categories", categories, "number of categories");
    synth_cmd->add_option("--train", train_n, "normal training images per category");
    synth_cmd->add_option("--test-normal", test_normal, "normal test images per category");
    synth_cmd->add_option("--test-anomalous", test_anomalous, "anomalous test images per category");
    synth_cmd->add_option("--size", image_size, "square image size");

    auto* cost_cmd = app.add_subcommand("cost-report", "print the attention cost comparison table");
    cost_cmd->add_option("--n", cost_n, "number of query tokens");
    cost_cmd->add_option("--m", cost_m, "number of INPs");
    cost_cmd->add_option("--c", cost_c, "channel width");

    auto* zs_cmd = app.add_subcommand("zero-shot", "score one image with INP distance maps");
    zs_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    zs_cmd->add_option("--image", image_path, "input image (PPM)")->required();
    zs_cmd->add_option("--out", out_path, "output map path prefix");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, data_root, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_root, out_dir, no_seg_head, zero_shot, diagnostics);
        if (synth_cmd->parsed()) {
            return cmd_synth_data(out_dir, seed, categories, train_n, test_normal, test_anomalous, image_size);
        }
        if (cost_cmd->parsed()) return cmd_cost_report(cost_n, cost_m, cost_c);
        if (zs_cmd->parsed()) return cmd_zero_shot(ckpt_path, image_path, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
