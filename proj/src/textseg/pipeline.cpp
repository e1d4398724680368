#include "textseg/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "textseg/data.hpp"
#include "textseg/gradcheck.hpp"
#include "textseg/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace textseg {

namespace {

OvPolicy ov_policy_from_name(const std::string& s) {
    if (s == "ht") return OvPolicy::ToHT;
    if (s == "pt") return OvPolicy::ToPT;
    throw ConfigError("ov_policy must be 'ht' or 'pt', got '" + s + "'");
}

ModelConfig model_config_from_json(const json& j, int classes) {
    ModelConfig cfg;
    cfg.arch = model_arch_from_name(j.value("arch", "mfm"));
    cfg.ffp.n_stages = j.value("ffp_stages", 4);
    cfg.ffp.stage_channels = j.value("ffp_channels", 64);
    cfg.ssp.depth = j.value("ssp_depth", 4);
    cfg.ssp.base_channels = j.value("ssp_base_channels", 16);
    cfg.ssp.dec_channels = j.value("ssp_dec_channels", 12);
    cfg.set_classes(j.value("classes", classes));
    return cfg;
}

std::string default_path(const std::string& explicit_path, const fs::path& fallback) {
    return explicit_path.empty() ? fallback.string() : explicit_path;
}

// Loads the model described by the config and restores the checkpoint.
Model load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
    Model model(cfg.model, cfg.seed);
    load_model_state(model, load_checkpoint(checkpoint_path));
    return model;
}

SoftPrediction slice_prediction(const TensorT<float>& batch, std::size_t index) {
    SoftPrediction p(batch.c(), batch.h(), batch.w());
    const std::size_t chw = p.probs.size();
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(index * chw), chw, p.probs.begin());
    return p;
}

}  // namespace

RunConfig parse_run_config(const std::string& config_json) {
    json j;
    try {
        j = config_json.empty() ? json::object() : json::parse(config_json);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.classes = j.value("classes", 4);
    if (cfg.classes != 3 && cfg.classes != 4) throw ConfigError("classes must be 3 or 4");
    cfg.out = j.value("out", "out");

    const json js = j.value("synth", json::object());
    cfg.synth.width = js.value("width", 64);
    cfg.synth.height = js.value("height", 64);
    cfg.synth.count_train = js.value("train", 64);
    cfg.synth.count_val = js.value("val", 8);
    cfg.synth.count_test = js.value("test", 8);
    cfg.synth.threshold = js.value("threshold", 128);
    cfg.synth.force_overlap = js.value("force_overlap", true);
    cfg.synth.min_overlap_px = js.value("min_overlap_px", 8);
    cfg.synth.test_source_fraction = js.value("test_source_fraction", 0.2);
    cfg.synth.seed = cfg.seed;
    const json ja = js.value("augment", json::object());
    cfg.synth.augment.max_shift_frac = ja.value("max_shift_frac", 0.1);
    cfg.synth.augment.scale_min = ja.value("scale_min", 0.9);
    cfg.synth.augment.scale_max = ja.value("scale_max", 1.1);
    cfg.synth.augment.max_rotate_deg = ja.value("max_rotate_deg", 10.0);
    const json jsrc = js.value("sources", json::object());
    cfg.sources.kind = jsrc.value("kind", "procedural");
    cfg.sources.dir = jsrc.value("dir", "");
    cfg.sources.printed = jsrc.value("printed", 12);
    cfg.sources.handwritten = jsrc.value("handwritten", 12);

    cfg.model = model_config_from_json(j.value("model", json::object()), cfg.classes);

    const json jt = j.value("train", json::object());
    cfg.train.epochs = jt.value("epochs", 50);
    cfg.train.batch_size = jt.value("batch", 8);
    cfg.train.lr0 = jt.value("lr", 0.001);
    cfg.train.lr_patience = jt.value("lr_patience", 4);
    cfg.train.lr_factor = jt.value("lr_factor", 0.1);
    cfg.train.seed = cfg.seed;
    cfg.train.loss.kind = loss_kind_from_name(jt.value("loss", "fusion"));
    cfg.train.loss.gamma = jt.value("gamma", 2.0f);
    cfg.train.loss.dice_smooth = jt.value("dice_smooth", 1e-6f);
    if (jt.contains("weights")) cfg.train.loss.weights = jt["weights"].get<std::vector<float>>();
    cfg.train_dataset = jt.value("dataset", "");
    cfg.ov_policy = jt.value("ov_policy", "pt");
    cfg.transfer_from = jt.value("transfer_from", "");
    cfg.checkpoint_out = jt.value("checkpoint_out", "");

    const json ji = j.value("infer", json::object());
    cfg.infer.checkpoint = ji.value("checkpoint", "");
    cfg.infer.dataset = ji.value("dataset", "");
    cfg.infer.split = ji.value("split", "test");
    cfg.infer.pred_dir = ji.value("pred_dir", "");

    const json jp = j.value("postprocess", json::object());
    cfg.post.pred_dir = jp.value("pred_dir", "");
    cfg.post.dataset = jp.value("dataset", "");
    cfg.post.split = jp.value("split", "test");
    cfg.post.policy = jp.value("policy", "crfh");
    cfg.post.unary_confidence = jp.value("unary_confidence", 0.9f);
    cfg.post.out_dir = jp.value("out_dir", "");
    const json jc = jp.value("crf", json::object());
    cfg.post.crf.n_iters = jc.value("iters", 5);
    cfg.post.crf.spatial_sigma = jc.value("spatial_sigma", 3.0);
    cfg.post.crf.spatial_weight = jc.value("spatial_weight", 3.0);
    cfg.post.crf.bilateral_sigma_xy = jc.value("bilateral_sigma_xy", 40.0);
    cfg.post.crf.bilateral_sigma_intensity = jc.value("bilateral_sigma_intensity", 20.0);
    cfg.post.crf.bilateral_weight = jc.value("bilateral_weight", 5.0);

    const json je = j.value("eval", json::object());
    cfg.eval.dataset = je.value("dataset", "");
    cfg.eval.split = je.value("split", "test");
    cfg.eval.report_dir = je.value("report_dir", "");
    if (je.contains("pred_dirs"))
        for (const auto& [key, value] : je["pred_dirs"].items())
            cfg.eval.pred_dirs[key] = value.get<std::string>();
    return cfg;
}

ModelConfig parse_model_config(const std::string& model_json, int default_classes) {
    json j;
    try {
        j = model_json.empty() ? json::object() : json::parse(model_json);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    return model_config_from_json(j, default_classes);
}

void cmd_synth(const RunConfig& cfg) {
    SourceSet sources;
    if (cfg.sources.kind == "procedural") {
        sources = make_procedural_sources(cfg.sources.printed, cfg.sources.handwritten,
                                          cfg.synth.width, cfg.synth.height,
                                          substream_seed(cfg.seed, 0x50BCE5ULL));
    } else if (cfg.sources.kind == "dir") {
        sources = load_sources_dir(cfg.sources.dir);
    } else {
        throw ConfigError("sources.kind must be 'procedural' or 'dir'");
    }

    const fs::path data_dir = fs::path(cfg.out) / "data";
    const auto records = build_dataset(sources, cfg.synth, data_dir.string());

    std::int64_t split_counts[3] = {0, 0, 0};
    std::int64_t class_pixels[4] = {0, 0, 0, 0};
    for (const auto& rec : records) {
        split_counts[rec.split == "train" ? 0 : rec.split == "val" ? 1 : 2]++;
        const LabelMap gt = decode_gt(read_png_rgb((data_dir / rec.gt_path).string()), 4);
        for (Cls c : gt.classes) class_pixels[static_cast<int>(c)]++;
    }
    const std::uint32_t manifest_crc = file_crc32((data_dir / "manifest.jsonl").string());
    std::printf("synth: wrote %lld/%lld/%lld train/val/test samples (%dx%d) under %s\n",
                static_cast<long long>(split_counts[0]), static_cast<long long>(split_counts[1]),
                static_cast<long long>(split_counts[2]), cfg.synth.width, cfg.synth.height,
                data_dir.string().c_str());
    std::printf("synth: class pixels PT=%lld HT=%lld BG=%lld OV=%lld\n",
                static_cast<long long>(class_pixels[0]), static_cast<long long>(class_pixels[1]),
                static_cast<long long>(class_pixels[2]), static_cast<long long>(class_pixels[3]));
    std::printf("synth: manifest crc32 %08x\n", manifest_crc);
}

void cmd_train(const RunConfig& cfg) {
    const std::string manifest =
        default_path(cfg.train_dataset, fs::path(cfg.out) / "data" / "manifest.jsonl");
    const OvPolicy policy = ov_policy_from_name(cfg.ov_policy);
    const Dataset train_set = load_dataset_split(manifest, "train", cfg.classes, policy);
    const Dataset val_set = load_dataset_split(manifest, "val", cfg.classes, policy);

    Model model(cfg.model, cfg.seed);
    if (!cfg.transfer_from.empty()) {
        transfer_init(model, load_checkpoint(cfg.transfer_from));
        std::printf("train: SSP branch initialized from %s\n", cfg.transfer_from.c_str());
    }
    std::printf("train: %s, %d classes, %" PRId64 " parameters, %zu train / %zu val samples\n",
                model_arch_name(cfg.model.arch), cfg.classes, model.parameter_count(),
                train_set.size(), val_set.size());

    const TrainResult result = train(model, train_set, val_set, cfg.train);

    const fs::path ckpt_dir = fs::path(cfg.out) / "checkpoints";
    fs::create_directories(ckpt_dir);
    const std::string ckpt_path = default_path(cfg.checkpoint_out, ckpt_dir / "model.ckpt");

    // Persist the best-validation state, not the last one.
    Checkpoint best;
    best.entries = result.best_state;
    best.add_scalar("meta/epoch", result.best_epoch);
    best.add_scalar("meta/best_val_loss", result.best_val_loss);
    save_checkpoint(ckpt_path, best);

    std::ofstream log(ckpt_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& e : result.epochs) {
        json j{{"epoch", e.epoch},
               {"train_loss", e.train_loss},
               {"val_loss", e.val_loss},
               {"val_mean_iou", e.val_mean_iou},
               {"lr", e.lr}};
        log << j.dump() << '\n';
    }
    std::printf("train: best val loss %.6f at epoch %d; checkpoint %s (crc32 %08x)\n",
                result.best_val_loss, result.best_epoch, ckpt_path.c_str(),
                file_crc32(ckpt_path));
}

void cmd_infer(const RunConfig& cfg) {
    const std::string manifest =
        default_path(cfg.infer.dataset, fs::path(cfg.out) / "data" / "manifest.jsonl");
    const std::string ckpt =
        default_path(cfg.infer.checkpoint, fs::path(cfg.out) / "checkpoints" / "model.ckpt");
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt + " (run train first)");
    const fs::path pred_dir =
        cfg.infer.pred_dir.empty() ? fs::path(cfg.out) / "pred" / cfg.infer.split
                                   : fs::path(cfg.infer.pred_dir);
    fs::create_directories(pred_dir);

    const Dataset data = load_dataset_split(manifest, cfg.infer.split, cfg.classes,
                                            ov_policy_from_name(cfg.ov_policy));
    Model model = load_model(cfg, ckpt);
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto input = make_leaf<float>(make_input_batch(data, {static_cast<int>(i)}));
        auto prob = model.forward(input, BnMode::Inference);
        const LabelMap pred = argmax_labels(slice_prediction(prob->value, 0));
        write_png((pred_dir / (data[i].id + "_pred.png")).string(), encode_gt(pred));
    }
    std::printf("infer: wrote %zu prediction maps to %s\n", data.size(), pred_dir.string().c_str());
}

void cmd_postprocess(const RunConfig& cfg) {
    const std::string manifest =
        default_path(cfg.post.dataset, fs::path(cfg.out) / "data" / "manifest.jsonl");
    const fs::path pred_dir = cfg.post.pred_dir.empty()
                                  ? fs::path(cfg.out) / "pred" / cfg.post.split
                                  : fs::path(cfg.post.pred_dir);
    const fs::path out_dir = cfg.post.out_dir.empty()
                                 ? fs::path(cfg.out) / "post" / cfg.post.policy / cfg.post.split
                                 : fs::path(cfg.post.out_dir);
    fs::create_directories(out_dir);
    if (!fs::is_directory(pred_dir))
        throw IoError("prediction directory not found: " + pred_dir.string() +
                      " (run infer first)");

    const fs::path data_root = fs::path(manifest).parent_path();
    std::size_t n = 0;
    for (const auto& rec : read_manifest(manifest)) {
        if (rec.split != cfg.post.split) continue;
        const fs::path in_png = pred_dir / (rec.id + "_pred.png");
        if (!fs::exists(in_png)) throw IoError("missing prediction map: " + in_png.string());
        const LabelMap pred = decode_gt(read_png_rgb(in_png.string()), cfg.classes);
        LabelMap out = pred;
        if (cfg.post.policy != "none") {
            const GrayImage image = read_png_gray((data_root / rec.image_path).string());
            out = apply_crf(soft_from_labels(pred, cfg.post.unary_confidence), image, cfg.post.crf,
                            relabel_policy_from_name(cfg.post.policy));
        }
        write_png((out_dir / (rec.id + "_pred.png")).string(), encode_gt(out));
        ++n;
    }
    std::printf("postprocess: policy %s over %zu maps -> %s\n", cfg.post.policy.c_str(), n,
                out_dir.string().c_str());
}

void cmd_eval(const RunConfig& cfg) {
    const std::string manifest =
        default_path(cfg.eval.dataset, fs::path(cfg.out) / "data" / "manifest.jsonl");
    const Dataset data = load_dataset_split(manifest, cfg.eval.split, 4);

    // Default column layout mirrors the three post-processing configurations;
    // only directories that exist participate.
    std::map<std::string, std::string> columns = cfg.eval.pred_dirs;
    if (columns.empty()) {
        const auto add_if_dir = [&](const std::string& name, const fs::path& dir) {
            if (fs::is_directory(dir)) columns[name] = dir.string();
        };
        add_if_dir("none", fs::path(cfg.out) / "pred" / cfg.eval.split);
        add_if_dir("crf", fs::path(cfg.out) / "post" / "crf" / cfg.eval.split);
        add_if_dir("crfh", fs::path(cfg.out) / "post" / "crfh" / cfg.eval.split);
    }
    if (columns.empty()) throw IoError("no prediction directories to evaluate (run infer first)");

    const fs::path report_dir =
        cfg.eval.report_dir.empty() ? fs::path(cfg.out) / "eval" : fs::path(cfg.eval.report_dir);
    fs::create_directories(report_dir);
    std::ofstream records(report_dir / "report.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream table(report_dir / "report.txt", std::ios::binary | std::ios::trunc);

    std::vector<std::string> order{"none", "crf", "crfh"};
    for (const auto& [name, dir] : columns)
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    std::string header = "variant   ";
    for (const char* c : {"PT", "HT", "BG"}) header += std::string("  IoU(") + c + ")  ";
    header += "  mean IoU";
    table << header << '\n';
    std::printf("%s\n", header.c_str());

    for (const auto& name : order) {
        auto it = columns.find(name);
        if (it == columns.end()) continue;
        ConfusionCounts counts;
        for (const auto& s : data) {
            const fs::path png = fs::path(it->second) / (s.id + "_pred.png");
            if (!fs::exists(png)) throw IoError("missing prediction map: " + png.string());
            counts += count_confusion(decode_gt(read_png_rgb(png.string()), 4), s.gt);
        }
        const IouReport rep = report_from_counts(counts);
        char line[160];
        std::snprintf(line, sizeof line, "%-8s", name.c_str());
        std::string row(line);
        for (const auto& e : rep.classes) {
            if (e.defined)
                std::snprintf(line, sizeof line, "  %8.4f ", e.iou);
            else
                std::snprintf(line, sizeof line, "  %8s ", "undef");
            row += line;
        }
        std::snprintf(line, sizeof line, "  %8.4f", rep.mean);
        row += line;
        table << row << '\n';
        std::printf("%s\n", row.c_str());
        for (const auto& e : rep.classes) {
            json j{{"variant", name},       {"class", e.name},
                   {"tp", e.counts.tp},     {"fp", e.counts.fp},
                   {"fn", e.counts.fn},     {"defined", e.defined},
                   {"iou", e.defined ? e.iou : 0.0}};
            records << j.dump() << '\n';
        }
    }
    std::printf("eval: reports written to %s\n", report_dir.string().c_str());
}

bool cmd_gradcheck(bool inject_fault) {
    const auto results = run_gradcheck_suite(inject_fault);
    for (const auto& r : results)
        std::printf("gradcheck: %-22s max_rel_err=%.3e (tol %.0e, %" PRId64 " checked, %" PRId64
                    " kink-skipped) %s\n",
                    r.name.c_str(), r.max_rel_err, r.tolerance, r.checked, r.skipped,
                    r.pass ? "PASS" : "FAIL");
    const bool ok = all_passed(results);
    std::printf("gradcheck: %s\n", ok ? "all checks passed" : "FAILURES present");
    return ok;
}

}  // namespace textseg
