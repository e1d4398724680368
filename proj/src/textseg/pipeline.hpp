#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "textseg/crf.hpp"
#include "textseg/models.hpp"
#include "textseg/synth.hpp"
#include "textseg/trainer.hpp"

namespace textseg {

// One declarative run configuration; every command reads the sections it
// needs. Parsed from JSON with defaults for everything, so commands compose
// through on-disk artifacts under `out`.
struct RunConfig {
    std::uint64_t seed = 0;
    int classes = 4;
    std::string out = "out";

    struct Sources {
        std::string kind = "procedural";  // procedural | dir
        std::string dir;
        int printed = 12;
        int handwritten = 12;
    } sources;
    SynthConfig synth;

    ModelConfig model;

    TrainConfig train;
    std::string train_dataset;    // manifest path; default <out>/data/manifest.jsonl
    std::string ov_policy = "pt";  // OV collapse target for 3-class training/eval
    std::string transfer_from;    // SSP checkpoint for MFM transfer init
    std::string checkpoint_out;   // default <out>/checkpoints/model.ckpt

    struct Infer {
        std::string checkpoint;
        std::string dataset;
        std::string split = "test";
        std::string pred_dir;  // default <out>/pred/<split>
    } infer;

    struct Post {
        std::string pred_dir;
        std::string dataset;
        std::string split = "test";
        std::string policy = "crfh";  // none | crf | crfh
        float unary_confidence = 0.9f;
        CrfConfig crf;
        std::string out_dir;  // default <out>/post/<policy>/<split>
    } post;

    struct Eval {
        std::string dataset;
        std::string split = "test";
        std::map<std::string, std::string> pred_dirs;  // column -> directory
        std::string report_dir;                        // default <out>/eval
    } eval;
};

RunConfig parse_run_config(const std::string& config_json);
ModelConfig parse_model_config(const std::string& model_json, int default_classes = 4);

// Commands. Each prints a short summary to stdout and writes its artifacts
// under the configured directories.
void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_infer(const RunConfig& cfg);
void cmd_postprocess(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
// Returns false when any check fails (exit code 1 at the CLI).
bool cmd_gradcheck(bool inject_fault);

}  // namespace textseg
