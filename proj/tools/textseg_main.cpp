// Command-line front end. All work happens behind the C API; this binary
// only turns flags into the JSON run configuration and maps status codes to
// exit codes (0 success, 1 check failure, 2 usage error).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "textseg.h"

using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::fprintf(stderr, "error: cannot read config file %s\n", path.c_str());
        std::exit(2);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str());
    } catch (const json::parse_error& e) {
        std::fprintf(stderr, "error: %s is not valid JSON: %s\n", path.c_str(), e.what());
        std::exit(2);
    }
}

std::vector<float> parse_weights(const std::string& csv) {
    std::vector<float> w;
    std::stringstream ss(csv);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) w.push_back(std::stof(item));
    } catch (const std::exception&) {
        std::fprintf(stderr, "error: --weights expects comma-separated numbers, got '%s'\n",
                     csv.c_str());
        std::exit(2);
    }
    if (w.empty()) {
        std::fprintf(stderr, "error: --weights is empty\n");
        std::exit(2);
    }
    return w;
}

int finish(ts_status status) {
    if (status != TS_OK) std::fprintf(stderr, "error: %s\n", ts_last_error());
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handwritten/printed text segmentation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, loss, model, policy, out, weights;
    std::uint64_t seed = 0;
    int classes = 0, epochs = 0, batch = 0;
    double lr = 0.0;

    auto* opt_config = app.add_option("--config", config_path, "JSON run configuration file");
    auto* opt_seed = app.add_option("--seed", seed, "master random seed");
    auto* opt_loss = app.add_option("--loss", loss, "training loss")
                         ->check(CLI::IsMember({"ce", "wce", "focal", "wf", "dice", "wd", "fusion"}));
    auto* opt_classes = app.add_option("--classes", classes, "problem formulation")
                            ->check(CLI::IsMember({3, 4}));
    auto* opt_model = app.add_option("--model", model, "architecture")
                          ->check(CLI::IsMember({"ffp", "ssp-light", "ssp-mini-residual", "mfm"}));
    auto* opt_policy = app.add_option("--policy", policy, "post-processing policy")
                           ->check(CLI::IsMember({"none", "crf", "crfh"}));
    auto* opt_out = app.add_option("--out", out, "output directory");
    auto* opt_epochs = app.add_option("--epochs", epochs, "training epochs");
    auto* opt_batch = app.add_option("--batch", batch, "batch size");
    auto* opt_lr = app.add_option("--lr", lr, "initial learning rate");
    auto* opt_weights = app.add_option("--weights", weights, "per-class loss weights, e.g. 0.3,0.3,0.1,0.3");

    auto* cmd_synth = app.add_subcommand("synth", "synthesize an overlapping-text dataset");
    auto* cmd_train = app.add_subcommand("train", "train a model on a synthesized dataset");
    auto* cmd_infer = app.add_subcommand("infer", "write color-coded prediction maps");
    auto* cmd_post = app.add_subcommand("postprocess", "apply CRF / CRFH relabeling to predictions");
    auto* cmd_eval = app.add_subcommand("eval", "per-class and mean IoU report");
    auto* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    bool inject_fault = false;
    cmd_gradcheck->add_flag("--inject-fault", inject_fault,
                            "corrupt one gradient on purpose (failure-path fixture)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    json cfg = opt_config->count() ? load_config_file(config_path) : json::object();
    if (opt_seed->count()) cfg["seed"] = seed;
    if (opt_classes->count()) cfg["classes"] = classes;
    if (opt_out->count()) cfg["out"] = out;
    if (opt_model->count()) cfg["model"]["arch"] = model;
    if (opt_loss->count()) cfg["train"]["loss"] = loss;
    if (opt_epochs->count()) cfg["train"]["epochs"] = epochs;
    if (opt_batch->count()) cfg["train"]["batch"] = batch;
    if (opt_lr->count()) cfg["train"]["lr"] = lr;
    if (opt_weights->count()) cfg["train"]["weights"] = parse_weights(weights);
    if (opt_policy->count()) cfg["postprocess"]["policy"] = policy;
    const std::string cfg_text = cfg.dump();

    if (*cmd_synth) return finish(ts_synth(cfg_text.c_str()));
    if (*cmd_train) return finish(ts_train(cfg_text.c_str()));
    if (*cmd_infer) return finish(ts_infer(cfg_text.c_str()));
    if (*cmd_post) return finish(ts_postprocess(cfg_text.c_str()));
    if (*cmd_eval) return finish(ts_eval(cfg_text.c_str()));
    if (*cmd_gradcheck) return finish(ts_gradcheck(inject_fault ? 1 : 0));
    return 2;
}
