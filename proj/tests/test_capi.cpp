#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "textseg.h"
#include "textseg/labelcodec.hpp"
#include "textseg/models.hpp"
#include "textseg/pipeline.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kToyModelJson =
    R"({"arch":"mfm","classes":4,"ffp_stages":1,"ffp_channels":6,
        "ssp_depth":2,"ssp_base_channels":6,"ssp_dec_channels":6})";

json toy_run_config(const fs::path& out, std::uint64_t seed) {
    json j;
    j["seed"] = seed;
    j["out"] = out.string();
    j["synth"] = {{"width", 16}, {"height", 16}, {"train", 8}, {"val", 2}, {"test", 2},
                  {"min_overlap_px", 4}, {"sources", {{"kind", "procedural"}, {"printed", 6}, {"handwritten", 6}}}};
    j["model"] = {{"arch", "mfm"}, {"ffp_stages", 1}, {"ffp_channels", 6},
                  {"ssp_depth", 2}, {"ssp_base_channels", 6}, {"ssp_dec_channels", 6}};
    j["train"] = {{"epochs", 3}, {"batch", 4}, {"lr", 0.002}, {"loss", "fusion"}};
    j["postprocess"] = {{"policy", "crfh"},
                        {"crf", {{"iters", 2}, {"spatial_sigma", 1.5}, {"bilateral_sigma_xy", 2.0},
                                 {"bilateral_sigma_intensity", 20.0}}}};
    return j;
}

}  // namespace

TEST_CASE("version and error surface") {
    CHECK(ts_version() != nullptr);
    CHECK(std::string(ts_version()).find("textseg") != std::string::npos);
    CHECK(ts_last_error() != nullptr);
}

TEST_CASE("model handles: create, save, open, predict parity") {
    TempDir tmp("textseg_capi_model");
    ts_model* model = ts_model_create(kToyModelJson, 42);
    REQUIRE(model != nullptr);
    CHECK(ts_model_classes(model) == 4);
    CHECK(ts_model_parameter_count(model) > 0);

    // parity with an in-process core model built from the same config/seed
    textseg::ModelConfig cfg = textseg::parse_model_config(kToyModelJson);
    textseg::Model core(cfg, 42);
    CHECK(ts_model_parameter_count(model) == core.parameter_count());

    std::vector<std::uint8_t> gray(16 * 16);
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>((i * 37) % 256);
    std::vector<float> probs(4 * 16 * 16);
    REQUIRE(ts_model_predict(model, gray.data(), 16, 16, probs.data()) == TS_OK);

    textseg::TensorT<float> input(textseg::Shape{1, 3, 16, 16});
    for (std::size_t i = 0; i < 256; ++i) {
        const float v = static_cast<float>(gray[i]) / 255.0f;
        input.data[i] = input.data[256 + i] = input.data[512 + i] = v;
    }
    auto expect = core.forward(textseg::make_leaf<float>(std::move(input)),
                               textseg::BnMode::Inference);
    CHECK(std::memcmp(probs.data(), expect->value.data.data(), probs.size() * sizeof(float)) == 0);

    // probabilities form a simplex
    for (std::size_t i = 0; i < 256; ++i) {
        float sum = 0;
        for (int c = 0; c < 4; ++c) sum += probs[static_cast<std::size_t>(c) * 256 + i];
        CHECK(std::abs(sum - 1.0f) <= 1e-6f);
    }

    // save -> open -> identical predictions
    const std::string ckpt = (tmp.path / "m.ckpt").string();
    REQUIRE(ts_model_save(model, ckpt.c_str()) == TS_OK);
    ts_model* reopened = ts_model_open(kToyModelJson, ckpt.c_str());
    REQUIRE(reopened != nullptr);
    std::vector<float> probs2(probs.size());
    REQUIRE(ts_model_predict(reopened, gray.data(), 16, 16, probs2.data()) == TS_OK);
    CHECK(std::memcmp(probs.data(), probs2.data(), probs.size() * sizeof(float)) == 0);

    ts_model_free(model);
    ts_model_free(reopened);
}

TEST_CASE("error paths set status and message") {
    CHECK(ts_model_predict(nullptr, nullptr, 4, 4, nullptr) == TS_USAGE_ERROR);
    CHECK(std::string(ts_last_error()).size() > 0);

    CHECK(ts_model_create("{\"arch\":\"resnet152\"}", 1) == nullptr);
    CHECK(std::string(ts_last_error()).find("resnet152") != std::string::npos);

    CHECK(ts_model_open(kToyModelJson, "/nonexistent/x.ckpt") == nullptr);
    CHECK(ts_synth("{not json") == TS_USAGE_ERROR);
    CHECK(ts_eval("{\"out\":\"/nonexistent_dir_xyz\"}") == TS_USAGE_ERROR);
}

TEST_CASE("pipeline commands compose through the filesystem") {
    TempDir tmp("textseg_capi_pipeline");
    const json cfg = toy_run_config(tmp.path / "run", 11);
    const std::string text = cfg.dump();

    REQUIRE(ts_synth(text.c_str()) == TS_OK);
    CHECK(fs::exists(tmp.path / "run" / "data" / "manifest.jsonl"));

    REQUIRE(ts_train(text.c_str()) == TS_OK);
    CHECK(fs::exists(tmp.path / "run" / "checkpoints" / "model.ckpt"));
    CHECK(fs::exists(tmp.path / "run" / "checkpoints" / "train_log.jsonl"));

    REQUIRE(ts_infer(text.c_str()) == TS_OK);
    CHECK(fs::exists(tmp.path / "run" / "pred" / "test"));

    REQUIRE(ts_postprocess(text.c_str()) == TS_OK);
    CHECK(fs::exists(tmp.path / "run" / "post" / "crfh" / "test"));

    REQUIRE(ts_eval(text.c_str()) == TS_OK);
    CHECK(fs::exists(tmp.path / "run" / "eval" / "report.txt"));
    CHECK(fs::exists(tmp.path / "run" / "eval" / "report.jsonl"));

    // inference output decodes losslessly via the ground-truth codec
    bool found = false;
    for (const auto& entry : fs::directory_iterator(tmp.path / "run" / "pred" / "test")) {
        found = true;
        const auto img = textseg::read_png_rgb(entry.path().string());
        CHECK_NOTHROW(textseg::decode_gt(img, 4));
    }
    CHECK(found);
}

TEST_CASE("eval scores perfect predictions at 1.0") {
    TempDir tmp("textseg_capi_eval_perfect");
    json cfg = toy_run_config(tmp.path / "run", 21);
    REQUIRE(ts_synth(cfg.dump().c_str()) == TS_OK);

    // ground truth posed as predictions
    const fs::path pred = tmp.path / "gt_as_pred";
    fs::create_directories(pred);
    const fs::path data = tmp.path / "run" / "data";
    for (const auto& rec : textseg::read_manifest((data / "manifest.jsonl").string())) {
        if (rec.split != "test") continue;
        fs::copy_file(data / rec.gt_path, pred / (rec.id + "_pred.png"));
    }
    cfg["eval"]["pred_dirs"] = {{"none", pred.string()}};
    REQUIRE(ts_eval(cfg.dump().c_str()) == TS_OK);

    std::ifstream in(tmp.path / "run" / "eval" / "report.jsonl");
    REQUIRE(in.good());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        const json rec = json::parse(line);
        ++rows;
        if (rec.at("defined").get<bool>())
            CHECK(rec.at("iou").get<double>() == doctest::Approx(1.0));
    }
    CHECK(rows == 3);  // PT, HT, BG
}

TEST_CASE("gradcheck runs through the C API") {
    CHECK(ts_gradcheck(0) == TS_OK);
    CHECK(ts_gradcheck(1) == TS_ERROR);  // injected fault must be caught
    CHECK(std::string(ts_last_error()).find("gradient") != std::string::npos);
}
