#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "support/fd_oracle.hpp"
#include "textseg/labelcodec.hpp"
#include "textseg/losses.hpp"
#include "textseg/models.hpp"

using namespace textseg;

namespace {

Var random_input(int n, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{n, 3, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return make_leaf<float>(std::move(t));
}

}  // namespace

TEST_CASE("ffp stage channel counts follow the residual concatenation") {
    ParamSet<float> ps;
    Rng rng(1);
    FfpT<float> ffp(FfpConfig{4, 64, 4}, ps, "", rng);

    auto x = random_input(1, 16, 16, 2);
    std::vector<Var> stages;
    auto logits = ffp.forward_logits(x, BnMode::Training, &stages);

    REQUIRE(stages.size() == 4);
    CHECK(stages[0]->value.c() == 67);
    CHECK(stages[1]->value.c() == 131);
    CHECK(stages[2]->value.c() == 195);
    CHECK(stages[3]->value.c() == 259);
    CHECK(logits->value.dims == Shape{1, 4, 16, 16});

    // no downsampling anywhere: odd sizes work too
    auto x2 = random_input(1, 10, 14, 3);
    CHECK(ffp.forward_logits(x2, BnMode::Training)->value.dims == Shape{1, 4, 10, 14});

    Tensor wrong(Shape{1, 4, 16, 16});
    CHECK_THROWS_AS(ffp.forward_logits(make_leaf<float>(wrong), BnMode::Training), ShapeError);
}

TEST_CASE("ssp halves and restores spatial dims with a depth-4 bottleneck") {
    ParamSet<float> ps;
    Rng rng(1);
    SspT<float> ssp(SspConfig{SspVariant::Light, 4, 4, 4, 4}, ps, "", rng);

    auto x = random_input(1, 64, 64, 5);
    Shape bottleneck;
    auto logits = ssp.forward_logits(x, BnMode::Training, &bottleneck);
    CHECK(bottleneck == Shape{1, 32, 4, 4});  // 64 -> 32 -> 16 -> 8 -> 4
    CHECK(logits->value.dims == Shape{1, 4, 64, 64});

    // extents not divisible by 2^depth are rejected
    auto bad = random_input(1, 48, 40, 6);
    CHECK_THROWS_AS(ssp.forward_logits(bad, BnMode::Training), ShapeError);
}

TEST_CASE("ssp variants differ in values but not in shape") {
    auto x = random_input(2, 16, 16, 7);
    ParamSet<float> ps1, ps2;
    Rng r1(9), r2(9);
    SspT<float> light(SspConfig{SspVariant::Light, 2, 4, 4, 4}, ps1, "", r1);
    SspT<float> residual(SspConfig{SspVariant::MiniResidual, 2, 4, 4, 4}, ps2, "", r2);
    auto a = light.forward_logits(x, BnMode::Training);
    auto b = residual.forward_logits(x, BnMode::Training);
    CHECK(a->value.dims == b->value.dims);
    CHECK(ps2.parameter_count() > ps1.parameter_count());  // projection shortcuts
}

TEST_CASE("mfm concat stage carries 2*classes channels and softmax output") {
    MfmConfig cfg;
    cfg.ffp = FfpConfig{1, 4, 4};
    cfg.ssp = SspConfig{SspVariant::Light, 2, 4, 4, 4};
    ParamSet<float> ps;
    Rng rng(3);
    MfmT<float> mfm(cfg, ps, "", rng);

    auto x = random_input(1, 16, 16, 8);
    const auto parts = mfm.forward_parts(x, BnMode::Training);
    CHECK(parts.ffp_logits->value.c() == 4);
    CHECK(parts.ssp_logits->value.c() == 4);
    CHECK(parts.concat->value.c() == 8);
    CHECK(parts.logits->value.dims == Shape{1, 4, 16, 16});

    auto prob = softmax_channels(parts.logits);
    for (int i = 0; i < 256; ++i) {
        float sum = 0;
        for (int c = 0; c < 4; ++c) sum += prob->value.at4(0, c, i / 16, i % 16);
        CHECK(std::abs(sum - 1.0f) <= 1e-6f);
    }

    // class-count mismatch between branches is a config error
    MfmConfig bad = cfg;
    bad.ffp.out_classes = 3;
    ParamSet<float> ps2;
    Rng rng2(3);
    CHECK_THROWS_AS(MfmT<float>(bad, ps2, "", rng2), ConfigError);
}

TEST_CASE("confident head logits dominate the softmax") {
    // logits (10,-10,-10,-10) at a pixel put essentially all mass on class 0
    Tensor logits(Shape{1, 4, 1, 1}, {10.0f, -10.0f, -10.0f, -10.0f});
    auto prob = softmax_channels(make_leaf<float>(logits));
    CHECK(prob->value.data[0] > 0.999f);
    CHECK(labelmap_from_probs(prob->value.data.data(), 4, 1, 1).at(0, 0) == Cls::PT);
}

TEST_CASE("parameter counts: arithmetic, regression constant and target band") {
    // single 3x3 conv, 3 -> 64 channels with bias
    ParamSet<float> ps;
    Rng rng(1);
    Conv2dT<float> conv(3, 64, 3, ps, "c", rng);
    CHECK(ps.parameter_count() == 3 * 64 * 9 + 64);

    // FFP at the default configuration; constant derived once from the
    // per-stage layer dims: stage s takes 3+64*(s-1) channels into G1.
    ModelConfig ffp_cfg;
    ffp_cfg.arch = ModelArch::Ffp;
    Model ffp(ffp_cfg, 1);
    std::int64_t expect = 0;
    int in_ch = 3;
    for (int s = 0; s < 4; ++s) {
        expect += static_cast<std::int64_t>(in_ch) * 64 * 9 + 64 + 2 * 64;  // G1 conv + BN
        expect += 64LL * 64 * 9 + 64 + 2 * 64;                              // G2 conv + BN
        in_ch += 64;
    }
    expect += static_cast<std::int64_t>(in_ch) * 4 + 4;  // 1x1 head
    CHECK(expect == 378128);
    CHECK(ffp.parameter_count() == expect);

    // SSP-light lands inside the 250K-350K band
    ModelConfig ssp_cfg;
    ssp_cfg.arch = ModelArch::SspLight;
    Model ssp(ssp_cfg, 1);
    CHECK(ssp.parameter_count() >= 250000);
    CHECK(ssp.parameter_count() <= 350000);
}

TEST_CASE("model forward emits a per-pixel probability simplex") {
    for (const char* arch : {"ffp", "ssp-light", "ssp-mini-residual", "mfm"}) {
        ModelConfig cfg;
        cfg.arch = model_arch_from_name(arch);
        cfg.ffp = FfpConfig{1, 4, 4};
        cfg.ssp = SspConfig{SspVariant::Light, 2, 4, 4, 4};
        Model model(cfg, 11);
        auto x = random_input(1, 16, 16, 12);
        auto prob = model.forward(x, BnMode::Inference);
        CHECK(prob->value.dims == Shape{1, 4, 16, 16});
        for (int i = 0; i < 256; ++i) {
            float sum = 0;
            for (int c = 0; c < 4; ++c) {
                const float v = prob->value.at4(0, c, i / 16, i % 16);
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0f) <= 1e-6f);
        }
    }
}

TEST_CASE("mfm output is a pure function of its branch outputs") {
    MfmConfig cfg;
    cfg.ffp = FfpConfig{1, 4, 4};
    cfg.ssp = SspConfig{SspVariant::Light, 2, 4, 4, 4};
    ParamSet<float> ps;
    Rng rng(21);
    MfmT<float> mfm(cfg, ps, "", rng);
    auto x = random_input(1, 16, 16, 22);

    // repeated forwards agree bit for bit, in both modes (training mode
    // updates running stats but those never feed the training-mode output)
    for (BnMode mode : {BnMode::Training, BnMode::Inference}) {
        const auto a = mfm.forward_parts(x, mode);
        const auto b = mfm.forward_parts(x, mode);
        CHECK(std::memcmp(a.logits->value.data.data(), b.logits->value.data.data(),
                          a.logits->value.data.size() * sizeof(float)) == 0);
        // identical branch outputs imply identical head output
        CHECK(std::memcmp(a.ffp_logits->value.data.data(), b.ffp_logits->value.data.data(),
                          a.ffp_logits->value.data.size() * sizeof(float)) == 0);
        CHECK(std::memcmp(a.concat->value.data.data(), b.concat->value.data.data(),
                          a.concat->value.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("same seed builds bit-identical models") {
    ModelConfig cfg;
    cfg.arch = ModelArch::Mfm;
    cfg.ffp = FfpConfig{2, 8, 4};
    cfg.ssp = SspConfig{SspVariant::Light, 2, 8, 8, 4};
    Model a(cfg, 42), b(cfg, 42), c(cfg, 43);
    const auto ea = a.params().state_entries();
    const auto eb = b.params().state_entries();
    const auto ec = c.params().state_entries();
    REQUIRE(ea.size() == eb.size());
    bool all_equal_ab = true, all_equal_ac = true;
    for (std::size_t i = 0; i < ea.size(); ++i) {
        all_equal_ab = all_equal_ab &&
                       std::memcmp(ea[i].data.data(), eb[i].data.data(),
                                   ea[i].data.size() * sizeof(float)) == 0;
        all_equal_ac = all_equal_ac &&
                       std::memcmp(ea[i].data.data(), ec[i].data.data(),
                                   ea[i].data.size() * sizeof(float)) == 0;
    }
    CHECK(all_equal_ab);
    CHECK_FALSE(all_equal_ac);
}

TEST_CASE("end-to-end toy MFM gradients match finite differences") {
    ModelConfig cfg;
    cfg.arch = ModelArch::Mfm;
    cfg.ffp = FfpConfig{1, 4, 4};
    cfg.ssp = SspConfig{SspVariant::Light, 2, 4, 4, 4};
    ModelT<double> model(cfg, 99);

    Rng rng(20240811);
    TensorT<double> input = testsupport::random_tensor({1, 3, 16, 16}, rng, 0.5);
    TensorT<double> gt_t(Shape{1, 4, 16, 16});
    for (std::size_t i = 0; i < 256; ++i) gt_t.data[rng.below(4) * 256 + i] = 1.0;
    auto x = make_leaf<double>(input);
    auto gt = make_leaf<double>(gt_t);
    auto build = [&] { return ce_loss<double>(model.forward(x, BnMode::Training), gt); };
    CHECK(testsupport::fd_max_rel_err(build, model.params().param_vars(), 1e-4) <= 1e-3);
}
