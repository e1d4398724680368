#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "textseg/layers.hpp"

namespace textseg {

// Full-resolution fine-feature branch: n_stages blocks of two
// (conv3x3 -> BN -> ReLU) groups whose output is concatenated with the
// stage input, then a 1x1 head. No downsampling anywhere, so stage s emits
// 3 + stage_channels*s channels at the input resolution.
struct FfpConfig {
    int n_stages = 4;
    int stage_channels = 64;
    int out_classes = 4;

    void validate() const {
        if (n_stages < 1) throw ConfigError("FFP needs at least one stage");
        if (stage_channels < 1) throw ConfigError("FFP stage width must be >= 1");
        if (out_classes != 3 && out_classes != 4) throw ConfigError("out_classes must be 3 or 4");
    }
};

enum class SspVariant { Light, MiniResidual };

// Encoder-decoder branch. The encoder runs `depth` stages of double conv +
// maxpool with widths base_channels<<i; the decoder mirrors the stage count
// with nearest-x2 upsampling, skip concatenation and one 3x3 conv per stage.
// The thin decoder keeps the default configuration inside the ~295K
// parameter band. MiniResidual adds a projected identity around each
// encoder double-conv block.
struct SspConfig {
    SspVariant variant = SspVariant::Light;
    int depth = 4;
    int base_channels = 16;
    int dec_channels = 12;
    int out_classes = 4;

    void validate() const {
        if (depth < 1) throw ConfigError("SSP needs depth >= 1");
        if (base_channels < 1 || dec_channels < 1) throw ConfigError("SSP widths must be >= 1");
        if (out_classes != 3 && out_classes != 4) throw ConfigError("out_classes must be 3 or 4");
    }
};

struct MfmConfig {
    FfpConfig ffp;
    SspConfig ssp;

    int out_classes() const { return ffp.out_classes; }
    void validate() const {
        ffp.validate();
        ssp.validate();
        if (ffp.out_classes != ssp.out_classes)
            throw ConfigError("MFM branches disagree on class count: FFP " +
                              std::to_string(ffp.out_classes) + ", SSP " +
                              std::to_string(ssp.out_classes));
    }
};

constexpr int kInputChannels = 3;

template <typename S>
class FfpT {
public:
    FfpT(const FfpConfig& cfg, ParamSet<S>& ps, const std::string& prefix, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        int in_ch = kInputChannels;
        for (int s = 0; s < cfg_.n_stages; ++s) {
            const std::string base = prefix + "s" + std::to_string(s + 1);
            Stage st;
            st.conv1 = Conv2dT<S>(in_ch, cfg_.stage_channels, 3, ps, base + "/g1/conv", rng);
            st.bn1 = BatchNorm2dT<S>(cfg_.stage_channels, ps, base + "/g1/bn");
            st.conv2 = Conv2dT<S>(cfg_.stage_channels, cfg_.stage_channels, 3, ps, base + "/g2/conv", rng);
            st.bn2 = BatchNorm2dT<S>(cfg_.stage_channels, ps, base + "/g2/bn");
            stages_.push_back(std::move(st));
            in_ch += cfg_.stage_channels;  // residual concat widens by one stage width
        }
        head_ = Conv2dT<S>(in_ch, cfg_.out_classes, 1, ps, prefix + "head/conv", rng);
    }

    VarT<S> forward_logits(const VarT<S>& x, BnMode mode,
                           std::vector<VarT<S>>* stage_outputs = nullptr) const {
        if (x->value.c() != kInputChannels)
            throw ShapeError("FFP expects " + std::to_string(kInputChannels) +
                             " input channels, got " + std::to_string(x->value.c()));
        VarT<S> cur = x;
        for (const auto& st : stages_) {
            auto g1 = relu(st.bn1(st.conv1(cur), mode));
            auto g2 = relu(st.bn2(st.conv2(g1), mode));
            cur = concat_channels(cur, g2);
            if (stage_outputs) stage_outputs->push_back(cur);
        }
        return head_(cur);
    }

    const FfpConfig& config() const { return cfg_; }

private:
    struct Stage {
        Conv2dT<S> conv1;
        BatchNorm2dT<S> bn1;
        Conv2dT<S> conv2;
        BatchNorm2dT<S> bn2;
    };
    FfpConfig cfg_;
    std::vector<Stage> stages_;
    Conv2dT<S> head_;
};

template <typename S>
class SspT {
public:
    SspT(const SspConfig& cfg, ParamSet<S>& ps, const std::string& prefix, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        int in_ch = kInputChannels;
        for (int d = 0; d < cfg_.depth; ++d) {
            const int width = cfg_.base_channels << d;
            const std::string base = prefix + "enc" + std::to_string(d);
            EncStage st;
            st.conv1 = Conv2dT<S>(in_ch, width, 3, ps, base + "/conv1", rng);
            st.bn1 = BatchNorm2dT<S>(width, ps, base + "/bn1");
            st.conv2 = Conv2dT<S>(width, width, 3, ps, base + "/conv2", rng);
            st.bn2 = BatchNorm2dT<S>(width, ps, base + "/bn2");
            if (cfg_.variant == SspVariant::MiniResidual)
                st.proj = Conv2dT<S>(in_ch, width, 1, ps, base + "/proj", rng);
            enc_.push_back(std::move(st));
            in_ch = width;
        }
        int ch = cfg_.base_channels << (cfg_.depth - 1);  // pooled bottom width
        for (int d = cfg_.depth - 1; d >= 0; --d) {
            const std::string base = prefix + "dec" + std::to_string(d);
            DecStage st;
            const int skip_ch = cfg_.base_channels << d;
            st.conv = Conv2dT<S>(ch + skip_ch, cfg_.dec_channels, 3, ps, base + "/conv", rng);
            st.bn = BatchNorm2dT<S>(cfg_.dec_channels, ps, base + "/bn");
            dec_.push_back(std::move(st));
            ch = cfg_.dec_channels;
        }
        head_ = Conv2dT<S>(cfg_.dec_channels, cfg_.out_classes, 1, ps, prefix + "head/conv", rng);
    }

    VarT<S> forward_logits(const VarT<S>& x, BnMode mode, Shape* bottleneck_dims = nullptr) const {
        if (x->value.c() != kInputChannels)
            throw ShapeError("SSP expects " + std::to_string(kInputChannels) +
                             " input channels, got " + std::to_string(x->value.c()));
        const int div = 1 << cfg_.depth;
        if (x->value.h() % div != 0 || x->value.w() % div != 0)
            throw ShapeError("SSP depth " + std::to_string(cfg_.depth) +
                             " needs spatial extents divisible by " + std::to_string(div) +
                             ", got " + shape_str(x->value.dims));

        std::vector<VarT<S>> skips;
        VarT<S> cur = x;
        for (const auto& st : enc_) {
            auto out = relu(st.bn2(st.conv2(relu(st.bn1(st.conv1(cur), mode))), mode));
            if (cfg_.variant == SspVariant::MiniResidual) out = add(out, st.proj(cur));
            skips.push_back(out);
            cur = maxpool2(out);
        }
        if (bottleneck_dims) *bottleneck_dims = cur->value.dims;
        for (int d = cfg_.depth - 1; d >= 0; --d) {
            const auto& st = dec_[static_cast<std::size_t>(cfg_.depth - 1 - d)];
            cur = upsample2(cur);
            cur = concat_channels(cur, skips[static_cast<std::size_t>(d)]);
            cur = relu(st.bn(st.conv(cur), mode));
        }
        return head_(cur);
    }

    const SspConfig& config() const { return cfg_; }

private:
    struct EncStage {
        Conv2dT<S> conv1;
        BatchNorm2dT<S> bn1;
        Conv2dT<S> conv2;
        BatchNorm2dT<S> bn2;
        Conv2dT<S> proj;  // MiniResidual only
    };
    struct DecStage {
        Conv2dT<S> conv;
        BatchNorm2dT<S> bn;
    };
    SspConfig cfg_;
    std::vector<EncStage> enc_;
    std::vector<DecStage> dec_;
    Conv2dT<S> head_;
};

// Umbrella model: BN+ReLU on each branch's class-logit map, channel concat
// (FFP first), 1x1 conv back to out_classes, softmax.
template <typename S>
class MfmT {
public:
    MfmT(const MfmConfig& cfg, ParamSet<S>& ps, const std::string& prefix, Rng& rng)
        : cfg_(cfg),
          ffp_((cfg.validate(), cfg.ffp), ps, prefix + "ffp/", rng),
          ssp_(cfg.ssp, ps, prefix + "ssp/", rng),
          ffp_bn_(cfg.out_classes(), ps, prefix + "ffp_bn"),
          ssp_bn_(cfg.out_classes(), ps, prefix + "ssp_bn"),
          head_(2 * cfg.out_classes(), cfg.out_classes(), 1, ps, prefix + "head/conv", rng) {}

    struct Parts {
        VarT<S> ffp_logits;
        VarT<S> ssp_logits;
        VarT<S> concat;
        VarT<S> logits;
    };

    Parts forward_parts(const VarT<S>& x, BnMode mode) const {
        Parts p;
        p.ffp_logits = ffp_.forward_logits(x, mode);
        p.ssp_logits = ssp_.forward_logits(x, mode);
        auto f = relu(ffp_bn_(p.ffp_logits, mode));
        auto s = relu(ssp_bn_(p.ssp_logits, mode));
        p.concat = concat_channels(f, s);
        p.logits = head_(p.concat);
        return p;
    }

    VarT<S> forward_logits(const VarT<S>& x, BnMode mode) const {
        return forward_parts(x, mode).logits;
    }

    const MfmConfig& config() const { return cfg_; }
    const FfpT<S>& ffp() const { return ffp_; }
    const SspT<S>& ssp() const { return ssp_; }

private:
    MfmConfig cfg_;
    FfpT<S> ffp_;
    SspT<S> ssp_;
    BatchNorm2dT<S> ffp_bn_;
    BatchNorm2dT<S> ssp_bn_;
    Conv2dT<S> head_;
};

enum class ModelArch { Ffp, SspLight, SspMiniResidual, Mfm };

inline const char* model_arch_name(ModelArch a) {
    switch (a) {
        case ModelArch::Ffp: return "ffp";
        case ModelArch::SspLight: return "ssp-light";
        case ModelArch::SspMiniResidual: return "ssp-mini-residual";
        case ModelArch::Mfm: return "mfm";
    }
    return "?";
}

inline ModelArch model_arch_from_name(const std::string& s) {
    if (s == "ffp") return ModelArch::Ffp;
    if (s == "ssp-light") return ModelArch::SspLight;
    if (s == "ssp-mini-residual") return ModelArch::SspMiniResidual;
    if (s == "mfm") return ModelArch::Mfm;
    throw ConfigError("unknown model architecture '" + s + "'");
}

struct ModelConfig {
    ModelArch arch = ModelArch::Mfm;
    FfpConfig ffp;
    SspConfig ssp;

    int out_classes() const { return arch == ModelArch::Ffp ? ffp.out_classes : ssp.out_classes; }

    void set_classes(int classes) {
        ffp.out_classes = classes;
        ssp.out_classes = classes;
    }
};

// Uniform front for the three architectures, owning the parameter registry.
template <typename S>
class ModelT {
public:
    ModelT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(substream_seed(seed, 0x90DE1ULL));
        switch (cfg.arch) {
            case ModelArch::Ffp:
                impl_.template emplace<FfpT<S>>(cfg.ffp, params_, "", rng);
                break;
            case ModelArch::SspLight:
            case ModelArch::SspMiniResidual: {
                SspConfig sc = cfg.ssp;
                sc.variant = cfg.arch == ModelArch::SspLight ? SspVariant::Light
                                                             : SspVariant::MiniResidual;
                impl_.template emplace<SspT<S>>(sc, params_, "", rng);
                break;
            }
            case ModelArch::Mfm:
                impl_.template emplace<MfmT<S>>(MfmConfig{cfg.ffp, cfg.ssp}, params_, "", rng);
                break;
        }
    }

    VarT<S> forward_logits(const VarT<S>& x, BnMode mode) const {
        return std::visit([&](const auto& m) -> VarT<S> {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                throw UsageError("model not initialized");
            else
                return m.forward_logits(x, mode);
        }, impl_);
    }

    VarT<S> forward(const VarT<S>& x, BnMode mode) const {
        return softmax_channels(forward_logits(x, mode));
    }

    const ModelConfig& config() const { return cfg_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }
    std::int64_t parameter_count() const { return params_.parameter_count(); }

    const MfmT<S>* as_mfm() const { return std::get_if<MfmT<S>>(&impl_); }
    const SspT<S>* as_ssp() const { return std::get_if<SspT<S>>(&impl_); }
    const FfpT<S>* as_ffp() const { return std::get_if<FfpT<S>>(&impl_); }

private:
    ModelConfig cfg_;
    ParamSet<S> params_;
    std::variant<std::monostate, FfpT<S>, SspT<S>, MfmT<S>> impl_;
};

using Model = ModelT<float>;

}  // namespace textseg
