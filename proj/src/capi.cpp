#include "textseg.h"

#include <cstring>
#include <string>

#include "textseg/data.hpp"
#include "textseg/pipeline.hpp"
#include "textseg/trainer.hpp"

namespace {

thread_local std::string g_last_error;

void set_last_error(const char* msg) { g_last_error = msg ? msg : ""; }

// Usage-class failures (bad config, bad arguments, missing files) map to
// TS_USAGE_ERROR; anything else is TS_ERROR.
template <typename Fn>
ts_status wrap(Fn&& fn) {
    try {
        g_last_error.clear();
        fn();
        return TS_OK;
    } catch (const textseg::ConfigError& e) {
        set_last_error(e.what());
    } catch (const textseg::ValueError& e) {
        set_last_error(e.what());
    } catch (const textseg::UsageError& e) {
        set_last_error(e.what());
    } catch (const textseg::IoError& e) {
        set_last_error(e.what());
    } catch (const textseg::DecodeError& e) {
        set_last_error(e.what());
    } catch (const std::exception& e) {
        set_last_error(e.what());
        return TS_ERROR;
    }
    return TS_USAGE_ERROR;
}

std::string to_string_or_empty(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

struct ts_model {
    textseg::Model impl;
};

extern "C" {

const char* ts_version(void) { return "textseg 1.0.0"; }

const char* ts_last_error(void) { return g_last_error.c_str(); }

ts_status ts_synth(const char* config_json) {
    return wrap([&] { textseg::cmd_synth(textseg::parse_run_config(to_string_or_empty(config_json))); });
}

ts_status ts_train(const char* config_json) {
    return wrap([&] { textseg::cmd_train(textseg::parse_run_config(to_string_or_empty(config_json))); });
}

ts_status ts_infer(const char* config_json) {
    return wrap([&] { textseg::cmd_infer(textseg::parse_run_config(to_string_or_empty(config_json))); });
}

ts_status ts_postprocess(const char* config_json) {
    return wrap(
        [&] { textseg::cmd_postprocess(textseg::parse_run_config(to_string_or_empty(config_json))); });
}

ts_status ts_eval(const char* config_json) {
    return wrap([&] { textseg::cmd_eval(textseg::parse_run_config(to_string_or_empty(config_json))); });
}

ts_status ts_gradcheck(int inject_fault) {
    bool ok = false;
    const ts_status st = wrap([&] { ok = textseg::cmd_gradcheck(inject_fault != 0); });
    if (st != TS_OK) return st;
    if (!ok) {
        g_last_error = "gradient check failures (see report)";
        return TS_ERROR;
    }
    return TS_OK;
}

ts_model* ts_model_create(const char* model_json, uint64_t seed) {
    ts_model* handle = nullptr;
    wrap([&] {
        const auto cfg = textseg::parse_model_config(to_string_or_empty(model_json));
        handle = new ts_model{textseg::Model(cfg, seed)};
    });
    return handle;
}

ts_model* ts_model_open(const char* model_json, const char* checkpoint_path) {
    ts_model* handle = nullptr;
    wrap([&] {
        if (!checkpoint_path) throw textseg::UsageError("checkpoint_path is null");
        const auto cfg = textseg::parse_model_config(to_string_or_empty(model_json));
        auto model = textseg::Model(cfg, 0);
        textseg::load_model_state(model, textseg::load_checkpoint(checkpoint_path));
        handle = new ts_model{std::move(model)};
    });
    return handle;
}

void ts_model_free(ts_model* model) { delete model; }

int64_t ts_model_parameter_count(const ts_model* model) {
    return model ? model->impl.parameter_count() : 0;
}

int ts_model_classes(const ts_model* model) {
    return model ? model->impl.config().out_classes() : 0;
}

ts_status ts_model_save(const ts_model* model, const char* checkpoint_path) {
    return wrap([&] {
        if (!model || !checkpoint_path)
            throw textseg::UsageError("ts_model_save needs a model and a path");
        textseg::save_checkpoint(checkpoint_path,
                                 textseg::make_checkpoint(model->impl, nullptr, 0, 0.0));
    });
}

ts_status ts_model_predict(ts_model* model, const uint8_t* gray, int height, int width,
                           float* probs_out) {
    return wrap([&] {
        if (!model || !gray || !probs_out)
            throw textseg::UsageError("ts_model_predict got a null argument");
        if (height < 1 || width < 1) throw textseg::UsageError("image extents must be positive");
        textseg::TensorT<float> input(textseg::Shape{1, 3, height, width});
        const std::size_t plane = static_cast<std::size_t>(height) * width;
        for (std::size_t i = 0; i < plane; ++i) {
            const float v = static_cast<float>(gray[i]) / 255.0f;
            input.data[i] = v;
            input.data[plane + i] = v;
            input.data[2 * plane + i] = v;
        }
        auto prob = model->impl.forward(textseg::make_leaf<float>(std::move(input)),
                                        textseg::BnMode::Inference);
        std::memcpy(probs_out, prob->value.data.data(), prob->value.data.size() * sizeof(float));
    });
}

}  // extern "C"
