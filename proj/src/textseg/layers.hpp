#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "textseg/nn.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

namespace textseg {

// Storage form of one model/optimizer tensor, always 32-bit floats on disk.
struct NamedTensor {
    std::string name;
    Shape dims;
    std::vector<float> data;
};

// Registry of a model's learnable parameters and persistent buffers
// (BatchNorm running stats). Registration order is the serialization order.
template <typename S>
struct ParamSet {
    std::vector<std::pair<std::string, VarT<S>>> params;
    std::vector<std::pair<std::string, std::shared_ptr<std::vector<S>>>> buffers;

    VarT<S> add_param(const std::string& name, TensorT<S> init) {
        auto v = make_leaf<S>(std::move(init), true, name);
        params.emplace_back(name, v);
        return v;
    }

    void add_buffer(const std::string& name, std::shared_ptr<std::vector<S>> buf) {
        buffers.emplace_back(name, std::move(buf));
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, v] : params) n += v->value.size();
        return n;
    }

    std::vector<VarT<S>> param_vars() const {
        std::vector<VarT<S>> out;
        out.reserve(params.size());
        for (const auto& [name, v] : params) out.push_back(v);
        return out;
    }

    std::vector<NamedTensor> state_entries() const {
        std::vector<NamedTensor> out;
        for (const auto& [name, v] : params) {
            NamedTensor t{name, v->value.dims, {}};
            t.data.assign(v->value.data.begin(), v->value.data.end());
            out.push_back(std::move(t));
        }
        for (const auto& [name, buf] : buffers) {
            NamedTensor t{name, Shape{static_cast<int>(buf->size())}, {}};
            t.data.assign(buf->begin(), buf->end());
            out.push_back(std::move(t));
        }
        return out;
    }

    // Assigns every registered tensor from `entries`, mapping this set's
    // "<select_prefix><rest>" names to entry names "<rest>". Problems are
    // collected and reported together.
    void load_state(const std::map<std::string, NamedTensor>& entries,
                    const std::string& select_prefix = "") {
        std::vector<std::string> problems;
        auto lookup = [&](const std::string& name, const Shape& dims) -> const NamedTensor* {
            if (!select_prefix.empty() && name.rfind(select_prefix, 0) != 0) return nullptr;
            const std::string key = name.substr(select_prefix.size());
            auto it = entries.find(key);
            if (it == entries.end()) {
                problems.push_back("missing: " + key);
                return nullptr;
            }
            if (it->second.dims != dims) {
                problems.push_back("dims differ for " + key + ": model " + shape_str(dims) +
                                   ", checkpoint " + shape_str(it->second.dims));
                return nullptr;
            }
            return &it->second;
        };
        for (auto& [name, v] : params)
            if (const NamedTensor* t = lookup(name, v->value.dims))
                v->value.data.assign(t->data.begin(), t->data.end());
        for (auto& [name, buf] : buffers)
            if (const NamedTensor* t = lookup(name, Shape{static_cast<int>(buf->size())}))
                buf->assign(t->data.begin(), t->data.end());
        if (!problems.empty()) {
            std::string msg = "checkpoint does not match the model architecture:";
            for (const auto& p : problems) msg += "\n  " + p;
            throw IoError(msg);
        }
    }
};

// 3x3/1x1 convolution layer with same-zero padding. Kernels start from a
// fan-in-scaled normal (std = sqrt(2/fan_in)), biases from zero.
template <typename S>
struct Conv2dT {
    VarT<S> kernel;
    VarT<S> bias;
    int stride = 1;

    Conv2dT() = default;
    Conv2dT(int in_ch, int out_ch, int ksize, ParamSet<S>& ps, const std::string& name, Rng& rng) {
        TensorT<S> k(Shape{out_ch, in_ch, ksize, ksize});
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
        for (auto& v : k.data) v = static_cast<S>(rng.normal(0.0, std_dev));
        kernel = ps.add_param(name + "/kernel", std::move(k));
        bias = ps.add_param(name + "/bias", TensorT<S>(Shape{out_ch}));
    }

    VarT<S> operator()(const VarT<S>& x) const { return conv2d(x, kernel, bias, stride); }
};

// BatchNorm layer: gamma/beta parameters plus running statistics buffers.
template <typename S>
struct BatchNorm2dT {
    VarT<S> gamma;
    VarT<S> beta;
    std::shared_ptr<BatchNormStateT<S>> state;

    BatchNorm2dT() = default;
    BatchNorm2dT(int channels, ParamSet<S>& ps, const std::string& name) {
        TensorT<S> g(Shape{channels});
        for (auto& v : g.data) v = S(1);
        gamma = ps.add_param(name + "/gamma", std::move(g));
        beta = ps.add_param(name + "/beta", TensorT<S>(Shape{channels}));
        state = std::make_shared<BatchNormStateT<S>>(channels);
        ps.add_buffer(name + "/running_mean",
                      std::shared_ptr<std::vector<S>>(state, &state->running_mean));
        ps.add_buffer(name + "/running_var",
                      std::shared_ptr<std::vector<S>>(state, &state->running_var));
    }

    VarT<S> operator()(const VarT<S>& x, BnMode mode) const {
        return batchnorm(x, gamma, beta, *state, mode);
    }
};

}  // namespace textseg
