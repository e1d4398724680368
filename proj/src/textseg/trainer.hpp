#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "textseg/checkpoint.hpp"
#include "textseg/data.hpp"
#include "textseg/losses.hpp"
#include "textseg/models.hpp"

namespace textseg {

// Adam with bias-corrected first/second moments. Moment buffers are keyed by
// parameter name for checkpointing.
template <typename S = float>
class AdamT {
public:
    struct Config {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit AdamT(const ParamSet<S>& params, Config cfg = {}) : cfg_(cfg) {
        for (const auto& [name, v] : params.params) {
            slots_.push_back({name, v, std::vector<S>(v->value.data.size(), S(0)),
                              std::vector<S>(v->value.data.size(), S(0))});
        }
    }

    // One update from the gradients currently stored on the parameters.
    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& slot : slots_) {
            auto& p = slot.param;
            if (p->grad.empty()) continue;  // parameter untouched by the last backward
            if (p->grad.size() != p->value.data.size())
                throw ShapeError("gradient/parameter size mismatch on " + slot.name);
            for (std::size_t i = 0; i < p->value.data.size(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                slot.m[i] = static_cast<S>(cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g);
                slot.v[i] = static_cast<S>(cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g);
                const double mhat = static_cast<double>(slot.m[i]) / bc1;
                const double vhat = static_cast<double>(slot.v[i]) / bc2;
                p->value.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }

    std::vector<NamedTensor> state_entries() const {
        std::vector<NamedTensor> out;
        for (const auto& slot : slots_) {
            NamedTensor m{"opt/m/" + slot.name, slot.param->value.dims, {}};
            m.data.assign(slot.m.begin(), slot.m.end());
            out.push_back(std::move(m));
            NamedTensor v{"opt/v/" + slot.name, slot.param->value.dims, {}};
            v.data.assign(slot.v.begin(), slot.v.end());
            out.push_back(std::move(v));
        }
        out.push_back({"opt/t", Shape{1}, {static_cast<float>(t_)}});
        return out;
    }

private:
    struct Slot {
        std::string name;
        VarT<S> param;
        std::vector<S> m;
        std::vector<S> v;
    };
    Config cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

using Adam = AdamT<float>;

// Divide-on-plateau schedule: the rate shrinks by `factor` when the
// validation loss has not improved by more than min_delta for `patience`
// consecutive epochs.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, int patience = 4, double factor = 0.1, double min_delta = 1e-6)
        : lr_(lr0), patience_(patience), factor_(factor), min_delta_(min_delta) {}

    double lr() const { return lr_; }

    // Returns true when this observation reduced the rate.
    bool observe(double val_loss) {
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            stall_ = 0;
            return false;
        }
        if (++stall_ >= patience_) {
            lr_ *= factor_;
            stall_ = 0;
            return true;
        }
        return false;
    }

private:
    double lr_;
    int patience_;
    double factor_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int stall_ = 0;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    double lr0 = 0.001;
    int lr_patience = 4;
    double lr_factor = 0.1;
    LossSpec loss;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr factor must be in (0,1)");
        if (lr_patience < 1) throw ConfigError("lr patience must be >= 1");
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mean_iou = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<NamedTensor> best_state;  // model + optimizer at the best epoch
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<EpochLog> epochs;
    std::vector<double> step_losses;  // per optimizer step, in order
};

// Full training loop: shuffled mini-batches, Adam updates, per-epoch
// validation loss / mean IoU, plateau LR schedule, best-checkpoint
// retention. Aborts with NumericError if the loss turns non-finite.
TrainResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg);

// Validation-style evaluation: mean loss and micro-averaged mean IoU of
// argmax predictions, inference-mode forward.
std::pair<double, double> evaluate_model(const Model& model, const Dataset& data,
                                         const LossSpec& loss, int batch_size);

// Copies every SSP-branch tensor of an MFM bit-exactly from a standalone SSP
// checkpoint, leaving FFP and head parameters at their fresh initialization.
// Architecture mismatches raise IoError listing the differing tensors.
void transfer_init(Model& mfm, const Checkpoint& ssp_checkpoint);

// Assembles a checkpoint from model (+ optional optimizer) state.
Checkpoint make_checkpoint(const Model& model, const std::vector<NamedTensor>* optimizer_state,
                           int epoch, double best_val_loss);

// Restores every model tensor from a checkpoint (ignoring optimizer and
// metadata records).
void load_model_state(Model& model, const Checkpoint& ckpt);

}  // namespace textseg
