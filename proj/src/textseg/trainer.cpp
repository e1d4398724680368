#include "textseg/trainer.hpp"

#include <cmath>
#include <limits>

#include "textseg/metrics.hpp"

namespace textseg {

namespace {

std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size,
                                           const std::vector<int>& order) {
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace

std::pair<double, double> evaluate_model(const Model& model, const Dataset& data,
                                         const LossSpec& loss, int batch_size) {
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);

    double loss_sum = 0.0;
    std::int64_t samples = 0;
    ConfusionCounts counts;
    for (const auto& batch : make_batches(data.size(), batch_size, order)) {
        auto input = make_leaf<float>(make_input_batch(data, batch));
        auto gt = make_leaf<float>(make_gt_batch(data, batch));
        auto pred = model.forward(input, BnMode::Inference);
        auto l = segmentation_loss<float>(pred, gt, loss);
        loss_sum += static_cast<double>(l->value.data[0]) * static_cast<double>(batch.size());
        samples += static_cast<std::int64_t>(batch.size());

        const auto& pv = pred->value;
        const std::size_t chw = static_cast<std::size_t>(pv.c()) * pv.h() * pv.w();
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const LabelMap pm = labelmap_from_probs(pv.data.data() + b * chw, pv.c(), pv.h(), pv.w());
            counts += count_confusion(pm, data[static_cast<std::size_t>(batch[b])].gt);
        }
    }
    const IouReport rep = report_from_counts(counts);
    return {loss_sum / static_cast<double>(samples), rep.mean};
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw ValueError("train and validation sets must be nonempty");

    LossSpec loss = cfg.loss;
    if (loss.weights.empty() && loss.kind != LossKind::CE && loss.kind != LossKind::Focal &&
        loss.kind != LossKind::Dice) {
        auto d = default_class_weights(model.config().out_classes());
        loss.weights.assign(d.begin(), d.end());
    }

    Adam optimizer(model.params());
    PlateauScheduler scheduler(cfg.lr0, cfg.lr_patience, cfg.lr_factor);
    Rng shuffle_rng(substream_seed(cfg.seed, 0x5A0FF1EULL));

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    const auto params = model.params().param_vars();

    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        std::int64_t seen = 0;
        for (const auto& batch : make_batches(train_set.size(), cfg.batch_size, order)) {
            auto input = make_leaf<float>(make_input_batch(train_set, batch));
            auto gt = make_leaf<float>(make_gt_batch(train_set, batch));
            auto pred = model.forward(input, BnMode::Training);
            auto l = segmentation_loss<float>(pred, gt, loss);
            const double lv = static_cast<double>(l->value.data[0]);
            if (!std::isfinite(lv))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(optimizer.steps() + 1));
            zero_grads(params);
            backward(l);
            optimizer.step(scheduler.lr());
            result.step_losses.push_back(lv);
            epoch_loss += lv * static_cast<double>(batch.size());
            seen += static_cast<std::int64_t>(batch.size());
        }

        const auto [val_loss, val_miou] = evaluate_model(model, val_set, loss, cfg.batch_size);
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(seen);
        log.val_loss = val_loss;
        log.val_mean_iou = val_miou;
        log.lr = scheduler.lr();
        result.epochs.push_back(log);

        if (val_loss < result.best_val_loss - 1e-6 || result.best_state.empty()) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.best_state = model.params().state_entries();
            const auto opt = optimizer.state_entries();
            result.best_state.insert(result.best_state.end(), opt.begin(), opt.end());
        }
        scheduler.observe(val_loss);
    }
    return result;
}

void transfer_init(Model& mfm, const Checkpoint& ssp_checkpoint) {
    if (!mfm.as_mfm()) throw ConfigError("transfer_init target must be an MFM model");
    mfm.params().load_state(ssp_checkpoint.index(), "ssp/");
}

void load_model_state(Model& model, const Checkpoint& ckpt) {
    model.params().load_state(ckpt.index());
}

Checkpoint make_checkpoint(const Model& model, const std::vector<NamedTensor>* optimizer_state,
                           int epoch, double best_val_loss) {
    Checkpoint ckpt;
    ckpt.entries = model.params().state_entries();
    if (optimizer_state)
        ckpt.entries.insert(ckpt.entries.end(), optimizer_state->begin(), optimizer_state->end());
    ckpt.add_scalar("meta/epoch", epoch);
    ckpt.add_scalar("meta/best_val_loss", best_val_loss);
    return ckpt;
}

}  // namespace textseg
