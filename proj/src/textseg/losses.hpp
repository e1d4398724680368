#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

enum class LossKind { CE, WCE, Focal, WF, Dice, WD, Fusion };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::CE: return "ce";
        case LossKind::WCE: return "wce";
        case LossKind::Focal: return "focal";
        case LossKind::WF: return "wf";
        case LossKind::Dice: return "dice";
        case LossKind::WD: return "wd";
        case LossKind::Fusion: return "fusion";
    }
    return "?";
}

inline LossKind loss_kind_from_name(const std::string& s) {
    if (s == "ce") return LossKind::CE;
    if (s == "wce") return LossKind::WCE;
    if (s == "focal") return LossKind::Focal;
    if (s == "wf") return LossKind::WF;
    if (s == "dice") return LossKind::Dice;
    if (s == "wd") return LossKind::WD;
    if (s == "fusion") return LossKind::Fusion;
    throw ValueError("unknown loss '" + s + "'");
}

// Class weights in fixed (PT, HT, BG[, OV]) channel order.
inline std::vector<double> default_class_weights(int classes) {
    if (classes == 4) return {0.3, 0.3, 0.1, 0.3};
    if (classes == 3) return {0.4, 0.5, 0.1};
    throw ValueError("class weights defined for 3 or 4 classes, got " + std::to_string(classes));
}

template <typename S>
struct LossSpecT {
    LossKind kind = LossKind::Fusion;
    S gamma = S(2);
    std::vector<S> weights;  // per class; empty selects the defaults for C
    S dice_smooth = S(1e-6);
    static constexpr double kLogClamp = 1e-7;
};

using LossSpec = LossSpecT<float>;

namespace detail {

template <typename S>
void check_pred_gt(const TensorT<S>& pred, const TensorT<S>& gt) {
    if (pred.dims.size() != 4)
        throw ShapeError("loss expects NCHW prediction, got " + shape_str(pred.dims));
    if (!same_shape(pred.dims, gt.dims))
        throw ShapeError("loss pred/gt mismatch: " + shape_str(pred.dims) + " vs " +
                         shape_str(gt.dims));
}

template <typename S>
std::vector<S> resolve_weights(const std::vector<S>& w, int classes) {
    if (w.empty()) {
        auto d = default_class_weights(classes);
        return std::vector<S>(d.begin(), d.end());
    }
    if (static_cast<int>(w.size()) != classes)
        throw ShapeError("weight vector length " + std::to_string(w.size()) +
                         " != class count " + std::to_string(classes));
    return w;
}

template <typename S>
void check_alpha(const std::vector<S>& alpha) {
    S sum(0);
    for (S a : alpha) {
        if (!(a > S(0) && a < S(1)))
            throw ValueError("focal alpha weights must lie in (0,1)");
        sum += a;
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-5)
        throw ValueError("focal alpha weights must sum to 1, got " +
                         std::to_string(static_cast<double>(sum)));
}

// Shared node for the cross-entropy family:
//   mean over pixels of  -sum_m gt * w_m * (1-p)^gamma * log(max(p, clamp))
// CE is w=1, gamma=0; WCE adds w; Focal adds the modulating term; WF both.
template <typename S>
VarT<S> ce_family(const VarT<S>& pred, const VarT<S>& gt, std::vector<S> w, S gamma) {
    check_pred_gt(pred->value, gt->value);
    if (gamma < S(0)) throw ValueError("focal gamma must be >= 0");
    const TensorT<S>& pv = pred->value;
    const TensorT<S>& gv = gt->value;
    const int n = pv.n(), c = pv.c(), h = pv.h(), w_ = pv.w();
    if (static_cast<int>(w.size()) != c)
        throw ShapeError("weight vector length != class count");
    const std::int64_t plane = static_cast<std::int64_t>(h) * w_;
    const std::int64_t pixels = static_cast<std::int64_t>(n) * plane;
    const S clamp = S(LossSpecT<S>::kLogClamp);

    double acc = 0.0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
            const double wm = static_cast<double>(w[ic]);
            for (std::int64_t i = 0; i < plane; ++i) {
                const double g = static_cast<double>(gv.data[base + i]);
                if (g == 0.0) continue;
                const double p = static_cast<double>(pv.data[base + i]);
                const double pc = std::max(p, static_cast<double>(clamp));
                double mod = 1.0;
                if (gamma != S(0)) mod = std::pow(std::max(1.0 - p, 0.0), static_cast<double>(gamma));
                acc -= g * wm * mod * std::log(pc);
            }
        }
    TensorT<S> out(Shape{1}, {static_cast<S>(acc / static_cast<double>(pixels))});

    auto bp = [w = std::move(w), gamma, n, c, plane, pixels, clamp](NodeT<S>& self) {
        const auto& pn = self.parents[0];
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const auto& gn = self.parents[1];
        const S gout = self.grad[0];
        const S inv_pixels = S(1) / static_cast<S>(pixels);
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
                const S wm = w[ic];
                for (std::int64_t i = 0; i < plane; ++i) {
                    const S g = gn->value.data[base + i];
                    if (g == S(0)) continue;
                    const S p = pn->value.data[base + i];
                    const S pc = std::max(p, clamp);
                    const S om = std::max(S(1) - p, S(0));
                    S d(0);
                    if (gamma > S(0) && om > S(0))
                        d += gamma * std::pow(om, gamma - S(1)) * std::log(pc);
                    S mod = S(1);
                    if (gamma != S(0)) mod = std::pow(om, gamma);
                    if (p > clamp) d -= mod / pc;
                    pn->grad[base + i] += gout * g * wm * d * inv_pixels;
                }
            }
    };
    return make_node<S>(std::move(out), {pred, gt}, std::move(bp));
}

}  // namespace detail

template <typename S>
VarT<S> ce_loss(const VarT<S>& pred, const VarT<S>& gt) {
    const int c = pred->value.c();
    return detail::ce_family<S>(pred, gt, std::vector<S>(c, S(1)), S(0));
}

template <typename S>
VarT<S> wce_loss(const VarT<S>& pred, const VarT<S>& gt, const std::vector<S>& w) {
    return detail::ce_family<S>(pred, gt, detail::resolve_weights(w, pred->value.c()), S(0));
}

template <typename S>
VarT<S> focal_loss(const VarT<S>& pred, const VarT<S>& gt, S gamma) {
    const int c = pred->value.c();
    return detail::ce_family<S>(pred, gt, std::vector<S>(c, S(1)), gamma);
}

template <typename S>
VarT<S> weighted_focal_loss(const VarT<S>& pred, const VarT<S>& gt,
                            const std::vector<S>& alpha, S gamma) {
    auto a = detail::resolve_weights(alpha, pred->value.c());
    detail::check_alpha(a);
    return detail::ce_family<S>(pred, gt, std::move(a), gamma);
}

// Per-class soft precision/recall accumulated over every pixel of the batch.
template <typename S>
struct DiceStatsT {
    std::vector<S> intersection;  // sum of pred*gt per class
    std::vector<S> pred_sum;      // sum of pred per class
    std::vector<S> gt_sum;        // sum of gt per class
    std::vector<S> precision;
    std::vector<S> recall;
};

template <typename S>
DiceStatsT<S> dice_stats(const TensorT<S>& pred, const TensorT<S>& gt, S smooth) {
    detail::check_pred_gt(pred, gt);
    const int n = pred.n(), c = pred.c();
    const std::int64_t plane = static_cast<std::int64_t>(pred.h()) * pred.w();
    DiceStatsT<S> st;
    st.intersection.assign(c, S(0));
    st.pred_sum.assign(c, S(0));
    st.gt_sum.assign(c, S(0));
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
            S isum(0), psum(0), gsum(0);
            for (std::int64_t i = 0; i < plane; ++i) {
                const S p = pred.data[base + i];
                const S g = gt.data[base + i];
                isum += p * g;
                psum += p;
                gsum += g;
            }
            st.intersection[ic] += isum;
            st.pred_sum[ic] += psum;
            st.gt_sum[ic] += gsum;
        }
    st.precision.resize(c);
    st.recall.resize(c);
    for (int ic = 0; ic < c; ++ic) {
        st.precision[ic] = st.intersection[ic] / (st.pred_sum[ic] + smooth);
        st.recall[ic] = st.intersection[ic] / (st.gt_sum[ic] + smooth);
    }
    return st;
}

// Soft dice loss: 1 - (2/M) sum_m w_m * prec_m*rec_m / (prec_m+rec_m+smooth),
// with precision/recall pooled over the whole batch per class.
template <typename S>
VarT<S> weighted_dice_loss(const VarT<S>& pred, const VarT<S>& gt, const std::vector<S>& w_in,
                           S smooth = S(1e-6)) {
    if (smooth <= S(0)) throw ValueError("dice smooth must be > 0");
    const int c = pred->value.c();
    std::vector<S> w = detail::resolve_weights(w_in, c);
    auto st = dice_stats(pred->value, gt->value, smooth);

    S fsum(0);
    for (int ic = 0; ic < c; ++ic) {
        const S p = st.precision[ic], r = st.recall[ic];
        fsum += w[ic] * p * r / (p + r + smooth);
    }
    TensorT<S> out(Shape{1}, {S(1) - (S(2) / static_cast<S>(c)) * fsum});

    auto bp = [w = std::move(w), st = std::move(st), smooth, c](NodeT<S>& self) {
        const auto& pn = self.parents[0];
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const auto& gn = self.parents[1];
        const S gout = self.grad[0];
        const int n = pn->value.n();
        const std::int64_t plane = static_cast<std::int64_t>(pn->value.h()) * pn->value.w();
        for (int ic = 0; ic < c; ++ic) {
            const S I = st.intersection[ic];
            const S P = st.pred_sum[ic];
            const S G = st.gt_sum[ic];
            const S p = st.precision[ic], r = st.recall[ic];
            const S denom = p + r + smooth;
            const S dF_dp = r * (r + smooth) / (denom * denom);
            const S dF_dr = p * (p + smooth) / (denom * denom);
            const S dp_dI = S(1) / (P + smooth);
            const S dp_dP = -I / ((P + smooth) * (P + smooth));
            const S dr_dI = S(1) / (G + smooth);
            const S scale = -(S(2) / static_cast<S>(c)) * w[ic] * gout;
            const S all_term = scale * dF_dp * dp_dP;                      // every pixel of class plane
            const S gt_term = scale * (dF_dp * dp_dI + dF_dr * dr_dI);     // additionally where gt is on
            for (int in = 0; in < n; ++in) {
                const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i)
                    pn->grad[base + i] += all_term + gt_term * gn->value.data[base + i];
            }
        }
    };
    return make_node<S>(std::move(out), {pred, gt}, std::move(bp));
}

template <typename S>
VarT<S> dice_loss(const VarT<S>& pred, const VarT<S>& gt, S smooth = S(1e-6)) {
    return weighted_dice_loss<S>(pred, gt, std::vector<S>(pred->value.c(), S(1)), smooth);
}

// Fusion loss: WF + WCE + WD over the same inputs and weight vector.
template <typename S>
VarT<S> fusion_loss(const VarT<S>& pred, const VarT<S>& gt, const LossSpecT<S>& spec) {
    auto wf = weighted_focal_loss<S>(pred, gt, spec.weights, spec.gamma);
    auto wce = wce_loss<S>(pred, gt, spec.weights);
    auto wd = weighted_dice_loss<S>(pred, gt, spec.weights, spec.dice_smooth);
    return add(add(wf, wce), wd);
}

template <typename S>
VarT<S> segmentation_loss(const VarT<S>& pred, const VarT<S>& gt, const LossSpecT<S>& spec) {
    switch (spec.kind) {
        case LossKind::CE: return ce_loss<S>(pred, gt);
        case LossKind::WCE: return wce_loss<S>(pred, gt, spec.weights);
        case LossKind::Focal: return focal_loss<S>(pred, gt, spec.gamma);
        case LossKind::WF: return weighted_focal_loss<S>(pred, gt, spec.weights, spec.gamma);
        case LossKind::Dice: return dice_loss<S>(pred, gt, spec.dice_smooth);
        case LossKind::WD: return weighted_dice_loss<S>(pred, gt, spec.weights, spec.dice_smooth);
        case LossKind::Fusion: return fusion_loss<S>(pred, gt, spec);
    }
    throw ValueError("unhandled loss kind");
}

}  // namespace textseg
