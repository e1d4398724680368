#include "textseg/crf.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace textseg {

namespace {

constexpr double kProbClamp = 1e-7;

// Accumulates one truncated-window Gaussian message pass:
//   msg[i][l] += weight * sum_{j != i, |j-i| <= radius} k(i,j) * q[j][l]
// The intensity term is active only for the bilateral kernel.
void accumulate_messages(const std::vector<double>& q, int classes, int h, int w,
                         double weight, double sigma_xy, const GrayImage* image,
                         double sigma_intensity, std::vector<double>& msg) {
    if (weight == 0.0) return;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_xy));
    const double inv_2sxy = 1.0 / (2.0 * sigma_xy * sigma_xy);
    const double inv_2si =
        image ? 1.0 / (2.0 * sigma_intensity * sigma_intensity) : 0.0;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double ii = image ? static_cast<double>(image->pixels[i]) : 0.0;
            const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) {
                    if (yy == y && xx == x) continue;
                    const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
                    const double dx = xx - x, dy = yy - y;
                    double e = (dx * dx + dy * dy) * inv_2sxy;
                    if (image) {
                        const double di = static_cast<double>(image->pixels[j]) - ii;
                        e += di * di * inv_2si;
                    }
                    const double k = weight * std::exp(-e);
                    for (int l = 0; l < classes; ++l)
                        msg[static_cast<std::size_t>(l) * plane + i] += k * q[static_cast<std::size_t>(l) * plane + j];
                }
        }
}

}  // namespace

void CrfConfig::validate() const {
    if (n_iters < 1) throw ValueError("CRF needs at least one mean-field iteration");
    if (spatial_sigma <= 0.0 || bilateral_sigma_xy <= 0.0 || bilateral_sigma_intensity <= 0.0)
        throw ValueError("CRF sigmas must be > 0");
    if (spatial_weight < 0.0 || bilateral_weight < 0.0)
        throw ValueError("CRF kernel weights must be >= 0");
}

SoftPrediction meanfield(const SoftPrediction& unary, const GrayImage& image, const CrfConfig& cfg) {
    cfg.validate();
    if (unary.height != image.height || unary.width != image.width)
        throw ShapeError("CRF unary field " + std::to_string(unary.width) + "x" +
                         std::to_string(unary.height) + " vs image " + std::to_string(image.width) +
                         "x" + std::to_string(image.height));
    const int classes = unary.classes, h = unary.height, w = unary.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t total = plane * classes;

    // Clamped, renormalized copy of the input. Updates multiply this base by
    // exp(-pairwise), so zero pairwise weights reproduce it exactly.
    std::vector<double> base(total);
    for (std::size_t i = 0; i < plane; ++i) {
        double sum = 0.0;
        for (int l = 0; l < classes; ++l) {
            const double v = std::max(static_cast<double>(unary.probs[static_cast<std::size_t>(l) * plane + i]), kProbClamp);
            base[static_cast<std::size_t>(l) * plane + i] = v;
            sum += v;
        }
        for (int l = 0; l < classes; ++l) base[static_cast<std::size_t>(l) * plane + i] /= sum;
    }

    std::vector<double> q = base;
    std::vector<double> msg(total);
    for (int iter = 0; iter < cfg.n_iters; ++iter) {
        std::fill(msg.begin(), msg.end(), 0.0);
        accumulate_messages(q, classes, h, w, cfg.spatial_weight, cfg.spatial_sigma, nullptr, 0.0, msg);
        accumulate_messages(q, classes, h, w, cfg.bilateral_weight, cfg.bilateral_sigma_xy, &image,
                            cfg.bilateral_sigma_intensity, msg);

        // Potts compatibility: the penalty for label l is the mass of all
        // other labels. Update reads only the previous iteration's field.
        for (std::size_t i = 0; i < plane; ++i) {
            double msg_total = 0.0;
            for (int l = 0; l < classes; ++l) msg_total += msg[static_cast<std::size_t>(l) * plane + i];
            double min_pen = msg_total;
            for (int l = 0; l < classes; ++l)
                min_pen = std::min(min_pen, msg_total - msg[static_cast<std::size_t>(l) * plane + i]);
            double sum = 0.0;
            for (int l = 0; l < classes; ++l) {
                const std::size_t k = static_cast<std::size_t>(l) * plane + i;
                const double pen = msg_total - msg[k] - min_pen;
                q[k] = base[k] * std::exp(-pen);
                sum += q[k];
            }
            for (int l = 0; l < classes; ++l) q[static_cast<std::size_t>(l) * plane + i] /= sum;
        }
    }

    SoftPrediction out(classes, h, w);
    for (std::size_t k = 0; k < total; ++k) out.probs[k] = static_cast<float>(q[k]);
    return out;
}

LabelMap crfh_filter(const LabelMap& pre, const LabelMap& proposed) {
    if (pre.width != proposed.width || pre.height != proposed.height || pre.mode != proposed.mode)
        throw ShapeError("crfh_filter input maps disagree in shape or mode");
    LabelMap out = pre;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        if (pre.classes[i] != Cls::BG) continue;  // non-BG pixels are frozen
        const Cls p = proposed.classes[i];
        if (p == Cls::HT || p == Cls::PT) out.classes[i] = p;
    }
    return out;
}

LabelMap apply_crf(const SoftPrediction& pred, const GrayImage& image, const CrfConfig& cfg,
                   RelabelPolicy policy) {
    const SoftPrediction refined = meanfield(pred, image, cfg);
    LabelMap post = argmax_labels(refined);
    if (policy == RelabelPolicy::Unrestricted) return post;
    return crfh_filter(argmax_labels(pred), post);
}

}  // namespace textseg
