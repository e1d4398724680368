#pragma once

#include <cmath>
#include <vector>

#include "textseg/error.hpp"
#include "textseg/labelcodec.hpp"

namespace textseg {

// Per-pixel probability simplex over the classes, planar CHW storage.
struct SoftPrediction {
    int classes = 0;
    int height = 0;
    int width = 0;
    std::vector<float> probs;

    SoftPrediction() = default;
    SoftPrediction(int c, int h, int w)
        : classes(c), height(h), width(w),
          probs(static_cast<std::size_t>(c) * h * w, 0.0f) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

    float at(int cls, int x, int y) const {
        return probs[static_cast<std::size_t>(cls) * plane() + static_cast<std::size_t>(y) * width + x];
    }
    float& at(int cls, int x, int y) {
        return probs[static_cast<std::size_t>(cls) * plane() + static_cast<std::size_t>(y) * width + x];
    }

    bool valid_simplex(float tol = 1e-5f) const {
        for (std::size_t i = 0; i < plane(); ++i) {
            float sum = 0.0f;
            for (int c = 0; c < classes; ++c) {
                const float v = probs[static_cast<std::size_t>(c) * plane() + i];
                if (!(v >= 0.0f) || !(v <= 1.0f + tol)) return false;
                sum += v;
            }
            if (std::fabs(sum - 1.0f) > tol) return false;
        }
        return true;
    }
};

// Argmax labels; ties take the lowest class index.
inline LabelMap argmax_labels(const SoftPrediction& p) {
    return labelmap_from_probs(p.probs.data(), p.classes, p.height, p.width);
}

// Near-one-hot distribution from hard labels: `confidence` on the label,
// the remainder spread uniformly. Used when only argmax maps are on disk.
inline SoftPrediction soft_from_labels(const LabelMap& labels, float confidence = 0.9f) {
    if (!(confidence > 0.0f && confidence < 1.0f))
        throw ValueError("label confidence must lie in (0,1)");
    SoftPrediction out(labels.mode, labels.height, labels.width);
    const float rest = (1.0f - confidence) / static_cast<float>(labels.mode - 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int c = 0; c < labels.mode; ++c)
            out.probs[static_cast<std::size_t>(c) * labels.size() + i] =
                static_cast<int>(labels.classes[i]) == c ? confidence : rest;
    return out;
}

}  // namespace textseg
