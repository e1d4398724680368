#include "textseg/labelcodec.hpp"

#include <string>

namespace textseg {

RgbImage encode_gt(const LabelMap& labels) {
    RgbImage img(labels.width, labels.height);
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) {
            const auto rgb = cls_color(labels.at(x, y));
            std::uint8_t* p = img.at(x, y);
            p[0] = rgb[0];
            p[1] = rgb[1];
            p[2] = rgb[2];
        }
    return img;
}

LabelMap decode_gt(const RgbImage& image, int mode) {
    LabelMap labels(image.width, image.height, mode);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const std::uint8_t* p = image.at(x, y);
            Cls c;
            if (p[0] == 255 && p[1] == 0 && p[2] == 0)
                c = Cls::PT;
            else if (p[0] == 0 && p[1] == 255 && p[2] == 0)
                c = Cls::HT;
            else if (p[0] == 0 && p[1] == 0 && p[2] == 255)
                c = Cls::BG;
            else if (p[0] == 255 && p[1] == 255 && p[2] == 0)
                c = Cls::OV;
            else
                throw DecodeError("unknown ground-truth color (" + std::to_string(p[0]) + "," +
                                  std::to_string(p[1]) + "," + std::to_string(p[2]) +
                                  ") at pixel (" + std::to_string(x) + "," + std::to_string(y) + ")");
            if (mode == 3 && c == Cls::OV)
                throw DecodeError("OV color at pixel (" + std::to_string(x) + "," +
                                  std::to_string(y) + ") is illegal in 3-class mode");
            labels.at(x, y) = c;
        }
    return labels;
}

ChannelMasks expand_overlap(const LabelMap& labels) {
    if (labels.mode != 4) throw ValueError("expand_overlap requires a 4-class label map");
    ChannelMasks m;
    m.width = labels.width;
    m.height = labels.height;
    m.ht_mask.assign(labels.size(), 0);
    m.pt_mask.assign(labels.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Cls c = labels.classes[i];
        if (c == Cls::HT || c == Cls::OV) m.ht_mask[i] = 1;
        if (c == Cls::PT || c == Cls::OV) m.pt_mask[i] = 1;
    }
    return m;
}

LabelMap collapse_to_three(const LabelMap& labels, OvPolicy policy) {
    if (labels.mode != 4) throw ValueError("collapse_to_three requires a 4-class label map");
    LabelMap out(labels.width, labels.height, 3);
    const Cls target = policy == OvPolicy::ToHT ? Cls::HT : Cls::PT;
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.classes[i] = labels.classes[i] == Cls::OV ? target : labels.classes[i];
    return out;
}

void fill_onehot(const LabelMap& labels, float* dst) {
    const std::size_t plane = labels.size();
    const int c = labels.mode;
    for (int ic = 0; ic < c; ++ic)
        for (std::size_t i = 0; i < plane; ++i)
            dst[static_cast<std::size_t>(ic) * plane + i] =
                static_cast<int>(labels.classes[i]) == ic ? 1.0f : 0.0f;
}

LabelMap labelmap_from_probs(const float* chw, int classes, int height, int width) {
    if (classes != 3 && classes != 4) throw ValueError("labelmap_from_probs wants 3 or 4 classes");
    LabelMap out(width, height, classes);
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        float best_v = chw[i];
        for (int ic = 1; ic < classes; ++ic) {
            const float v = chw[static_cast<std::size_t>(ic) * plane + i];
            if (v > best_v) {
                best_v = v;
                best = ic;
            }
        }
        out.classes[i] = static_cast<Cls>(best);
    }
    return out;
}

}  // namespace textseg
