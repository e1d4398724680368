#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "textseg/error.hpp"
#include "textseg/image.hpp"

namespace textseg {

// Pixel classes in the fixed channel order shared by every module.
enum class Cls : std::uint8_t { PT = 0, HT = 1, BG = 2, OV = 3 };

inline const char* cls_name(Cls c) {
    switch (c) {
        case Cls::PT: return "PT";
        case Cls::HT: return "HT";
        case Cls::BG: return "BG";
        case Cls::OV: return "OV";
    }
    return "?";
}

// Ground-truth color code: PT red, HT green, BG blue, OV yellow.
inline std::array<std::uint8_t, 3> cls_color(Cls c) {
    switch (c) {
        case Cls::PT: return {255, 0, 0};
        case Cls::HT: return {0, 255, 0};
        case Cls::BG: return {0, 0, 255};
        case Cls::OV: return {255, 255, 0};
    }
    return {0, 0, 0};
}

// Per-pixel hard class assignment. mode selects the 3-class {PT,HT,BG} or
// 4-class {PT,HT,BG,OV} formulation; OV never appears in mode 3.
struct LabelMap {
    int width = 0;
    int height = 0;
    int mode = 4;  // 3 or 4
    std::vector<Cls> classes;

    LabelMap() = default;
    LabelMap(int w, int h, int m, Cls fill = Cls::BG)
        : width(w), height(h), mode(m), classes(static_cast<std::size_t>(w) * h, fill) {
        if (m != 3 && m != 4) throw ValueError("label map mode must be 3 or 4");
    }

    Cls at(int x, int y) const { return classes[static_cast<std::size_t>(y) * width + x]; }
    Cls& at(int x, int y) { return classes[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return classes.size(); }

    bool operator==(const LabelMap& other) const = default;
};

// Post-expansion view of a 4-class map: a pixel may be in both masks (source
// class OV), in exactly one (pure HT/PT), or in neither (BG).
struct ChannelMasks {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> ht_mask;
    std::vector<std::uint8_t> pt_mask;
};

enum class OvPolicy { ToHT, ToPT };

// Bit-exact color encoding of a label map.
RgbImage encode_gt(const LabelMap& labels);

// Inverse of encode_gt. Unknown colors, or OV in mode 3, raise DecodeError
// naming the offending pixel.
LabelMap decode_gt(const RgbImage& image, int mode);

// OV expansion: ht_mask = HT or OV, pt_mask = PT or OV. Requires mode 4.
ChannelMasks expand_overlap(const LabelMap& labels);

// Relabels OV pixels to the policy class, producing a 3-class map.
LabelMap collapse_to_three(const LabelMap& labels, OvPolicy policy);

// One-hot conversion in (PT, HT, BG[, OV]) channel order. dst must hold
// mode*width*height floats, written CHW row-major.
void fill_onehot(const LabelMap& labels, float* dst);

// Per-pixel argmax over a CHW probability field; ties take the lowest class
// index.
LabelMap labelmap_from_probs(const float* chw, int classes, int height, int width);

}  // namespace textseg
