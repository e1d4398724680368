#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "textseg/labelcodec.hpp"

namespace textseg {

// Pixel counts for one class: TP = |pred ∩ gt|, FP = |pred \ gt|,
// FN = |gt \ pred|.
struct ClassCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    bool defined() const { return tp + fp + fn > 0; }

    ClassCounts& operator+=(const ClassCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

// IoU_c = TP / (TP + FP + FN). Callers must check defined() first; an empty
// denominator is reported as undefined and excluded from means.
double iou(const ClassCounts& c);

// Arithmetic mean of the three per-class scores (PT, HT, BG).
double mean_iou(double pt, double ht, double bg);

// Confusion counts for the three scored classes. OV is expanded into the HT
// and PT masks before counting, so it never appears as its own row.
struct ConfusionCounts {
    ClassCounts pt, ht, bg;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        pt += o.pt;
        ht += o.ht;
        bg += o.bg;
        return *this;
    }
};

struct IouReport {
    struct Entry {
        std::string name;
        ClassCounts counts;
        bool defined = false;
        double iou = 0.0;  // valid only when defined
    };
    std::array<Entry, 3> classes;  // PT, HT, BG
    double mean = 0.0;             // over defined classes
    int n_defined = 0;
};

// Counts one image pair. Both maps pass through OV expansion (a 3-class map
// expands trivially); IoU is computed on the pt, ht and bg masks.
ConfusionCounts count_confusion(const LabelMap& pred, const LabelMap& gt);

IouReport report_from_counts(const ConfusionCounts& counts);

// Single-pair convenience wrapper.
IouReport evaluate(const LabelMap& pred, const LabelMap& gt);

// Restriction of count_confusion to pixels where the ground truth is OV;
// used for overlap-region scoring. gt must be 4-class.
ConfusionCounts count_confusion_on_overlap(const LabelMap& pred, const LabelMap& gt);

}  // namespace textseg
