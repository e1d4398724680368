#include "textseg/metrics.hpp"

namespace textseg {

namespace {

struct Masks {
    std::vector<std::uint8_t> pt, ht, bg;
};

// OV expansion for counting. Works for both modes: a 3-class map simply has
// no OV pixels to expand.
Masks expand(const LabelMap& m) {
    Masks out;
    out.pt.assign(m.size(), 0);
    out.ht.assign(m.size(), 0);
    out.bg.assign(m.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        switch (m.classes[i]) {
            case Cls::PT: out.pt[i] = 1; break;
            case Cls::HT: out.ht[i] = 1; break;
            case Cls::BG: out.bg[i] = 1; break;
            case Cls::OV:
                out.pt[i] = 1;
                out.ht[i] = 1;
                break;
        }
    }
    return out;
}

void count_mask(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                const std::vector<std::uint8_t>* restrict_to, ClassCounts& c) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (restrict_to && !(*restrict_to)[i]) continue;
        if (pred[i] && gt[i])
            ++c.tp;
        else if (pred[i])
            ++c.fp;
        else if (gt[i])
            ++c.fn;
    }
}

ConfusionCounts count_impl(const LabelMap& pred, const LabelMap& gt,
                           const std::vector<std::uint8_t>* restrict_to) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("evaluate: prediction " + std::to_string(pred.width) + "x" +
                         std::to_string(pred.height) + " vs ground truth " +
                         std::to_string(gt.width) + "x" + std::to_string(gt.height));
    const Masks pm = expand(pred);
    const Masks gm = expand(gt);
    ConfusionCounts counts;
    count_mask(pm.pt, gm.pt, restrict_to, counts.pt);
    count_mask(pm.ht, gm.ht, restrict_to, counts.ht);
    count_mask(pm.bg, gm.bg, restrict_to, counts.bg);
    return counts;
}

}  // namespace

double iou(const ClassCounts& c) {
    if (!c.defined()) throw ValueError("IoU undefined: class absent from prediction and ground truth");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

double mean_iou(double pt, double ht, double bg) { return (pt + ht + bg) / 3.0; }

ConfusionCounts count_confusion(const LabelMap& pred, const LabelMap& gt) {
    return count_impl(pred, gt, nullptr);
}

ConfusionCounts count_confusion_on_overlap(const LabelMap& pred, const LabelMap& gt) {
    if (gt.mode != 4) throw ValueError("overlap-restricted counts need a 4-class ground truth");
    std::vector<std::uint8_t> ov(gt.size(), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) ov[i] = gt.classes[i] == Cls::OV ? 1 : 0;
    return count_impl(pred, gt, &ov);
}

IouReport report_from_counts(const ConfusionCounts& counts) {
    IouReport r;
    const ClassCounts* per[3] = {&counts.pt, &counts.ht, &counts.bg};
    const char* names[3] = {"PT", "HT", "BG"};
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        auto& e = r.classes[i];
        e.name = names[i];
        e.counts = *per[i];
        e.defined = per[i]->defined();
        if (e.defined) {
            e.iou = iou(*per[i]);
            sum += e.iou;
            ++r.n_defined;
        }
    }
    r.mean = r.n_defined ? sum / r.n_defined : 0.0;
    return r;
}

IouReport evaluate(const LabelMap& pred, const LabelMap& gt) {
    return report_from_counts(count_confusion(pred, gt));
}

}  // namespace textseg
