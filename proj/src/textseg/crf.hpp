#pragma once

#include "textseg/image.hpp"
#include "textseg/softpred.hpp"

namespace textseg {

// Dense-CRF mean-field parameters. Kernels are evaluated exactly inside a
// truncated window of radius ceil(3*sigma); pixels outside contribute
// less than exp(-4.5) of the peak and are dropped.
struct CrfConfig {
    int n_iters = 5;
    double spatial_sigma = 3.0;             // pixels
    double spatial_weight = 3.0;
    double bilateral_sigma_xy = 40.0;       // pixels
    double bilateral_sigma_intensity = 20.0;  // gray levels
    double bilateral_weight = 5.0;

    void validate() const;
};

enum class RelabelPolicy { Unrestricted, Crfh };

inline RelabelPolicy relabel_policy_from_name(const std::string& s) {
    if (s == "crf") return RelabelPolicy::Unrestricted;
    if (s == "crfh") return RelabelPolicy::Crfh;
    throw ValueError("unknown relabel policy '" + s + "'");
}

// Mean-field inference over the fully-connected pairwise model with Potts
// compatibility, Gaussian spatial kernel and bilateral spatial-intensity
// kernel. Unary potentials are -log of the input field clamped at 1e-7.
// Returns a valid simplex field of the same shape.
SoftPrediction meanfield(const SoftPrediction& unary, const GrayImage& image, const CrfConfig& cfg);

// CRFH relabeling rule: a pixel whose pre-CRF label is not BG keeps that
// label; a BG pixel may change only to pure HT or PT (BG->OV proposals are
// suppressed). Idempotent in `proposed`.
LabelMap crfh_filter(const LabelMap& pre, const LabelMap& proposed);

// Runs mean-field, takes the per-pixel argmax (ties to the lowest class
// index) and applies the relabel policy.
LabelMap apply_crf(const SoftPrediction& pred, const GrayImage& image, const CrfConfig& cfg,
                   RelabelPolicy policy);

}  // namespace textseg
