#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textseg/image.hpp"
#include "textseg/labelcodec.hpp"
#include "textseg/rng.hpp"

namespace textseg {

// Binarized foreground of a single-text-type crop: where the ink is and how
// dark it is there.
struct InkLayer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> ink_mask;   // 1 where ink
    std::vector<std::uint8_t> intensity;  // gray value, meaningful under the mask

    InkLayer() = default;
    InkLayer(int w, int h)
        : width(w), height(h), ink_mask(static_cast<std::size_t>(w) * h, 0),
          intensity(static_cast<std::size_t>(w) * h, 255) {}
};

struct Transform {
    double dx = 0.0;      // pixels
    double dy = 0.0;      // pixels
    double scale = 1.0;
    double angle_deg = 0.0;
};

struct AugmentRanges {
    double max_shift_frac = 0.1;  // of each extent
    double scale_min = 0.9;
    double scale_max = 1.1;
    double max_rotate_deg = 10.0;
};

struct SynthRecord {
    std::string id;
    std::string image_path;  // relative to the dataset root
    std::string gt_path;
    std::string split;  // train|val|test
    std::uint64_t seed = 0;
    std::string source_pt_id;
    std::string source_ht_id;
    Transform transform;
};

struct SourceCrop {
    std::string id;
    GrayImage image;
};

struct SourceSet {
    std::vector<SourceCrop> printed;
    std::vector<SourceCrop> handwritten;
};

struct SynthConfig {
    int width = 64;
    int height = 64;
    int count_train = 64;
    int count_val = 8;
    int count_test = 8;
    int threshold = 128;
    bool force_overlap = true;
    int min_overlap_px = 8;
    double test_source_fraction = 0.2;
    AugmentRanges augment;
    std::uint64_t seed = 0;
};

// Ink where the gray value is strictly below the threshold.
InkLayer extract_layer(const GrayImage& crop, int threshold = 128);

// Overlays the layers on a white background (printed first, handwritten
// over it, min intensity where both) and writes the matching 4-class ground
// truth: PT-only, HT-only, both -> OV, neither -> BG.
std::pair<GrayImage, LabelMap> compose(const InkLayer& pt, const InkLayer& ht);

// Applies shift/magnify/rotate about the image center. The image resamples
// bilinearly onto white; the ground truth uses the identical geometric map
// with nearest-neighbor lookup so labels never blend.
std::pair<GrayImage, LabelMap> augment(const GrayImage& image, const LabelMap& gt,
                                       const Transform& t, const AugmentRanges& ranges);

Transform draw_transform(Rng& rng, const AugmentRanges& ranges, int width, int height);

// Generates the requested counts per split, writing <id>_img.png /
// <id>_gt.png pairs under out_dir/<split>/ plus a manifest. Source crops are
// partitioned before synthesis so test-set sources never feed train or val.
std::vector<SynthRecord> build_dataset(const SourceSet& sources, const SynthConfig& cfg,
                                       const std::string& out_dir);

void write_manifest(const std::string& path, const std::vector<SynthRecord>& records);
std::vector<SynthRecord> read_manifest(const std::string& path);

// Procedural stand-in sources (text-like line patterns and scribble
// strokes) for desk-scale runs without real document crops.
SourceSet make_procedural_sources(int n_printed, int n_handwritten, int width, int height,
                                  std::uint64_t seed);

// Reads pt_*.png / ht_*.png grayscale crops from a directory.
SourceSet load_sources_dir(const std::string& dir);

}  // namespace textseg
