#pragma once

#include <string>
#include <vector>

#include "textseg/image.hpp"
#include "textseg/labelcodec.hpp"
#include "textseg/synth.hpp"
#include "textseg/tensor.hpp"

namespace textseg {

struct Sample {
    std::string id;
    GrayImage image;
    LabelMap gt;
};

using Dataset = std::vector<Sample>;

// Loads one split of a synthesized dataset. Ground truth decodes as 4-class;
// when classes == 3 the OV pixels collapse per `policy`.
Dataset load_dataset_split(const std::string& manifest_path, const std::string& split, int classes,
                           OvPolicy policy = OvPolicy::ToPT);

// Grayscale crops as model input: intensities scaled to [0,1] and replicated
// over the three input channels. Shape (B, 3, H, W).
TensorT<float> make_input_batch(const Dataset& data, const std::vector<int>& indices);

// One-hot ground truth, shape (B, classes, H, W).
TensorT<float> make_gt_batch(const Dataset& data, const std::vector<int>& indices);

}  // namespace textseg
