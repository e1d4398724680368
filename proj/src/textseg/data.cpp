#include "textseg/data.hpp"

#include <filesystem>

#include "textseg/error.hpp"

namespace fs = std::filesystem;

namespace textseg {

Dataset load_dataset_split(const std::string& manifest_path, const std::string& split, int classes,
                           OvPolicy policy) {
    if (classes != 3 && classes != 4) throw ValueError("dataset classes must be 3 or 4");
    const fs::path root = fs::path(manifest_path).parent_path();
    Dataset out;
    for (const auto& rec : read_manifest(manifest_path)) {
        if (rec.split != split) continue;
        Sample s;
        s.id = rec.id;
        s.image = read_png_gray((root / rec.image_path).string());
        LabelMap gt = decode_gt(read_png_rgb((root / rec.gt_path).string()), 4);
        s.gt = classes == 4 ? std::move(gt) : collapse_to_three(gt, policy);
        if (s.image.width != s.gt.width || s.image.height != s.gt.height)
            throw IoError("image/ground-truth size mismatch for sample " + s.id);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("split '" + split + "' is empty in " + manifest_path);
    return out;
}

TensorT<float> make_input_batch(const Dataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw ValueError("empty batch");
    const auto& first = data.at(static_cast<std::size_t>(indices[0]));
    const int h = first.image.height, w = first.image.width;
    TensorT<float> t(Shape{static_cast<int>(indices.size()), 3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& s = data.at(static_cast<std::size_t>(indices[b]));
        if (s.image.height != h || s.image.width != w)
            throw ShapeError("batch mixes image sizes");
        float* dst = t.data.data() + b * 3 * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const float v = static_cast<float>(s.image.pixels[i]) / 255.0f;
            dst[i] = v;
            dst[plane + i] = v;
            dst[2 * plane + i] = v;
        }
    }
    return t;
}

TensorT<float> make_gt_batch(const Dataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw ValueError("empty batch");
    const auto& first = data.at(static_cast<std::size_t>(indices[0]));
    const int h = first.gt.height, w = first.gt.width, c = first.gt.mode;
    TensorT<float> t(Shape{static_cast<int>(indices.size()), c, h, w});
    const std::size_t chw = static_cast<std::size_t>(c) * h * w;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& s = data.at(static_cast<std::size_t>(indices[b]));
        if (s.gt.height != h || s.gt.width != w || s.gt.mode != c)
            throw ShapeError("batch mixes ground-truth shapes");
        fill_onehot(s.gt, t.data.data() + b * chw);
    }
    return t;
}

}  // namespace textseg
