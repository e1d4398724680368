#include "textseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "textseg/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace textseg {

InkLayer extract_layer(const GrayImage& crop, int threshold) {
    if (threshold < 1 || threshold > 255) throw ValueError("ink threshold must be in [1,255]");
    InkLayer layer(crop.width, crop.height);
    for (std::size_t i = 0; i < crop.pixels.size(); ++i)
        if (crop.pixels[i] < threshold) {
            layer.ink_mask[i] = 1;
            layer.intensity[i] = crop.pixels[i];
        }
    return layer;
}

std::pair<GrayImage, LabelMap> compose(const InkLayer& pt, const InkLayer& ht) {
    if (pt.width != ht.width || pt.height != ht.height)
        throw ShapeError("compose: layer sizes disagree, " + std::to_string(pt.width) + "x" +
                         std::to_string(pt.height) + " vs " + std::to_string(ht.width) + "x" +
                         std::to_string(ht.height));
    GrayImage img(pt.width, pt.height, 255);
    LabelMap gt(pt.width, pt.height, 4, Cls::BG);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const bool p = pt.ink_mask[i] != 0;
        const bool h = ht.ink_mask[i] != 0;
        if (p && h) {
            img.pixels[i] = std::min(pt.intensity[i], ht.intensity[i]);
            gt.classes[i] = Cls::OV;
        } else if (p) {
            img.pixels[i] = pt.intensity[i];
            gt.classes[i] = Cls::PT;
        } else if (h) {
            img.pixels[i] = ht.intensity[i];
            gt.classes[i] = Cls::HT;
        }
    }
    return {std::move(img), std::move(gt)};
}

namespace {

// Inverse of: p_out = R(angle) * scale * (p_in - c) + c + (dx, dy).
struct InverseMap {
    double cx, cy, dx, dy, inv_scale, cos_a, sin_a;

    InverseMap(const Transform& t, int width, int height)
        : cx(width / 2.0), cy(height / 2.0), dx(t.dx), dy(t.dy), inv_scale(1.0 / t.scale),
          cos_a(std::cos(-t.angle_deg * 3.14159265358979323846 / 180.0)),
          sin_a(std::sin(-t.angle_deg * 3.14159265358979323846 / 180.0)) {}

    void operator()(double xo, double yo, double* xi, double* yi) const {
        const double ux = xo - cx - dx;
        const double uy = yo - cy - dy;
        const double rx = cos_a * ux - sin_a * uy;
        const double ry = sin_a * ux + cos_a * uy;
        *xi = rx * inv_scale + cx;
        *yi = ry * inv_scale + cy;
    }
};

double bilinear_white(const GrayImage& img, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    double acc = 0.0;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const int xi = x0 + dx, yi = y0 + dy;
            const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            const double v = (xi >= 0 && xi < img.width && yi >= 0 && yi < img.height)
                                 ? static_cast<double>(img.at(xi, yi))
                                 : 255.0;
            acc += wgt * v;
        }
    return acc;
}

}  // namespace

std::pair<GrayImage, LabelMap> augment(const GrayImage& image, const LabelMap& gt,
                                       const Transform& t, const AugmentRanges& ranges) {
    if (image.width != gt.width || image.height != gt.height)
        throw ShapeError("augment: image and ground truth sizes disagree");
    const double max_dx = ranges.max_shift_frac * image.width;
    const double max_dy = ranges.max_shift_frac * image.height;
    if (std::abs(t.dx) > max_dx + 1e-9 || std::abs(t.dy) > max_dy + 1e-9 ||
        t.scale < ranges.scale_min - 1e-9 || t.scale > ranges.scale_max + 1e-9 ||
        std::abs(t.angle_deg) > ranges.max_rotate_deg + 1e-9)
        throw ValueError("augment transform outside the configured ranges");

    const InverseMap inv(t, image.width, image.height);
    GrayImage out_img(image.width, image.height, 255);
    LabelMap out_gt(gt.width, gt.height, gt.mode, Cls::BG);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            double xi, yi;
            inv(x, y, &xi, &yi);
            const double v = bilinear_white(image, xi, yi);
            out_img.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            const int xn = static_cast<int>(std::lround(xi));
            const int yn = static_cast<int>(std::lround(yi));
            if (xn >= 0 && xn < gt.width && yn >= 0 && yn < gt.height)
                out_gt.at(x, y) = gt.at(xn, yn);
        }
    return {std::move(out_img), std::move(out_gt)};
}

Transform draw_transform(Rng& rng, const AugmentRanges& ranges, int width, int height) {
    Transform t;
    t.dx = rng.uniform(-ranges.max_shift_frac, ranges.max_shift_frac) * width;
    t.dy = rng.uniform(-ranges.max_shift_frac, ranges.max_shift_frac) * height;
    t.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
    t.angle_deg = rng.uniform(-ranges.max_rotate_deg, ranges.max_rotate_deg);
    return t;
}

namespace {

std::int64_t count_overlap(const LabelMap& gt) {
    std::int64_t n = 0;
    for (Cls c : gt.classes)
        if (c == Cls::OV) ++n;
    return n;
}

struct SplitPools {
    std::vector<int> trainval_pt, trainval_ht, test_pt, test_ht;
};

// Reserves a disjoint share of both source pools for the test split.
SplitPools partition_sources(const SourceSet& sources, const SynthConfig& cfg, Rng& rng) {
    auto split_pool = [&](std::size_t n) {
        std::vector<int> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
        for (std::size_t i = n; i > 1; --i)
            std::swap(idx[i - 1], idx[rng.below(i)]);
        std::size_t n_test = static_cast<std::size_t>(std::ceil(cfg.test_source_fraction * n));
        n_test = std::min(std::max<std::size_t>(n_test, 1), n - 1);
        return std::pair{std::vector<int>(idx.begin() + n_test, idx.end()),
                         std::vector<int>(idx.begin(), idx.begin() + n_test)};
    };
    if (sources.printed.size() < 2 || sources.handwritten.size() < 2)
        throw ValueError("need at least two printed and two handwritten source crops");
    SplitPools pools;
    std::tie(pools.trainval_pt, pools.test_pt) = split_pool(sources.printed.size());
    std::tie(pools.trainval_ht, pools.test_ht) = split_pool(sources.handwritten.size());
    return pools;
}

}  // namespace

std::vector<SynthRecord> build_dataset(const SourceSet& sources, const SynthConfig& cfg,
                                       const std::string& out_dir) {
    if (cfg.count_train < 1 || cfg.count_val < 1 || cfg.count_test < 1)
        throw ValueError("each split needs at least one sample");
    Rng split_rng(substream_seed(cfg.seed, 0xC0FFEEULL));
    const SplitPools pools = partition_sources(sources, cfg, split_rng);

    const struct {
        const char* name;
        int count;
        const std::vector<int>* pt_pool;
        const std::vector<int>* ht_pool;
    } splits[3] = {
        {"train", cfg.count_train, &pools.trainval_pt, &pools.trainval_ht},
        {"val", cfg.count_val, &pools.trainval_pt, &pools.trainval_ht},
        {"test", cfg.count_test, &pools.test_pt, &pools.test_ht},
    };

    fs::create_directories(out_dir);
    std::vector<SynthRecord> records;
    std::uint64_t sample_index = 0;
    for (const auto& split : splits) {
        fs::create_directories(fs::path(out_dir) / split.name);
        for (int i = 0; i < split.count; ++i, ++sample_index) {
            const std::uint64_t sample_seed = substream_seed(cfg.seed, 1 + sample_index);
            Rng rng(sample_seed);

            GrayImage img;
            LabelMap gt;
            SynthRecord rec;
            const int max_tries = cfg.force_overlap ? 64 : 1;
            bool ok = false;
            for (int attempt = 0; attempt < max_tries && !ok; ++attempt) {
                const int pi = (*split.pt_pool)[rng.below(split.pt_pool->size())];
                const int hi = (*split.ht_pool)[rng.below(split.ht_pool->size())];
                const auto& pt_src = sources.printed[static_cast<std::size_t>(pi)];
                const auto& ht_src = sources.handwritten[static_cast<std::size_t>(hi)];
                if (pt_src.image.width != cfg.width || pt_src.image.height != cfg.height ||
                    ht_src.image.width != cfg.width || ht_src.image.height != cfg.height)
                    throw ValueError("source crop size differs from the configured " +
                                     std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
                auto [composed_img, composed_gt] = compose(extract_layer(pt_src.image, cfg.threshold),
                                                           extract_layer(ht_src.image, cfg.threshold));
                const Transform t = draw_transform(rng, cfg.augment, cfg.width, cfg.height);
                std::tie(img, gt) = augment(composed_img, composed_gt, t, cfg.augment);
                if (!cfg.force_overlap || count_overlap(gt) >= cfg.min_overlap_px) {
                    rec.source_pt_id = pt_src.id;
                    rec.source_ht_id = ht_src.id;
                    rec.transform = t;
                    ok = true;
                }
            }
            if (!ok)
                throw ValueError("could not synthesize a sample with >= " +
                                 std::to_string(cfg.min_overlap_px) +
                                 " overlap pixels; sources may not intersect");

            char id[32];
            std::snprintf(id, sizeof id, "%s_%05d", split.name, i);
            rec.id = id;
            rec.split = split.name;
            rec.seed = sample_seed;
            rec.image_path = std::string(split.name) + "/" + rec.id + "_img.png";
            rec.gt_path = std::string(split.name) + "/" + rec.id + "_gt.png";
            write_png((fs::path(out_dir) / rec.image_path).string(), img);
            write_png((fs::path(out_dir) / rec.gt_path).string(), encode_gt(gt));
            records.push_back(std::move(rec));
        }
    }
    write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), records);
    return records;
}

void write_manifest(const std::string& path, const std::vector<SynthRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    for (const auto& r : records) {
        json j{{"id", r.id},
               {"image_path", r.image_path},
               {"gt_path", r.gt_path},
               {"split", r.split},
               {"seed", r.seed},
               {"source_pt_id", r.source_pt_id},
               {"source_ht_id", r.source_ht_id},
               {"dx", r.transform.dx},
               {"dy", r.transform.dy},
               {"scale", r.transform.scale},
               {"angle", r.transform.angle_deg}};
        out << j.dump() << '\n';
    }
}

std::vector<SynthRecord> read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest: " + path);
    std::vector<SynthRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SynthRecord r;
        r.id = j.at("id").get<std::string>();
        r.image_path = j.at("image_path").get<std::string>();
        r.gt_path = j.at("gt_path").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.source_pt_id = j.at("source_pt_id").get<std::string>();
        r.source_ht_id = j.at("source_ht_id").get<std::string>();
        r.transform.dx = j.at("dx").get<double>();
        r.transform.dy = j.at("dy").get<double>();
        r.transform.scale = j.at("scale").get<double>();
        r.transform.angle_deg = j.at("angle").get<double>();
        records.push_back(std::move(r));
    }
    return records;
}

namespace {

void draw_disc(GrayImage& img, double cx, double cy, double radius, std::uint8_t value) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= radius * radius)
                img.at(x, y) = std::min(img.at(x, y), value);
        }
}

}  // namespace

SourceSet make_procedural_sources(int n_printed, int n_handwritten, int width, int height,
                                  std::uint64_t seed) {
    if (n_printed < 2 || n_handwritten < 2)
        throw ValueError("procedural sources need counts >= 2 per text type");
    SourceSet set;

    // Printed: rows of dark dashes, like lines of type.
    for (int k = 0; k < n_printed; ++k) {
        Rng rng(substream_seed(seed, 0x50540000ULL + static_cast<std::uint64_t>(k)));
        GrayImage img(width, height, 255);
        const int line_gap = std::max(6, height / (3 + static_cast<int>(rng.below(4))));
        for (int y0 = 2 + static_cast<int>(rng.below(4)); y0 + 2 < height; y0 += line_gap) {
            const int thickness = 1 + static_cast<int>(rng.below(2));
            int x = 1 + static_cast<int>(rng.below(4));
            while (x < width - 2) {
                const int dash = 3 + static_cast<int>(rng.below(8));
                const int gap = 1 + static_cast<int>(rng.below(4));
                const auto ink = static_cast<std::uint8_t>(20 + rng.below(70));
                for (int xx = x; xx < std::min(x + dash, width - 1); ++xx)
                    for (int t = 0; t < thickness && y0 + t < height; ++t) img.at(xx, y0 + t) = ink;
                x += dash + gap;
            }
        }
        set.printed.push_back({"pt_proc_" + std::to_string(k), std::move(img)});
    }

    // Handwritten: smooth random-walk strokes crossing the crop, like
    // signatures or margin notes.
    for (int k = 0; k < n_handwritten; ++k) {
        Rng rng(substream_seed(seed, 0x48540000ULL + static_cast<std::uint64_t>(k)));
        GrayImage img(width, height, 255);
        const int strokes = 2 + static_cast<int>(rng.below(3));
        for (int s = 0; s < strokes; ++s) {
            double x = rng.uniform(0.1, 0.9) * width;
            double y = rng.uniform(0.2, 0.8) * height;
            double heading = rng.uniform(0.0, 6.283185307179586);
            const auto ink = static_cast<std::uint8_t>(10 + rng.below(60));
            const double radius = 0.7 + rng.uniform() * 0.8;
            const int steps = width * (2 + static_cast<int>(rng.below(3)));
            for (int t = 0; t < steps; ++t) {
                draw_disc(img, x, y, radius, ink);
                heading += rng.uniform(-0.5, 0.5);
                x += std::cos(heading);
                y += std::sin(heading);
                if (x < 1 || x > width - 2) heading = 3.14159265358979323846 - heading;
                if (y < 1 || y > height - 2) heading = -heading;
                x = std::clamp(x, 1.0, width - 2.0);
                y = std::clamp(y, 1.0, height - 2.0);
            }
        }
        set.handwritten.push_back({"ht_proc_" + std::to_string(k), std::move(img)});
    }
    return set;
}

SourceSet load_sources_dir(const std::string& dir) {
    SourceSet set;
    if (!fs::is_directory(dir)) throw IoError("source directory not found: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        const std::string stem = p.stem().string();
        if (stem.rfind("pt_", 0) == 0)
            set.printed.push_back({stem, read_png_gray(p.string())});
        else if (stem.rfind("ht_", 0) == 0)
            set.handwritten.push_back({stem, read_png_gray(p.string())});
    }
    if (set.printed.empty() || set.handwritten.empty())
        throw IoError("source directory needs pt_*.png and ht_*.png crops: " + dir);
    return set;
}

}  // namespace textseg
