#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "textseg/layers.hpp"

namespace textseg {

// Portable binary store of named tensors. Layout:
//   magic "MFMCKPT1", version u32, then repeated records
//   [name_len u32][name utf-8][ndim u32][dims u32 x ndim][data f32 x prod]
// all little-endian. Model parameters and buffers come first, then the
// optimizer section ("opt/..." names) in the same record format, then
// scalar metadata ("meta/..." names).
struct Checkpoint {
    static constexpr char kMagic[9] = "MFMCKPT1";
    static constexpr std::uint32_t kVersion = 1;

    std::vector<NamedTensor> entries;  // file order

    std::map<std::string, NamedTensor> index() const {
        std::map<std::string, NamedTensor> m;
        for (const auto& e : entries) m[e.name] = e;
        return m;
    }

    void add_scalar(const std::string& name, double v) {
        entries.push_back({name, Shape{1}, {static_cast<float>(v)}});
    }

    double scalar(const std::string& name) const;
    bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace textseg
