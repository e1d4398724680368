#include "textseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "textseg/error.hpp"

namespace textseg {

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ofstream& out, const float* data, std::size_t n) {
    static_assert(sizeof(float) == 4);
    static_assert(std::endian::native == std::endian::little,
                  "big-endian save path not implemented");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

}  // namespace

double Checkpoint::scalar(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) {
            if (e.data.size() != 1) throw IoError("checkpoint entry " + name + " is not scalar");
            return static_cast<double>(e.data[0]);
        }
    throw IoError("checkpoint entry not found: " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(Checkpoint::kMagic, 8);
    write_u32(out, Checkpoint::kVersion);
    for (const auto& e : ckpt.entries) {
        write_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        std::int64_t n = 1;
        for (int d : e.dims) {
            write_u32(out, static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != static_cast<std::int64_t>(e.data.size()))
            throw IoError("checkpoint entry " + e.name + " data/dims mismatch");
        write_f32(out, e.data.data(), e.data.size());
    }
    if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != Checkpoint::kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

    Checkpoint ckpt;
    while (true) {
        in.peek();
        if (in.eof()) break;
        NamedTensor t;
        const std::uint32_t name_len = read_u32(in, path);
        if (name_len > 4096) throw IoError("implausible name length in " + path);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const std::uint32_t ndim = read_u32(in, path);
        if (ndim > 8) throw IoError("implausible rank in " + path);
        std::int64_t n = 1;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            const std::uint32_t d = read_u32(in, path);
            t.dims.push_back(static_cast<int>(d));
            n *= d;
        }
        t.data.resize(static_cast<std::size_t>(n));
        static_assert(std::endian::native == std::endian::little,
                      "big-endian load path not implemented");
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
        if (!in) throw IoError("truncated checkpoint: " + path);
        ckpt.entries.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace textseg
