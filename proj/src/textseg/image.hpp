#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace textseg {

// 8-bit grayscale raster, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // r,g,b per pixel

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    std::uint8_t* at(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
};

// PNG I/O. Writers emit 8-bit non-interlaced images; readers accept 8/16-bit
// grayscale and truecolor (alpha stripped, 16-bit reduced). Palette images
// are rejected.
void write_png(const std::string& path, const GrayImage& img);
void write_png(const std::string& path, const RgbImage& img);
GrayImage read_png_gray(const std::string& path);
RgbImage read_png_rgb(const std::string& path);

// CRC32 of a whole file; used for determinism audits.
std::uint32_t file_crc32(const std::string& path);
std::uint32_t buffer_crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace textseg
