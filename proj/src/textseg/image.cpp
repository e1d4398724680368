#include "textseg/image.hpp"

#include <png.h>
#include <zlib.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "textseg/error.hpp"

namespace textseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_impl(const std::string& path, int width, int height, int color_type,
                    const std::uint8_t* pixels, std::size_t stride) {
    if (width <= 0 || height <= 0) throw IoError("refusing to write empty PNG: " + path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * stride));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

// Reads a PNG into 8-bit rows with want_channels components. Palette images
// are rejected; alpha is stripped and 16-bit depth reduced.
std::vector<std::uint8_t> read_png_impl(const std::string& path, int want_channels, int* out_w,
                                        int* out_h) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open for reading: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> data;
    bool palette = false;
    bool bad_rowbytes = false;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        palette = true;
        png_destroy_read_struct(&png, &info, nullptr);
    }
    if (palette) throw IoError("palette-indexed PNG not supported: " + path);

    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (want_channels == 1 && (color_type & PNG_COLOR_MASK_COLOR))
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (want_channels == 3 && !(color_type & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(w) * want_channels) {
        bad_rowbytes = true;
        png_destroy_read_struct(&png, &info, nullptr);
    }
    if (bad_rowbytes) throw IoError("unexpected PNG layout in " + path);

    data.resize(static_cast<std::size_t>(h) * rowbytes);
    for (int y = 0; y < h; ++y)
        png_read_row(png, data.data() + static_cast<std::size_t>(y) * rowbytes, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    *out_w = w;
    *out_h = h;
    return data;
}

}  // namespace

void write_png(const std::string& path, const GrayImage& img) {
    write_png_impl(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.pixels.data(),
                   static_cast<std::size_t>(img.width));
}

void write_png(const std::string& path, const RgbImage& img) {
    write_png_impl(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.pixels.data(),
                   static_cast<std::size_t>(img.width) * 3);
}

GrayImage read_png_gray(const std::string& path) {
    GrayImage img;
    img.pixels = read_png_impl(path, 1, &img.width, &img.height);
    return img;
}

RgbImage read_png_rgb(const std::string& path) {
    RgbImage img;
    img.pixels = read_png_impl(path, 3, &img.width, &img.height);
    return img;
}

std::uint32_t buffer_crc32(const void* data, std::size_t len, std::uint32_t seed) {
    return static_cast<std::uint32_t>(
        crc32(seed, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

std::uint32_t file_crc32(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open for reading: " + path);
    std::uint32_t crc = 0;
    std::vector<std::uint8_t> buf(1 << 16);
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), fp.get())) > 0)
        crc = buffer_crc32(buf.data(), n, crc);
    return crc;
}

}  // namespace textseg
