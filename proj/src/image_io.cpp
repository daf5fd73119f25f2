#include "kiwi/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace kiwi::img {

namespace {

struct FileCloser {
    void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_u8(double v) {
    double x = std::lround(v * 255.0);
    if (x < 0) x = 0;
    if (x > 255) x = 255;
    return static_cast<uint8_t>(x);
}

void write_impl(const std::string& path, const uint8_t* pixels, int h, int w,
                int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) { png_destroy_write_struct(&png, nullptr); throw std::runtime_error("png info failed"); }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels + static_cast<size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_impl(const std::string& path, int& h, int& w, int want_channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) { png_destroy_read_struct(&png, nullptr, nullptr); throw std::runtime_error("png info failed"); }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    // normalize to 8-bit RGB or gray
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (want_channels == 3 && (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) == 0)
        png_set_gray_to_rgb(png);
    if (want_channels == 1 && (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) != 0)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    std::vector<uint8_t> pixels(static_cast<size_t>(h) * w * want_channels);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * w * want_channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

} // namespace

void write_png(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.shape()[2] != 3)
        throw std::invalid_argument("write_png expects (H,W,3), got " + shape_str(image));
    const int h = static_cast<int>(image.shape()[0]);
    const int w = static_cast<int>(image.shape()[1]);
    std::vector<uint8_t> px(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < px.size(); ++i) px[i] = to_u8(image[static_cast<int64_t>(i)]);
    write_impl(path, px.data(), h, w, 3);
}

Tensor read_png(const std::string& path) {
    int h = 0, w = 0;
    auto px = read_impl(path, h, w, 3);
    Tensor t({h, w, 3});
    for (size_t i = 0; i < px.size(); ++i) t[static_cast<int64_t>(i)] = px[i] / 255.0;
    return t;
}

void write_png_gray(const std::string& path, const Tensor& mask) {
    if (mask.ndim() != 2)
        throw std::invalid_argument("write_png_gray expects (H,W), got " + shape_str(mask));
    const int h = static_cast<int>(mask.shape()[0]);
    const int w = static_cast<int>(mask.shape()[1]);
    std::vector<uint8_t> px(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < px.size(); ++i) px[i] = to_u8(mask[static_cast<int64_t>(i)]);
    write_impl(path, px.data(), h, w, 1);
}

Tensor read_png_gray(const std::string& path) {
    int h = 0, w = 0;
    auto px = read_impl(path, h, w, 1);
    Tensor t({h, w});
    for (size_t i = 0; i < px.size(); ++i) t[static_cast<int64_t>(i)] = px[i] / 255.0;
    return t;
}

} // namespace kiwi::img
