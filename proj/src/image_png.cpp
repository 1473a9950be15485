#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "resdistill/data.hpp"

namespace resdistill {

Image make_image(int channels, int h, int w, float fill) {
    Image img;
    img.channels = channels;
    img.h = h;
    img.w = w;
    img.px.assign(std::size_t(channels) * h * w, fill);
    return img;
}

Image quantize_image(const Image& img) {
    Image out = img;
    for (auto& v : out.px) {
        long q = std::lround(double(v) * 255.0);
        if (q < 0) q = 0;
        if (q > 255) q = 255;
        v = float(q) / 255.0f;
    }
    return out;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_png: expected 3 channels");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png: encode failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(std::size_t(img.w) * 3);
    const std::size_t plane = img.plane();
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                long q = std::lround(double(img.px[c * plane + std::size_t(y) * img.w + x]) * 255.0);
                if (q < 0) q = 0;
                if (q > 255) q = 255;
                row[std::size_t(x) * 3 + c] = png_byte(q);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: decode failed for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != std::size_t(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: unexpected row layout in " + path);
    }

    Image img = make_image(3, h, w);
    std::vector<png_byte> row(std::size_t(w) * 3);
    const std::size_t plane = img.plane();
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.px[c * plane + std::size_t(y) * w + x] = float(row[std::size_t(x) * 3 + c]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

} // namespace resdistill
