#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vinsert {

// 8-bit PNG I/O. Images are float tensors in [0,1]: [3,H,W] for RGB, [1,H,W]
// for grayscale. Out-of-range values are clamped on write.

inline Tensor read_png(const std::string& path) {
    FILE* fp = fopen(path.c_str(), "rb");
    VINSERT_FATAL_CHECK(fp, "cannot open '%s' for reading", path.c_str());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fclose(fp);
        throw fatal_error("libpng failed reading '" + path + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    std::vector<png_byte> row(w * channels);
    Tensor img({channels == 1 ? 1 : 3, (int)h, (int)w});
    for (png_uint_32 y = 0; y < h; y++) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; x++) {
            for (int c = 0; c < img.shape[0]; c++) {
                int src = channels == 1 ? 0 : c;
                img.at(c, (int)y, (int)x) = row[x * channels + src] / 255.0f;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    fclose(fp);
    return img;
}

inline void write_png(const std::string& path, const Tensor& img) {
    VINSERT_FATAL_CHECK(img.ndim() == 3 && (img.shape[0] == 1 || img.shape[0] == 3),
                        "write_png expects [1|3,H,W], got %s", img.shape_str().c_str());
    FILE* fp = fopen(path.c_str(), "wb");
    VINSERT_FATAL_CHECK(fp, "cannot open '%s' for writing", path.c_str());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fclose(fp);
        throw fatal_error("libpng failed writing '" + path + "'");
    }
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(w * c);
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++)
            for (int ch = 0; ch < c; ch++) {
                float v = img.at(ch, y, x);
                v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                row[x * c + ch] = (png_byte)std::lround(v * 255.0f);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fclose(fp);
}

}  // namespace vinsert
