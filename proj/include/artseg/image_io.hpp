#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <span>

#include "artseg/common.hpp"

namespace artseg {

struct PngInfo {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
};

struct GrayImage {
    int height = 0;
    int width = 0;
    int bit_depth = 8;  // 8 or 16
    std::vector<std::uint16_t> pixels;
};

namespace pngio {

struct Reader {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    ~Reader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }

    void open(const std::string& path) {
        fp = std::fopen(path.c_str(), "rb");
        if (!fp) throw DataError("cannot open '" + path + "'");
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) throw DataError("libpng allocation failed for '" + path + "'");
    }
};

struct Writer {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    ~Writer() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }

    void open(const std::string& path) {
        fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw DataError("cannot open '" + path + "' for writing");
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) throw DataError("libpng allocation failed for '" + path + "'");
    }
};

}  // namespace pngio

inline PngInfo read_png_header(const std::string& path) {
    pngio::Reader r;
    r.open(path);
    // libpng reports errors by longjmp; no C++ objects are mutated inside
    // the guarded region.
    if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG header in '" + path + "'");
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);
    PngInfo out;
    out.width = static_cast<int>(png_get_image_width(r.png, r.info));
    out.height = static_cast<int>(png_get_image_height(r.png, r.info));
    out.bit_depth = png_get_bit_depth(r.png, r.info);
    out.color_type = png_get_color_type(r.png, r.info);
    return out;
}

// 8- or 16-bit single-channel image; anything else is rejected. 16-bit
// samples come back host-endian.
inline GrayImage read_gray_png(const std::string& path) {
    pngio::Reader r;
    r.open(path);
    if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG in '" + path + "'");
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    const int color_type = png_get_color_type(r.png, r.info);
    int bit_depth = png_get_bit_depth(r.png, r.info);
    if (color_type != PNG_COLOR_TYPE_GRAY)
        throw DataError("'" + path + "' is not a grayscale PNG (color type " +
                        std::to_string(color_type) + ")");
    if (bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(r.png);
        bit_depth = 8;
    }
    if (bit_depth == 16) png_set_swap(r.png);
    png_read_update_info(r.png, r.info);

    GrayImage img;
    img.width = static_cast<int>(png_get_image_width(r.png, r.info));
    img.height = static_cast<int>(png_get_image_height(r.png, r.info));
    img.bit_depth = bit_depth;

    const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
    std::vector<std::uint8_t> raw(rowbytes * static_cast<std::size_t>(img.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + rowbytes * y;

    // Re-arm the jump target after the C++ allocations above so a decode
    // failure cannot unwind across freshly mutated objects.
    if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG data in '" + path + "'");
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
    if (bit_depth == 8) {
        for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = raw[i];
    } else {
        std::memcpy(img.pixels.data(), raw.data(), img.pixels.size() * 2);
    }
    return img;
}

// 8-bit class-index image: plain grayscale bytes, or palette indices taken
// verbatim (the palette colors themselves are ignored).
inline IndexMap read_index_png(const std::string& path) {
    pngio::Reader r;
    r.open(path);
    if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG in '" + path + "'");
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    const int color_type = png_get_color_type(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_PALETTE)
        throw DataError("'" + path + "' is not an 8-bit index PNG (color type " +
                        std::to_string(color_type) + ")");
    if (bit_depth > 8)
        throw DataError("'" + path + "' has bit depth " + std::to_string(bit_depth) +
                        ", index maps must be 8-bit");
    if (bit_depth < 8) png_set_packing(r.png);
    png_read_update_info(r.png, r.info);

    IndexMap map;
    map.width = static_cast<int>(png_get_image_width(r.png, r.info));
    map.height = static_cast<int>(png_get_image_height(r.png, r.info));

    const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
    std::vector<std::uint8_t> raw(rowbytes * static_cast<std::size_t>(map.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(map.height));
    for (int y = 0; y < map.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + rowbytes * y;

    if (setjmp(png_jmpbuf(r.png))) throw DataError("malformed PNG data in '" + path + "'");
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    map.values.assign(raw.begin(), raw.begin() + static_cast<std::size_t>(map.height) * map.width);
    return map;
}

inline void write_gray8_png(const std::string& path, int height, int width,
                            std::span<const std::uint8_t> pixels) {
    if (static_cast<std::int64_t>(pixels.size()) != static_cast<std::int64_t>(height) * width)
        throw DimensionError("write_gray8_png: pixel count does not match dimensions");
    pngio::Writer w;
    w.open(path);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(pixels.data()) +
                                            static_cast<std::size_t>(y) * width;
    if (setjmp(png_jmpbuf(w.png))) throw DataError("PNG write failed for '" + path + "'");
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

inline void write_rgb8_png(const std::string& path, int height, int width,
                           std::span<const std::uint8_t> rgb) {
    if (static_cast<std::int64_t>(rgb.size()) != static_cast<std::int64_t>(height) * width * 3)
        throw DimensionError("write_rgb8_png: pixel count does not match dimensions");
    pngio::Writer w;
    w.open(path);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(rgb.data()) +
                                            static_cast<std::size_t>(y) * width * 3;
    if (setjmp(png_jmpbuf(w.png))) throw DataError("PNG write failed for '" + path + "'");
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

// Intensities scaled into [0,1] by the max representable value of the
// source bit depth.
inline FloatImage gray_to_float(const GrayImage& g) {
    FloatImage out(g.height, g.width);
    const float scale = g.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (std::size_t i = 0; i < g.pixels.size(); ++i)
        out.values[i] = static_cast<float>(g.pixels[i]) * scale;
    return out;
}

}  // namespace artseg
