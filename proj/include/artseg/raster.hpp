#pragma once

#include "artseg/common.hpp"

namespace artseg {

// Half-pixel-center bilinear resize for intensities. Degenerates to an exact
// copy when the size is unchanged.
inline FloatImage resize_bilinear(const FloatImage& src, int th, int tw) {
    if (th < 1 || tw < 1) throw ConfigError("resize target must be positive");
    FloatImage dst(th, tw);
    const double sy = static_cast<double>(src.height) / th;
    const double sx = static_cast<double>(src.width) / tw;
    for (int y = 0; y < th; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        fy -= y0;
        const int y1 = std::min(std::max(y0 + 1, 0), src.height - 1);
        y0 = std::min(std::max(y0, 0), src.height - 1);
        for (int x = 0; x < tw; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            fx -= x0;
            const int x1 = std::min(std::max(x0 + 1, 0), src.width - 1);
            x0 = std::min(std::max(x0, 0), src.width - 1);
            const double top = (1.0 - fx) * src.at(y0, x0) + fx * src.at(y0, x1);
            const double bot = (1.0 - fx) * src.at(y1, x0) + fx * src.at(y1, x1);
            dst.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return dst;
}

// Nearest-neighbour resize for label maps. Class indices must never be
// interpolated: every output value is one of the input values.
inline IndexMap resize_nearest(const IndexMap& src, int th, int tw) {
    if (th < 1 || tw < 1) throw ConfigError("resize target must be positive");
    IndexMap dst(th, tw);
    const double sy = static_cast<double>(src.height) / th;
    const double sx = static_cast<double>(src.width) / tw;
    for (int y = 0; y < th; ++y) {
        const int iy = std::min(static_cast<int>(std::floor((y + 0.5) * sy)), src.height - 1);
        for (int x = 0; x < tw; ++x) {
            const int ix = std::min(static_cast<int>(std::floor((x + 0.5) * sx)), src.width - 1);
            dst.at(y, x) = src.at(iy, ix);
        }
    }
    return dst;
}

// Mirror about the vertical axis: pixel (r, c) moves to (r, W-1-c).
inline void hflip(FloatImage& image) {
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width / 2; ++c)
            std::swap(image.at(r, c), image.at(r, image.width - 1 - c));
}

inline void hflip(IndexMap& map) {
    for (int r = 0; r < map.height; ++r)
        for (int c = 0; c < map.width / 2; ++c)
            std::swap(map.at(r, c), map.at(r, map.width - 1 - c));
}

// Image and label are flipped together so the pairing stays aligned.
inline void hflip(FloatImage& image, IndexMap& label) {
    if (image.height != label.height || image.width != label.width)
        throw DimensionError("hflip: image and label dimensions differ");
    hflip(image);
    hflip(label);
}

}  // namespace artseg
