#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sspnet/errors.hpp"

namespace sspnet {

// Channel-last HxWx3 image with unit-interval intensities.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // height*width*3, row-major, RGB

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// Binary PPM (P6, maxval 255). The dataset image format used on disk.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);

// Snaps intensities to the 8-bit grid so in-memory data matches a PPM
// round trip exactly.
void quantize_to_8bit(Image& img);

// Bilinear resample of one plane (pixel-center coordinate convention).
std::vector<double> resize_bilinear_plane(const std::vector<double>& src, int sh, int sw, int th,
                                          int tw);

Image resize_bilinear(const Image& img, int th, int tw);

// Minimal RGB PNG writer (8-bit, zlib-deflated with fixed settings so output
// bytes are stable across runs).
void write_png_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int height,
                   int width);

}  // namespace sspnet
