#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ddae/image.hpp"

namespace ddae {

struct RgbImage {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// 8-bit grayscale PNG; pixels are clamped to [0,1] and rounded to the nearest 1/255 step.
void write_png_gray8(const std::filesystem::path& path, const Image& image);

// Any PNG colour type; colour is reduced to luminance and 16-bit data to 8 bits. Pixels are v/255.
Image read_png_gray(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace ddae
