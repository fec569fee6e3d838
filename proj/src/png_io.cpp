#include "ddae/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <png.h>

#include "ddae/errors.hpp"

namespace ddae {

namespace {

void write_png(const std::filesystem::path& path, int64_t rows, int64_t cols, png_uint_32 format,
               const std::vector<uint8_t>& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(cols);
    img.height = static_cast<png_uint_32>(rows);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, data.data(), 0, nullptr)) {
        throw DataError("cannot write " + path.string() + ": " + img.message);
    }
}

}  // namespace

void write_png_gray8(const std::filesystem::path& path, const Image& image) {
    std::vector<uint8_t> bytes(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), [](float v) {
        return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    });
    write_png(path, image.rows, image.cols, PNG_FORMAT_GRAY, bytes);
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
    if (image.rgb.size() != static_cast<size_t>(image.rows * image.cols * 3)) {
        throw std::invalid_argument("write_png_rgb: buffer size mismatch");
    }
    write_png(path, image.rows, image.cols, PNG_FORMAT_RGB, image.rgb);
}

Image read_png_gray(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw DataError("cannot read image " + path.string() + ": " + img.message);
    }
    // Colour input is converted to 8-bit luminance; the simplified API works in sRGB here.
    img.format = PNG_FORMAT_GRAY;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode image " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int64_t>(img.height), static_cast<int64_t>(img.width));
    std::transform(buf.begin(), buf.end(), out.pixels.begin(), [](uint8_t v) { return v / 255.0f; });
    return out;
}

}  // namespace ddae
