#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/types.h>

namespace ddae {

// Single-channel image stored row-major. Pixel values are nominally in [0,1].
struct Image {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int64_t rows_, int64_t cols_, float fill = 0.0f)
        : rows(rows_), cols(cols_), pixels(static_cast<size_t>(rows_ * cols_), fill) {}

    float& at(int64_t r, int64_t c) { return pixels[static_cast<size_t>(r * cols + c)]; }
    float at(int64_t r, int64_t c) const { return pixels[static_cast<size_t>(r * cols + c)]; }
    int64_t size() const { return rows * cols; }
    bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Image&) const = default;
};

double mean_intensity(const Image& img);

// Round every pixel to the nearest multiple of 1/255 (the on-disk 8-bit grid).
Image quantize_8bit(Image img);

// [N,1,H,W] float32 tensor from equally sized images.
torch::Tensor images_to_tensor(std::span<const Image> images);
torch::Tensor image_to_tensor(const Image& image);

// Inverse of images_to_tensor; accepts [N,1,H,W] or [N,H,W].
std::vector<Image> tensor_to_images(const torch::Tensor& batch);
Image tensor_to_image(const torch::Tensor& single);

// Affine maps between the external [0,1] range and the [-1,1] range used by the diffusion core.
torch::Tensor to_model_range(const torch::Tensor& unit);
torch::Tensor to_unit_range(const torch::Tensor& model);

}  // namespace ddae
