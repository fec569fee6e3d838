#include "ddae/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <torch/torch.h>

namespace ddae {

double mean_intensity(const Image& img) {
    if (img.pixels.empty()) return 0.0;
    double acc = std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0);
    return acc / static_cast<double>(img.pixels.size());
}

Image quantize_8bit(Image img) {
    for (auto& p : img.pixels) {
        const float clamped = std::clamp(p, 0.0f, 1.0f);
        p = static_cast<float>(std::lround(clamped * 255.0f)) / 255.0f;
    }
    return img;
}

torch::Tensor images_to_tensor(std::span<const Image> images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty image list");
    const auto rows = images.front().rows;
    const auto cols = images.front().cols;
    auto out = torch::empty({static_cast<int64_t>(images.size()), 1, rows, cols}, torch::kFloat32);
    auto* dst = out.data_ptr<float>();
    for (const auto& img : images) {
        if (img.rows != rows || img.cols != cols) {
            throw std::invalid_argument("images_to_tensor: images differ in shape");
        }
        dst = std::copy(img.pixels.begin(), img.pixels.end(), dst);
    }
    return out;
}

torch::Tensor image_to_tensor(const Image& image) {
    return images_to_tensor(std::span<const Image>(&image, 1));
}

std::vector<Image> tensor_to_images(const torch::Tensor& batch) {
    auto t = batch.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    if (t.dim() == 4) {
        if (t.size(1) != 1) throw std::invalid_argument("tensor_to_images: expected one channel");
        t = t.squeeze(1);
    }
    if (t.dim() != 3) throw std::invalid_argument("tensor_to_images: expected [N,1,H,W] or [N,H,W]");
    std::vector<Image> out;
    out.reserve(static_cast<size_t>(t.size(0)));
    const auto* src = t.data_ptr<float>();
    const int64_t n = t.size(1) * t.size(2);
    for (int64_t i = 0; i < t.size(0); ++i) {
        Image img(t.size(1), t.size(2));
        std::copy(src + i * n, src + (i + 1) * n, img.pixels.begin());
        out.push_back(std::move(img));
    }
    return out;
}

Image tensor_to_image(const torch::Tensor& single) {
    auto t = single;
    if (t.dim() == 2) t = t.unsqueeze(0);
    auto imgs = tensor_to_images(t);
    if (imgs.size() != 1) throw std::invalid_argument("tensor_to_image: batch holds more than one image");
    return std::move(imgs.front());
}

torch::Tensor to_model_range(const torch::Tensor& unit) { return unit * 2.0 - 1.0; }

torch::Tensor to_unit_range(const torch::Tensor& model) { return ((model + 1.0) * 0.5).clamp(0.0, 1.0); }

}  // namespace ddae
