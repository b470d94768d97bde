#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcactrl/core/schedule.hpp"
#include "mcactrl/core/tensor.hpp"

namespace mcactrl {

using Rgb = std::array<uint8_t, 3>;

/// 8-bit RGB image, interleaved row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, Rgb fill = {0, 0, 0});

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    bool operator==(const RgbImage&) const = default;
};

/// [1, 3, H, W] in model units ([-1, 1]).
Tensor image_to_tensor(const RgbImage& img);
/// Inverse of image_to_tensor for a single batch item; values are clamped and rounded.
RgbImage tensor_to_image(const Tensor& t, int batch_item = 0);

LatentState image_to_latent(const RgbImage& img);
RgbImage latent_to_image(const LatentState& z);

RgbImage load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace mcactrl
