#include "mcactrl/scene/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mcactrl/errors.hpp"

namespace mcactrl {

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
    pixels.resize(static_cast<size_t>(w) * h * 3);
    for (size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

Rgb RgbImage::at(int x, int y) const {
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(int x, int y, Rgb c) {
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    pixels[i] = c[0];
    pixels[i + 1] = c[1];
    pixels[i + 2] = c[2];
}

Tensor image_to_tensor(const RgbImage& img) {
    Tensor t({1, 3, img.height, img.width});
    const int64_t plane = static_cast<int64_t>(img.height) * img.width;
    for (int64_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            t.data[static_cast<size_t>(c * plane + p)] = img.pixels[static_cast<size_t>(p * 3 + c)] / 127.5f - 1.0f;
        }
    }
    return t;
}

RgbImage tensor_to_image(const Tensor& t, int batch_item) {
    if (t.rank() != 4 || t.dim(1) != 3) throw std::invalid_argument("expected [B,3,H,W], got " + shape_str(t.shape));
    if (batch_item < 0 || batch_item >= t.dim(0)) throw std::invalid_argument("batch item out of range");
    RgbImage img(t.dim(3), t.dim(2));
    const int64_t plane = static_cast<int64_t>(img.height) * img.width;
    const float* base = t.ptr() + batch_item * 3 * plane;
    for (int64_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp((base[c * plane + p] + 1.0f) * 127.5f, 0.0f, 255.0f);
            img.pixels[static_cast<size_t>(p * 3 + c)] = static_cast<uint8_t>(std::lround(v));
        }
    }
    return img;
}

LatentState image_to_latent(const RgbImage& img) { return LatentState::from_tensor(image_to_tensor(img)); }

RgbImage latent_to_image(const LatentState& z) { return tensor_to_image(z.to_tensor()); }

RgbImage load_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) throw FormatError(path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    RgbImage img(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
        throw FormatError(path.string() + ": " + image.message);
    }
    return img;
}

void save_png(const std::filesystem::path& path, const RgbImage& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": " + image.message);
    }
}

}  // namespace mcactrl
