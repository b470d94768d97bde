#include "mcactrl/mask/mask.hpp"

#include <png.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mcactrl/errors.hpp"

namespace mcactrl {

BinaryMask::BinaryMask(int w, int h, uint8_t fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("mask dimensions must be positive");
    if (fill > 1) throw std::invalid_argument("mask fill must be 0 or 1");
    bits.assign(static_cast<size_t>(w) * h, fill);
}

int64_t BinaryMask::count() const { return std::accumulate(bits.begin(), bits.end(), int64_t{0}); }

namespace {

void require_same_size(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("mask size mismatch");
}

}  // namespace

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    BinaryMask out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= b.bits[i];
    return out;
}

BinaryMask mask_invert(const BinaryMask& m) {
    BinaryMask out = m;
    for (auto& b : out.bits) b ^= 1;
    return out;
}

bool mask_contains(const BinaryMask& outer, const BinaryMask& inner) {
    require_same_size(outer, inner);
    for (size_t i = 0; i < inner.bits.size(); ++i) {
        if (inner.bits[i] && !outer.bits[i]) return false;
    }
    return true;
}

BinaryMask dilate(const BinaryMask& mask, DilationKernel kernel) {
    if (kernel.iterations < 0) throw std::invalid_argument("dilation iterations must be >= 0");
    BinaryMask cur = mask;
    for (int it = 0; it < kernel.iterations; ++it) {
        BinaryMask next(cur.width, cur.height);
        for (int y = 0; y < cur.height; ++y) {
            for (int x = 0; x < cur.width; ++x) {
                if (!cur.at(x, y)) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx >= 0 && ny >= 0 && nx < cur.width && ny < cur.height) next.set(nx, ny);
                    }
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

BinaryMask downsample_max(const BinaryMask& mask, int height, int width) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("pyramid level must be positive");
    if (height > mask.height || width > mask.width) {
        throw std::invalid_argument("pyramid level " + std::to_string(height) + "x" + std::to_string(width) +
                                    " exceeds base " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    BinaryMask out(width, height);
    for (int i = 0; i < height; ++i) {
        const int y0 = i * mask.height / height;
        const int y1 = ((i + 1) * mask.height + height - 1) / height;
        for (int j = 0; j < width; ++j) {
            const int x0 = j * mask.width / width;
            const int x1 = ((j + 1) * mask.width + width - 1) / width;
            uint8_t v = 0;
            for (int y = y0; y < y1 && !v; ++y) {
                for (int x = x0; x < x1; ++x) {
                    if (mask.at(x, y)) {
                        v = 1;
                        break;
                    }
                }
            }
            out.set(j, i, v);
        }
    }
    return out;
}

MaskPyramid build_pyramid(const BinaryMask& mask, std::span<const std::pair<int, int>> resolutions) {
    MaskPyramid out;
    for (const auto& [h, w] : resolutions) out[{h, w}] = downsample_max(mask, h, w);
    return out;
}

BinaryMask extract_cross_attention_mask(std::span<const CrossAttentionMap> maps, int batch_item, int token_index,
                                        int prompt_length, int out_h, int out_w, float threshold) {
    if (token_index < 0 || token_index >= prompt_length) {
        throw std::invalid_argument("token index " + std::to_string(token_index) + " outside prompt of length " +
                                    std::to_string(prompt_length));
    }
    if (maps.empty()) throw std::invalid_argument("no cross-attention maps to extract from");
    std::vector<double> acc(static_cast<size_t>(out_h) * out_w, 0.0);
    for (const auto& m : maps) {
        const Tensor& p = m.probs;
        if (p.rank() != 4 || p.dim(2) != m.height * m.width) {
            throw std::invalid_argument("cross-attention map shape " + shape_str(p.shape) + " does not match " +
                                        std::to_string(m.height) + "x" + std::to_string(m.width));
        }
        if (batch_item < 0 || batch_item >= p.dim(0)) throw std::invalid_argument("batch item out of range");
        if (token_index >= p.dim(3)) throw std::invalid_argument("token index beyond context length");
        const int heads = p.dim(1), tokens = p.dim(2), ctx = p.dim(3);
        for (int y = 0; y < out_h; ++y) {
            const int sy = y * m.height / out_h;
            for (int x = 0; x < out_w; ++x) {
                const int sx = x * m.width / out_w;
                double v = 0.0;
                for (int h = 0; h < heads; ++h) {
                    const int64_t idx = ((static_cast<int64_t>(batch_item) * heads + h) * tokens + sy * m.width + sx) * ctx +
                                        token_index;
                    v += p.data[static_cast<size_t>(idx)];
                }
                acc[static_cast<size_t>(y) * out_w + x] += v / heads;
            }
        }
    }
    const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
    BinaryMask out(out_w, out_h);
    const double mn = *lo, mx = *hi;
    if (mx == mn) return out;
    for (size_t i = 0; i < acc.size(); ++i) out.bits[i] = (acc[i] - mn) / (mx - mn) >= threshold ? 1 : 0;
    return out;
}

BinaryMask load_mask_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw FormatError(path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        throw FormatError(path.string() + ": " + image.message);
    }
    BinaryMask out(static_cast<int>(image.width), static_cast<int>(image.height));
    for (size_t i = 0; i < buf.size(); ++i) {
        if (buf[i] != 0 && buf[i] != 255) {
            throw FormatError(path.string() + ": non-binary mask value " + std::to_string(buf[i]));
        }
        out.bits[i] = buf[i] ? 1 : 0;
    }
    return out;
}

void save_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::vector<uint8_t> buf(mask.bits.size());
    std::transform(mask.bits.begin(), mask.bits.end(), buf.begin(), [](uint8_t b) { return b ? 255 : 0; });
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(mask.width);
    image.height = static_cast<png_uint_32>(mask.height);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": " + image.message);
    }
}

BinaryMask box_mask(int width, int height, int x0, int y0, int x1, int y1) {
    if (x0 > x1 || y0 > y1 || x0 < 0 || y0 < 0 || x1 >= width || y1 >= height) {
        throw std::invalid_argument("box " + std::to_string(x0) + " " + std::to_string(y0) + " " + std::to_string(x1) +
                                    " " + std::to_string(y1) + " is not inside " + std::to_string(width) + "x" +
                                    std::to_string(height));
    }
    BinaryMask out(width, height);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) out.set(x, y);
    }
    return out;
}

BinaryMask load_region(const std::filesystem::path& path, int width, int height) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    int x0, y0, x1, y1;
    if (!(in >> x0 >> y0 >> x1 >> y1)) throw FormatError(path.string() + ": expected `x0 y0 x1 y1`");
    return box_mask(width, height, x0, y0, x1, y1);
}

void save_region(const std::filesystem::path& path, int x0, int y0, int x1, int y1) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    out << x0 << ' ' << y0 << ' ' << x1 << ' ' << y1 << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace mcactrl
