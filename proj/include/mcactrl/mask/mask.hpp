#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mcactrl/core/tensor.hpp"

namespace mcactrl {

/// Row-major binary mask; every entry is 0 or 1.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int w, int h, uint8_t fill = 0);

    uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x]; }
    void set(int x, int y, uint8_t v = 1) { bits[static_cast<size_t>(y) * width + x] = v; }
    int64_t count() const;
    bool none() const { return count() == 0; }
    bool operator==(const BinaryMask&) const = default;
};

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_invert(const BinaryMask& m);
/// True when every set bit of `inner` is also set in `outer`.
bool mask_contains(const BinaryMask& outer, const BinaryMask& inner);

/// 3x3 square structuring element applied `iterations` times.
struct DilationKernel {
    int iterations = 1;
};

BinaryMask dilate(const BinaryMask& mask, DilationKernel kernel = {});

/// Keyed by (height, width) of the attention layer it serves.
using MaskPyramid = std::map<std::pair<int, int>, BinaryMask>;

/// Max-pool downsample: a cell is set if any base pixel it covers is set.
/// Cell (i, j) covers base rows [floor(i*H/h), ceil((i+1)*H/h)).
BinaryMask downsample_max(const BinaryMask& mask, int height, int width);

MaskPyramid build_pyramid(const BinaryMask& mask, std::span<const std::pair<int, int>> resolutions);

/// Cross-attention probabilities of one layer, [batch, heads, h*w, context].
struct CrossAttentionMap {
    Tensor probs;
    int height = 0;
    int width = 0;
};

/// Averages one token's attention over heads and the given maps (each
/// nearest-upsampled to out_h x out_w), min-max normalises and thresholds.
/// A flat map gives an empty mask. `prompt_length` is the number of real
/// (non-padding) tokens; token_index must fall inside it.
BinaryMask extract_cross_attention_mask(std::span<const CrossAttentionMap> maps, int batch_item, int token_index,
                                        int prompt_length, int out_h, int out_w, float threshold = 0.5f);

/// Grayscale PNG, 0 = background and 255 = foreground. Other values are a FormatError.
BinaryMask load_mask_png(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

/// Region file: one line `x0 y0 x1 y1`, an inclusive pixel box.
BinaryMask load_region(const std::filesystem::path& path, int width, int height);
void save_region(const std::filesystem::path& path, int x0, int y0, int x1, int y1);
BinaryMask box_mask(int width, int height, int x0, int y0, int x1, int y1);

}  // namespace mcactrl
