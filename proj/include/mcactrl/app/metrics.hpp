#pragma once

#include <array>

#include "mcactrl/mask/mask.hpp"
#include "mcactrl/scene/image.hpp"

namespace mcactrl {

/// 4 bins per channel over RGB, normalised to sum 1 (all zero for an empty region).
inline constexpr int kHistBins = 4;
using ColorHistogram = std::array<double, kHistBins * kHistBins * kHistBins>;

ColorHistogram color_histogram(const RgbImage& img, const BinaryMask& region);

/// L1 distance between the normalised histograms of two masked regions, in [0, 2].
double fg_hist_dist(const RgbImage& a, const BinaryMask& region_a, const RgbImage& b, const BinaryMask& region_b);

/// Mean squared error in [0,1] pixel units over pixels outside `editable`. 0 if nothing is outside.
double bg_mse(const RgbImage& output, const RgbImage& reference, const BinaryMask& editable);

/// Mean absolute difference in [0,1] pixel units.
double mean_abs_error(const RgbImage& a, const RgbImage& b);

}  // namespace mcactrl
