#include "mcactrl/app/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace mcactrl {

namespace {

void check_size(const RgbImage& img, const BinaryMask& m) {
    if (img.width != m.width || img.height != m.height) throw std::invalid_argument("image and mask sizes differ");
}

void check_size(const RgbImage& a, const RgbImage& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("image sizes differ");
}

}  // namespace

ColorHistogram color_histogram(const RgbImage& img, const BinaryMask& region) {
    check_size(img, region);
    ColorHistogram h{};
    double n = 0.0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (!region.at(x, y)) continue;
            const Rgb c = img.at(x, y);
            const int bin = (c[0] * kHistBins / 256 * kHistBins + c[1] * kHistBins / 256) * kHistBins + c[2] * kHistBins / 256;
            h[static_cast<size_t>(bin)] += 1.0;
            n += 1.0;
        }
    }
    if (n > 0) {
        for (auto& v : h) v /= n;
    }
    return h;
}

double fg_hist_dist(const RgbImage& a, const BinaryMask& region_a, const RgbImage& b, const BinaryMask& region_b) {
    const ColorHistogram ha = color_histogram(a, region_a), hb = color_histogram(b, region_b);
    double d = 0.0;
    for (size_t i = 0; i < ha.size(); ++i) d += std::abs(ha[i] - hb[i]);
    return d;
}

double bg_mse(const RgbImage& output, const RgbImage& reference, const BinaryMask& editable) {
    check_size(output, reference);
    check_size(output, editable);
    double sum = 0.0;
    int64_t n = 0;
    for (int y = 0; y < output.height; ++y) {
        for (int x = 0; x < output.width; ++x) {
            if (editable.at(x, y)) continue;
            const Rgb a = output.at(x, y), b = reference.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double d = (a[c] - b[c]) / 255.0;
                sum += d * d;
            }
            n += 3;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double mean_abs_error(const RgbImage& a, const RgbImage& b) {
    check_size(a, b);
    double sum = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(int(a.pixels[i]) - int(b.pixels[i])) / 255.0;
    return a.pixels.empty() ? 0.0 : sum / static_cast<double>(a.pixels.size());
}

}  // namespace mcactrl
