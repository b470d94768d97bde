#include "mcactrl/mask/segment.hpp"

#include <algorithm>
#include <cstdlib>
#include <vector>

#include "mcactrl/errors.hpp"

namespace mcactrl {

namespace {

bool near(Rgb a, Rgb b, int tol) {
    for (int c = 0; c < 3; ++c) {
        if (std::abs(int(a[c]) - int(b[c])) > tol) return false;
    }
    return true;
}

}  // namespace

std::optional<ObjectShape> classify_region(const BinaryMask& region) {
    int x0 = region.width, y0 = region.height, x1 = -1, y1 = -1;
    for (int y = 0; y < region.height; ++y) {
        for (int x = 0; x < region.width; ++x) {
            if (!region.at(x, y)) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) return std::nullopt;
    const double w = x1 - x0 + 1, h = y1 - y0 + 1;
    if (w < 3 || h < 3) return std::nullopt;
    const double fill = static_cast<double>(region.count()) / (w * h);
    const double aspect = w / h;
    if (aspect < 0.8 || aspect > 1.25) return std::nullopt;
    if (fill >= 0.9) return ObjectShape::Square;
    if (fill >= 0.68) return ObjectShape::Circle;
    if (fill >= 0.35 && fill <= 0.65) return ObjectShape::Triangle;
    return std::nullopt;
}

BinaryMask segment_synthetic(const RgbImage& scene, const ObjectQuery& query, SegmentOptions options) {
    const Rgb base = palette_rgb(query.color), shade = shade_rgb(base);
    const int w = scene.width, h = scene.height;
    BinaryMask family(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Rgb c = scene.at(x, y);
            if (near(c, base, options.color_tolerance) || near(c, shade, options.color_tolerance)) family.set(x, y);
        }
    }
    BinaryMask out(w, h);
    std::vector<int> label(static_cast<size_t>(w) * h, -1);
    std::vector<std::pair<int, int>> stack;
    int next = 0;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            if (!family.at(sx, sy) || label[static_cast<size_t>(sy) * w + sx] >= 0) continue;
            BinaryMask region(w, h);
            stack.push_back({sx, sy});
            label[static_cast<size_t>(sy) * w + sx] = next;
            while (!stack.empty()) {
                const auto [x, y] = stack.back();
                stack.pop_back();
                region.set(x, y);
                const int nb[4][2] = {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
                for (const auto& p : nb) {
                    if (p[0] < 0 || p[1] < 0 || p[0] >= w || p[1] >= h) continue;
                    auto& l = label[static_cast<size_t>(p[1]) * w + p[0]];
                    if (l < 0 && family.at(p[0], p[1])) {
                        l = next;
                        stack.push_back({p[0], p[1]});
                    }
                }
            }
            ++next;
            if (classify_region(region) == query.shape) out = mask_union(out, region);
        }
    }
    if (out.none()) throw NotFoundError("no " + query.text() + " found in scene");
    return out;
}

}  // namespace mcactrl
