#pragma once

#include "mcactrl/mask/mask.hpp"
#include "mcactrl/scene/scene.hpp"

namespace mcactrl {

struct SegmentOptions {
    /// Per-channel tolerance when matching a pixel to the queried color or its shade.
    int color_tolerance = 12;
};

/// Classifies a filled region by how much of its bounding box it covers.
std::optional<ObjectShape> classify_region(const BinaryMask& region);

/// Union of the 4-connected regions whose pixels match the queried color (or
/// its textured shade) and whose outline classifies as the queried shape.
/// Throws NotFoundError when nothing matches.
BinaryMask segment_synthetic(const RgbImage& scene, const ObjectQuery& query, SegmentOptions options = {});

}  // namespace mcactrl
