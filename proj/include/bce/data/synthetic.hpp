#pragma once

#include <cstdint>
#include <string>

#include "bce/data/dataops.hpp"

namespace bce::data {

struct SceneParams {
  int rows = 256;
  int cols = 256;
  int unchanged = 6;
  int added = 2;    ///< buildings present in the image but not in the mask
  int removed = 2;  ///< buildings in the mask whose roof is gone from the image
  int min_side = 14;
  int max_side = 40;
  double noise = 8.0;  ///< per-pixel uniform noise amplitude (0-255 units)
  std::uint64_t seed = 0;
};

/// Procedural tile: textured ground with axis-aligned roofs. Returns a consistent sample
/// (image, historical mask, label). Placement stops early when a tile is too crowded.
Sample synthetic_scene(const SceneParams& params, const std::string& tile_id);

}  // namespace bce::data
