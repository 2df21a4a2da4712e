#pragma once

#include <cstdint>
#include <vector>

#include "bce/core/raster.hpp"

namespace bce {

struct Pixel {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Inclusive bounding box.
struct BoundingBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int height() const { return row_max - row_min + 1; }
  int width() const { return col_max - col_min + 1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// One 4-connected region. Pixels are stored in raster order.
struct BuildingInstance {
  std::vector<Pixel> pixels;
  BoundingBox bbox;
  int category = 0;
  int instance_id = 0;
};

/// Per-pixel component ids (0 = not in any component, components numbered from 1) plus count.
struct ComponentMap {
  Raster<std::int32_t> ids;
  int count = 0;
};

/// 4-connected labelling of the non-zero pixels of `mask` (two-pass union-find).
/// Component ids follow the order of each component's first pixel in raster order.
ComponentMap label_components(const ByteRaster& mask);

/// 4-connected components of the non-zero pixels, sorted by (row_min, col_min) and
/// numbered from 1 in that order. `category` is copied into each instance.
std::vector<BuildingInstance> extract_components(const ByteRaster& mask, int category = 1);

/// Connected components of (label == category), category in {1,2,3}.
std::vector<BuildingInstance> extract_instances(const ChangeLabel& label, int category);

/// Instances of a historical mask; category is recorded as 1.
std::vector<BuildingInstance> extract_instances(const HistoricalMask& mask);

}  // namespace bce
