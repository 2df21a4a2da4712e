#include "bce/core/raster.hpp"

#include <algorithm>

namespace bce {

ImageTile::ImageTile(ByteRaster pixels, std::string tile_id, double resolution_m)
    : pixels_(std::move(pixels)), tile_id_(std::move(tile_id)), resolution_m_(resolution_m) {
  if (pixels_.channels() != 3) {
    throw DataError("image tile '" + tile_id_ + "' must have 3 channels");
  }
  if (pixels_.rows() <= 0 || pixels_.cols() <= 0 || pixels_.rows() % 32 != 0 ||
      pixels_.cols() % 32 != 0) {
    throw DataError("image tile '" + tile_id_ + "' extent " + std::to_string(pixels_.rows()) +
                    "x" + std::to_string(pixels_.cols()) + " is not a positive multiple of 32");
  }
}

HistoricalMask::HistoricalMask(ByteRaster values) : values_(std::move(values)) {
  if (values_.channels() != 1) throw DataError("historical mask must be single-channel");
  if (std::ranges::any_of(values_.data(), [](std::uint8_t v) { return v > 1; })) {
    throw DataError("historical mask values must be 0 or 1");
  }
}

std::size_t HistoricalMask::count() const {
  return static_cast<std::size_t>(std::ranges::count(values_.data(), std::uint8_t{1}));
}

ChangeLabel::ChangeLabel(ByteRaster categories) : categories_(std::move(categories)) {
  if (categories_.channels() != 1) throw DataError("change label must be single-channel");
  if (std::ranges::any_of(categories_.data(), [](std::uint8_t v) { return v > 3; })) {
    throw DataError("change label values must lie in {0,1,2,3}");
  }
}

}  // namespace bce
