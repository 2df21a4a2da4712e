#pragma once

#include <filesystem>

#include "bce/core/raster.hpp"

namespace bce {

/// Reads an 8-bit grayscale or RGB PNG. Palette/alpha/16-bit inputs are converted to 8-bit
/// gray or RGB. Throws DataError on unreadable files.
ByteRaster read_png(const std::filesystem::path& path);

/// Writes a 1- or 3-channel raster as an 8-bit PNG with raw values.
void write_png(const std::filesystem::path& path, const ByteRaster& raster);

ImageTile load_image(const std::filesystem::path& path, std::string tile_id,
                     double resolution_m = 0.0);
/// Nonzero pixels become 1 when `binarize` is set; otherwise values must already be {0,1}.
HistoricalMask load_mask(const std::filesystem::path& path, bool binarize = false);
ChangeLabel load_label(const std::filesystem::path& path);

}  // namespace bce
