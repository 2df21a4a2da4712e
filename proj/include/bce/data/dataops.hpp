#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bce/core/raster.hpp"

namespace bce::data {

/// Image, historical mask and fully annotated change label of one tile.
struct Sample {
  ImageTile image;
  HistoricalMask mask;
  ChangeLabel label;

  /// Throws ShapeError/DataError when extents disagree or the label-derived mask differs.
  void validate() const;
  const std::string& tile_id() const { return image.tile_id(); }

  friend bool operator==(const Sample&, const Sample&) = default;
};

// ---------------------------------------------------------------------------------------------
// Bi-temporal conversion

/// Builds a single-temporal sample from a bi-temporal pair.
///
/// The label starts as category 1 on mask_t1. Each 4-connected component p of change_mask whose
/// overlap with mask_t1 exceeds half of |p| is a removed building: its pixels inside mask_t1
/// become 3. Every other component is a new building: its pixels outside mask_t1 become 2.
/// The returned mask is mask_t1.
Sample convert_bitemporal(const ImageTile& image_t2, const HistoricalMask& mask_t1,
                          const ByteRaster& change_mask);

inline constexpr double kRemovedOverlapRatio = 0.5;

// ---------------------------------------------------------------------------------------------
// Supervision targets

struct TargetPlanes {
  ByteRaster new_buildings;       ///< L_N = (cat == 2)
  ByteRaster removed_buildings;   ///< L_R = (cat == 3)
  ByteRaster existing_buildings;  ///< L_E = (cat == 1 or cat == 2)
  ByteRaster historical;          ///< M   = (cat == 1 or cat == 3)
};

TargetPlanes derive_targets(const ChangeLabel& label);
/// Inverse of derive_targets on consistent planes.
ChangeLabel compose_label(const TargetPlanes& planes);

/// Pixel share (percent) of each category; sums to 100.
struct CategoryHistogram {
  double background = 0;
  double unchanged = 0;
  double new_buildings = 0;
  double removed = 0;
};
CategoryHistogram category_histogram(const std::vector<ChangeLabel>& labels);

// ---------------------------------------------------------------------------------------------
// Augmentation

/// Explicit augmentation recipe. Geometric steps apply to image, mask and label alike
/// (nearest-neighbour for mask/label), photometric steps to the image only.
struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;          ///< clockwise quarter turns, applied only to square tiles
  double scale = 1.0;     ///< isotropic zoom about the centre, cropped/padded back to H x W
  bool photometric = false;
  double brightness[3] = {0, 0, 0};  ///< additive, in 0-255 units
  double contrast[3] = {1, 1, 1};    ///< multiplicative about 127.5
};

inline constexpr double kScaleMin = 0.8;
inline constexpr double kScaleMax = 1.2;

Sample apply_augmentation(const Sample& sample, const AugmentOps& ops);
/// Draws a recipe with at least one active step from `seed`.
AugmentOps draw_augmentation(std::uint64_t seed, bool square);
Sample augment(const Sample& sample, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Random change simulation

struct RsgParams {
  std::pair<int, int> n_removed_range{0, 3};
  std::pair<int, int> area_range_px{64, 1024};
  std::pair<double, double> aspect_range{0.5, 2.0};
  std::pair<double, double> rotation_range_deg{0.0, 180.0};
  double flip_to_new_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kMaxPlacementAttempts = 100;

/// (a) places k ~ U(n_removed_range) rotated rectangles wholly on background (keeping one pixel
/// of clearance from every building) as category 3 and adds them to the mask; (b) relabels a
/// flip_to_new_fraction share of unchanged instances as new and clears them from the mask.
Sample simulate_changes(const Sample& sample, const RsgParams& params);

/// Rasterises a rectangle of the given size centred at (row, col) and rotated by `angle_deg`
/// (pixel centres inside the rectangle). Pixels outside the raster are reported via `clipped`.
std::vector<std::pair<int, int>> rasterize_rotated_rect(double center_row, double center_col,
                                                        double height, double width,
                                                        double angle_deg, int rows, int cols,
                                                        bool& clipped);

// ---------------------------------------------------------------------------------------------
// Dataset I/O

enum class Split { train, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct DatasetEntry {
  Sample sample;
  Split split = Split::train;
};

/// root/{train,test}/<tile_id>_{img,mask,label}.png plus root/manifest.json.
void write_dataset(const std::vector<DatasetEntry>& entries, const std::filesystem::path& root);
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& root);
/// Entries of one split, in manifest order.
std::vector<Sample> select_split(const std::vector<DatasetEntry>& entries, Split split);

}  // namespace bce::data
