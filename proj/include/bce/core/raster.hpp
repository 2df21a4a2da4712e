#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bce/core/error.hpp"

namespace bce {

/// Row-major interleaved raster (rows x cols x channels).
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int rows, int cols, int channels = 1, T fill = T{})
      : rows_(rows), cols_(cols), channels_(channels),
        data_(static_cast<std::size_t>(rows) * cols * channels, fill) {
    if (rows < 0 || cols < 0 || channels <= 0) {
      throw ShapeError("raster extents must be non-negative with at least one channel");
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c, int ch = 0) {
    return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
  }
  const T& operator()(int r, int c, int ch = 0) const {
    return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  bool same_extent(int rows, int cols) const { return rows_ == rows && cols_ == cols; }
  template <typename U>
  bool same_extent(const Raster<U>& other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using ByteRaster = Raster<std::uint8_t>;

/// Label categories of a fully annotated change raster.
enum class Category : std::uint8_t {
  background = 0,
  unchanged = 1,
  new_building = 2,
  removed = 3,
};

/// Up-to-date RGB image patch. Extents must be positive multiples of 32.
class ImageTile {
 public:
  ImageTile() = default;
  ImageTile(ByteRaster pixels, std::string tile_id, double resolution_m = 0.0);

  const ByteRaster& pixels() const { return pixels_; }
  ByteRaster& pixels() { return pixels_; }
  const std::string& tile_id() const { return tile_id_; }
  void set_tile_id(std::string id) { tile_id_ = std::move(id); }
  double resolution_m() const { return resolution_m_; }
  void set_resolution_m(double r) { resolution_m_ = r; }
  int rows() const { return pixels_.rows(); }
  int cols() const { return pixels_.cols(); }

  friend bool operator==(const ImageTile&, const ImageTile&) = default;

 private:
  ByteRaster pixels_;
  std::string tile_id_;
  double resolution_m_ = 0.0;
};

/// Binary prior-epoch building footprints (1 = building).
class HistoricalMask {
 public:
  HistoricalMask() = default;
  HistoricalMask(int rows, int cols) : values_(rows, cols, 1, 0) {}
  explicit HistoricalMask(ByteRaster values);

  const ByteRaster& values() const { return values_; }
  int rows() const { return values_.rows(); }
  int cols() const { return values_.cols(); }
  bool operator()(int r, int c) const { return values_(r, c) != 0; }
  void set(int r, int c, bool on) { values_(r, c) = on ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const HistoricalMask&, const HistoricalMask&) = default;

 private:
  ByteRaster values_;
};

/// Per-pixel change category raster with values in {0,1,2,3}.
class ChangeLabel {
 public:
  ChangeLabel() = default;
  ChangeLabel(int rows, int cols) : categories_(rows, cols, 1, 0) {}
  explicit ChangeLabel(ByteRaster categories);

  const ByteRaster& categories() const { return categories_; }
  int rows() const { return categories_.rows(); }
  int cols() const { return categories_.cols(); }
  Category operator()(int r, int c) const { return static_cast<Category>(categories_(r, c)); }
  void set(int r, int c, Category cat) { categories_(r, c) = static_cast<std::uint8_t>(cat); }

  friend bool operator==(const ChangeLabel&, const ChangeLabel&) = default;

 private:
  ByteRaster categories_;
};

/// Throws ShapeError unless both rasters share rows/cols.
template <typename A, typename B>
void require_same_extent(const Raster<A>& a, const Raster<B>& b, const char* what) {
  if (!a.same_extent(b)) {
    throw ShapeError(std::string(what) + ": extent mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace bce
