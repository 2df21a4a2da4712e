#include "bce/core/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace bce {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

ByteRaster read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open PNG '" + path.string() + "'");

  std::string err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }

  ByteRaster out;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int rows = static_cast<int>(png_get_image_height(png, info));
  const int cols = static_cast<int>(png_get_image_width(png, info));
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG channel count in '" + path.string() + "'");
  }
  out = ByteRaster(rows, cols, channels);
  row_ptrs.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) row_ptrs[r] = &out(r, 0, 0);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const ByteRaster& raster) {
  if (raster.channels() != 1 && raster.channels() != 3) {
    throw DataError("write_png: only 1- or 3-channel rasters are supported");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot create PNG '" + path.string() + "'");

  std::string err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(raster.rows()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.cols()),
               static_cast<png_uint_32>(raster.rows()), 8,
               raster.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < raster.rows(); ++r) {
    row_ptrs[r] = const_cast<png_bytep>(&raster(r, 0, 0));
  }
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageTile load_image(const std::filesystem::path& path, std::string tile_id, double resolution_m) {
  ByteRaster raw = read_png(path);
  if (raw.channels() == 1) {
    ByteRaster rgb(raw.rows(), raw.cols(), 3);
    for (int r = 0; r < raw.rows(); ++r) {
      for (int c = 0; c < raw.cols(); ++c) {
        for (int k = 0; k < 3; ++k) rgb(r, c, k) = raw(r, c);
      }
    }
    raw = std::move(rgb);
  }
  return ImageTile(std::move(raw), std::move(tile_id), resolution_m);
}

HistoricalMask load_mask(const std::filesystem::path& path, bool binarize) {
  ByteRaster raw = read_png(path);
  if (raw.channels() != 1) throw DataError("mask '" + path.string() + "' must be single-channel");
  if (binarize) {
    for (auto& v : raw.data()) v = v != 0 ? 1 : 0;
  }
  try {
    return HistoricalMask(std::move(raw));
  } catch (const DataError& e) {
    throw DataError("mask '" + path.string() + "': " + e.what());
  }
}

ChangeLabel load_label(const std::filesystem::path& path) {
  ByteRaster raw = read_png(path);
  if (raw.channels() != 1) throw DataError("label '" + path.string() + "' must be single-channel");
  try {
    return ChangeLabel(std::move(raw));
  } catch (const DataError& e) {
    throw DataError("label '" + path.string() + "': " + e.what());
  }
}

}  // namespace bce
