#include "bce/data/dataops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bce/core/instances.hpp"
#include "bce/core/png_io.hpp"
#include "bce/core/rng.hpp"

namespace bce::data {

void Sample::validate() const {
  require_same_extent(image.pixels(), mask.values(), "sample image/mask");
  require_same_extent(image.pixels(), label.categories(), "sample image/label");
  if (!(derive_targets(label).historical == mask.values())) {
    throw DataError("sample '" + tile_id() + "': label-derived mask differs from stored mask");
  }
}

// ---------------------------------------------------------------------------------------------
// Conversion

Sample convert_bitemporal(const ImageTile& image_t2, const HistoricalMask& mask_t1,
                          const ByteRaster& change_mask) {
  require_same_extent(image_t2.pixels(), mask_t1.values(), "convert_bitemporal image/mask");
  require_same_extent(image_t2.pixels(), change_mask, "convert_bitemporal image/change");
  const int rows = mask_t1.rows();
  const int cols = mask_t1.cols();
  ChangeLabel label(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (mask_t1(r, c)) label.set(r, c, Category::unchanged);
    }
  }
  for (const auto& comp : extract_components(change_mask)) {
    std::size_t overlap = 0;
    for (const auto& px : comp.pixels) overlap += mask_t1(px.row, px.col) ? 1 : 0;
    const bool removed =
        static_cast<double>(overlap) > kRemovedOverlapRatio * static_cast<double>(comp.pixels.size());
    for (const auto& px : comp.pixels) {
      const bool in_history = mask_t1(px.row, px.col);
      if (removed && in_history) label.set(px.row, px.col, Category::removed);
      if (!removed && !in_history) label.set(px.row, px.col, Category::new_building);
    }
  }
  return {image_t2, mask_t1, std::move(label)};
}

// ---------------------------------------------------------------------------------------------
// Targets

TargetPlanes derive_targets(const ChangeLabel& label) {
  const int rows = label.rows();
  const int cols = label.cols();
  TargetPlanes t{ByteRaster(rows, cols), ByteRaster(rows, cols), ByteRaster(rows, cols),
                 ByteRaster(rows, cols)};
  auto src = label.categories().data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::uint8_t v = src[i];
    t.new_buildings.data()[i] = v == 2;
    t.removed_buildings.data()[i] = v == 3;
    t.existing_buildings.data()[i] = v == 1 || v == 2;
    t.historical.data()[i] = v == 1 || v == 3;
  }
  return t;
}

ChangeLabel compose_label(const TargetPlanes& planes) {
  ChangeLabel label(planes.historical.rows(), planes.historical.cols());
  auto dst = label.categories().data();
  ByteRaster raw(planes.historical.rows(), planes.historical.cols());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::uint8_t v = 0;
    if (planes.new_buildings.data()[i]) {
      v = 2;
    } else if (planes.removed_buildings.data()[i]) {
      v = 3;
    } else if (planes.historical.data()[i] || planes.existing_buildings.data()[i]) {
      v = 1;
    }
    raw.data()[i] = v;
  }
  return ChangeLabel(std::move(raw));
}

CategoryHistogram category_histogram(const std::vector<ChangeLabel>& labels) {
  std::array<double, 4> counts{};
  double total = 0;
  for (const auto& l : labels) {
    for (std::uint8_t v : l.categories().data()) counts[v] += 1;
    total += static_cast<double>(l.categories().size());
  }
  if (total == 0) return {};
  return {100 * counts[0] / total, 100 * counts[1] / total, 100 * counts[2] / total,
          100 * counts[3] / total};
}

// ---------------------------------------------------------------------------------------------
// Augmentation

namespace {

template <typename F>
ByteRaster remap(const ByteRaster& src, int out_rows, int out_cols, F source_of) {
  ByteRaster out(out_rows, out_cols, src.channels());
  for (int r = 0; r < out_rows; ++r) {
    for (int c = 0; c < out_cols; ++c) {
      const auto [sr, sc] = source_of(r, c);
      for (int k = 0; k < src.channels(); ++k) out(r, c, k) = src(sr, sc, k);
    }
  }
  return out;
}

ByteRaster flip_h(const ByteRaster& s) {
  return remap(s, s.rows(), s.cols(), [&](int r, int c) { return std::pair{r, s.cols() - 1 - c}; });
}

ByteRaster flip_v(const ByteRaster& s) {
  return remap(s, s.rows(), s.cols(), [&](int r, int c) { return std::pair{s.rows() - 1 - r, c}; });
}

// Clockwise quarter turn: source (r, c) lands at (c, H - 1 - r).
ByteRaster rotate_cw(const ByteRaster& s) {
  const int h = s.rows();
  return remap(s, s.cols(), s.rows(), [&](int r, int c) { return std::pair{h - 1 - c, r}; });
}

double scale_source(int dst, int extent, double scale) {
  return (dst + 0.5 - extent / 2.0) / scale + extent / 2.0 - 0.5;
}

ByteRaster scale_nearest(const ByteRaster& s, double scale) {
  ByteRaster out(s.rows(), s.cols(), s.channels());
  for (int r = 0; r < s.rows(); ++r) {
    const int sr = static_cast<int>(std::lround(scale_source(r, s.rows(), scale)));
    for (int c = 0; c < s.cols(); ++c) {
      const int sc = static_cast<int>(std::lround(scale_source(c, s.cols(), scale)));
      if (!s.in_bounds(sr, sc)) continue;
      for (int k = 0; k < s.channels(); ++k) out(r, c, k) = s(sr, sc, k);
    }
  }
  return out;
}

ByteRaster scale_bilinear(const ByteRaster& s, double scale) {
  ByteRaster out(s.rows(), s.cols(), s.channels());
  auto read = [&](int r, int c, int k) -> double { return s.in_bounds(r, c) ? s(r, c, k) : 0.0; };
  for (int r = 0; r < s.rows(); ++r) {
    const double sr = scale_source(r, s.rows(), scale);
    const int r0 = static_cast<int>(std::floor(sr));
    const double fr = sr - r0;
    for (int c = 0; c < s.cols(); ++c) {
      const double sc = scale_source(c, s.cols(), scale);
      const int c0 = static_cast<int>(std::floor(sc));
      const double fc = sc - c0;
      for (int k = 0; k < s.channels(); ++k) {
        const double v = (1 - fr) * ((1 - fc) * read(r0, c0, k) + fc * read(r0, c0 + 1, k)) +
                         fr * ((1 - fc) * read(r0 + 1, c0, k) + fc * read(r0 + 1, c0 + 1, k));
        out(r, c, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace

Sample apply_augmentation(const Sample& sample, const AugmentOps& ops) {
  ByteRaster img = sample.image.pixels();
  ByteRaster msk = sample.mask.values();
  ByteRaster lbl = sample.label.categories();
  auto geometric = [&](auto&& fn) {
    img = fn(img);
    msk = fn(msk);
    lbl = fn(lbl);
  };
  if (ops.hflip) geometric(flip_h);
  if (ops.vflip) geometric(flip_v);
  if (img.rows() == img.cols()) {
    for (int q = 0; q < ((ops.rot90 % 4) + 4) % 4; ++q) geometric(rotate_cw);
  }
  if (ops.scale != 1.0) {
    img = scale_bilinear(img, ops.scale);
    msk = scale_nearest(msk, ops.scale);
    lbl = scale_nearest(lbl, ops.scale);
  }
  if (ops.photometric) {
    for (int r = 0; r < img.rows(); ++r) {
      for (int c = 0; c < img.cols(); ++c) {
        for (int k = 0; k < 3; ++k) {
          const double v = (img(r, c, k) - 127.5) * ops.contrast[k] + 127.5 + ops.brightness[k];
          img(r, c, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return {ImageTile(std::move(img), sample.image.tile_id(), sample.image.resolution_m()),
          HistoricalMask(std::move(msk)), ChangeLabel(std::move(lbl))};
}

AugmentOps draw_augmentation(std::uint64_t seed, bool square) {
  Rng rng(seed);
  AugmentOps ops;
  ops.hflip = uniform_real(rng, 0, 1) < 0.5;
  ops.vflip = uniform_real(rng, 0, 1) < 0.5;
  ops.rot90 = square ? static_cast<int>(uniform_int(rng, 0, 3)) : 0;
  if (uniform_real(rng, 0, 1) < 0.5) ops.scale = uniform_real(rng, kScaleMin, kScaleMax);
  ops.photometric = uniform_real(rng, 0, 1) < 0.5;
  for (int k = 0; k < 3; ++k) {
    ops.brightness[k] = uniform_real(rng, -20.0, 20.0);
    ops.contrast[k] = uniform_real(rng, 0.8, 1.2);
  }
  if (!ops.hflip && !ops.vflip && ops.rot90 == 0 && ops.scale == 1.0 && !ops.photometric) {
    ops.hflip = true;
  }
  return ops;
}

Sample augment(const Sample& sample, std::uint64_t seed) {
  return apply_augmentation(sample,
                            draw_augmentation(seed, sample.image.rows() == sample.image.cols()));
}

// ---------------------------------------------------------------------------------------------
// Random change simulation

void RsgParams::validate() const {
  if (n_removed_range.first < 0 || n_removed_range.first > n_removed_range.second) {
    throw UsageError("rsg: n_removed_range must satisfy 0 <= lo <= hi");
  }
  if (area_range_px.first <= 0 || area_range_px.first > area_range_px.second) {
    throw UsageError("rsg: area_range_px must satisfy 0 < lo <= hi");
  }
  if (aspect_range.first <= 0 || aspect_range.first > aspect_range.second) {
    throw UsageError("rsg: aspect_range must satisfy 0 < lo <= hi");
  }
  if (rotation_range_deg.first > rotation_range_deg.second) {
    throw UsageError("rsg: rotation_range_deg must satisfy lo <= hi");
  }
  if (!(flip_to_new_fraction >= 0 && flip_to_new_fraction <= 1)) {
    throw UsageError("rsg: flip_to_new_fraction must lie in [0, 1]");
  }
}

std::vector<std::pair<int, int>> rasterize_rotated_rect(double center_row, double center_col,
                                                        double height, double width,
                                                        double angle_deg, int rows, int cols,
                                                        bool& clipped) {
  clipped = false;
  std::vector<std::pair<int, int>> pixels;
  const double theta = angle_deg * 3.14159265358979323846 / 180.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double reach = 0.5 * std::hypot(height, width) + 1.0;
  const int r0 = static_cast<int>(std::floor(center_row - reach));
  const int r1 = static_cast<int>(std::ceil(center_row + reach));
  const int c0 = static_cast<int>(std::floor(center_col - reach));
  const int c1 = static_cast<int>(std::ceil(center_col + reach));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dr = r - center_row;
      const double dc = c - center_col;
      const double u = dr * ct + dc * st;
      const double v = -dr * st + dc * ct;
      if (std::abs(u) > height / 2 || std::abs(v) > width / 2) continue;
      if (r < 0 || c < 0 || r >= rows || c >= cols) {
        clipped = true;
        continue;
      }
      pixels.emplace_back(r, c);
    }
  }
  return pixels;
}

Sample simulate_changes(const Sample& sample, const RsgParams& params) {
  params.validate();
  Sample out = sample;
  Rng rng(derive_seed(params.seed, {0x7253}));
  const int rows = out.label.rows();
  const int cols = out.label.cols();

  auto clear_around = [&](int r, int c) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr >= 0 && cc >= 0 && rr < rows && cc < cols &&
            out.label(rr, cc) != Category::background) {
          return false;
        }
      }
    }
    return true;
  };

  const auto k = uniform_int(rng, params.n_removed_range.first, params.n_removed_range.second);
  for (long long i = 0; i < k; ++i) {
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
      const double area = uniform_real(rng, params.area_range_px.first, params.area_range_px.second);
      const double aspect = uniform_real(rng, params.aspect_range.first, params.aspect_range.second);
      const double angle =
          uniform_real(rng, params.rotation_range_deg.first, params.rotation_range_deg.second);
      const double width = std::sqrt(area * aspect);
      const double height = area / width;
      const double cr = uniform_real(rng, 0, rows);
      const double cc = uniform_real(rng, 0, cols);
      bool clipped = false;
      const auto pixels = rasterize_rotated_rect(cr, cc, height, width, angle, rows, cols, clipped);
      if (clipped || pixels.empty()) continue;
      if (!std::ranges::all_of(pixels, [&](const auto& p) { return clear_around(p.first, p.second); })) {
        continue;
      }
      for (const auto& [r, c] : pixels) {
        out.label.set(r, c, Category::removed);
        out.mask.set(r, c, true);
      }
      break;
    }
  }

  auto unchanged = extract_instances(out.label, 1);
  const auto flips = static_cast<std::size_t>(
      std::llround(params.flip_to_new_fraction * static_cast<double>(unchanged.size())));
  if (flips > 0) {
    std::vector<std::size_t> order(unchanged.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(i) - 1))]);
    }
    for (std::size_t i = 0; i < flips; ++i) {
      for (const auto& px : unchanged[order[i]].pixels) {
        out.label.set(px.row, px.col, Category::new_building);
        out.mask.set(px.row, px.col, false);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Dataset I/O

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw UsageError("unknown split '" + s + "' (expected train or test)");
}

namespace {

constexpr const char* kManifestFormat = "bce-dataset-v1";

void check_tile_id(const std::string& id) {
  if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos) {
    throw DataError("invalid tile id '" + id + "'");
  }
}

std::filesystem::path tile_file(const std::filesystem::path& root, Split split,
                                const std::string& id, const char* suffix) {
  return root / to_string(split) / (id + "_" + suffix + ".png");
}

}  // namespace

void write_dataset(const std::vector<DatasetEntry>& entries, const std::filesystem::path& root) {
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& e : entries) {
    const auto& s = e.sample;
    check_tile_id(s.tile_id());
    s.validate();
    write_png(tile_file(root, e.split, s.tile_id(), "img"), s.image.pixels());
    write_png(tile_file(root, e.split, s.tile_id(), "mask"), s.mask.values());
    write_png(tile_file(root, e.split, s.tile_id(), "label"), s.label.categories());
    tiles.push_back({{"tile_id", s.tile_id()},
                     {"split", to_string(e.split)},
                     {"H", s.image.rows()},
                     {"W", s.image.cols()},
                     {"resolution_m", s.image.resolution_m()}});
  }
  std::filesystem::create_directories(root);
  std::ofstream out(root / "manifest.json");
  if (!out) throw DataError("cannot write manifest in '" + root.string() + "'");
  out << nlohmann::json{{"format", kManifestFormat}, {"tiles", tiles}}.dump(2) << "\n";
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DataError("missing manifest.json in '" + root.string() + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest.json: ") + e.what());
  }
  if (manifest.value("format", "") != kManifestFormat) {
    throw DataError("manifest.json: unsupported format tag");
  }
  std::vector<DatasetEntry> entries;
  for (const auto& t : manifest.at("tiles")) {
    const std::string id = t.at("tile_id").get<std::string>();
    check_tile_id(id);
    const Split split = parse_split(t.at("split").get<std::string>());
    for (const char* suffix : {"img", "mask", "label"}) {
      if (!std::filesystem::exists(tile_file(root, split, id, suffix))) {
        throw DataError("tile '" + id + "': missing " + suffix + " file");
      }
    }
    Sample s{load_image(tile_file(root, split, id, "img"), id, t.value("resolution_m", 0.0)),
             load_mask(tile_file(root, split, id, "mask")),
             load_label(tile_file(root, split, id, "label"))};
    if (s.image.rows() != t.at("H").get<int>() || s.image.cols() != t.at("W").get<int>()) {
      throw DataError("tile '" + id + "': extent differs from manifest");
    }
    s.validate();
    entries.push_back({std::move(s), split});
  }
  return entries;
}

std::vector<Sample> select_split(const std::vector<DatasetEntry>& entries, Split split) {
  std::vector<Sample> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.sample);
  }
  return out;
}

}  // namespace bce::data
