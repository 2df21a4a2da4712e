#include <doctest.h>

#include <filesystem>
#include <map>

#include "bce/core/error.hpp"
#include "bce/core/instances.hpp"
#include "bce/data/dataops.hpp"
#include "bce/data/synthetic.hpp"
#include "../support/oracles.hpp"

using namespace bce;
using namespace bce::data;
namespace fs = std::filesystem;

namespace {

ByteRaster random_blobs(int rows, int cols, Rng& rng, int n, int max_side) {
  ByteRaster m(rows, cols, 1, 0);
  for (int k = 0; k < n; ++k) {
    const int h = static_cast<int>(uniform_int(rng, 1, max_side)), w = static_cast<int>(uniform_int(rng, 1, max_side));
    const int r0 = static_cast<int>(uniform_int(rng, 0, rows - h)), c0 = static_cast<int>(uniform_int(rng, 0, cols - w));
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) m(r, c) = 1;
  }
  return m;
}

ImageTile noise_image(int rows, int cols, Rng& rng, const std::string& id) {
  ByteRaster px(rows, cols, 3);
  for (auto& v : px.data()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return ImageTile(px, id, 0.3);
}

/// Conversion rule re-derived from flood fill.
ByteRaster oracle_convert(const ByteRaster& t1, const ByteRaster& change) {
  ByteRaster out(t1.rows(), t1.cols(), 1, 0);
  for (std::size_t i = 0; i < t1.size(); ++i) out.data()[i] = t1.data()[i] ? 1 : 0;
  for (const auto& comp : testing::flood_components(change)) {
    std::size_t inside = 0;
    for (auto [r, c] : comp) inside += t1(r, c) != 0;
    const bool removed = 2 * inside > comp.size();
    for (auto [r, c] : comp) {
      if (removed && t1(r, c)) out(r, c) = 3;
      if (!removed && !t1(r, c)) out(r, c) = 2;
    }
  }
  return out;
}

Sample small_scene(std::uint64_t seed, int side = 64) {
  SceneParams p;
  p.rows = p.cols = side;
  p.min_side = 4;
  p.max_side = 10;
  p.seed = seed;
  return synthetic_scene(p, "s" + std::to_string(seed));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("bce_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("bi-temporal conversion follows the overlap rule") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const ByteRaster t1 = random_blobs(32, 32, rng, 6, 8);
    ByteRaster change = random_blobs(32, 32, rng, 4, 9);
    const Sample s = convert_bitemporal(noise_image(32, 32, rng, "c"), HistoricalMask(t1), change);
    CHECK(s.label.categories() == oracle_convert(t1, change));
    CHECK(s.mask.values() == t1);
    CHECK(derive_targets(s.label).historical == t1);
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("conversion of hand-built cases") {
  ByteRaster t1(32, 32, 1, 0), change(32, 32, 1, 0);
  for (int c = 0; c < 4; ++c) t1(0, c) = 1;
  // Mostly inside: removed.
  for (int c = 0; c < 5; ++c) change(0, c) = 1;
  // Fully outside: new.
  change(10, 10) = change(10, 11) = 1;
  // Exactly half inside: not removed, so the outside half is new and the inside pixel stays 1.
  t1(20, 20) = 1;
  change(20, 20) = change(20, 21) = 1;
  const Sample s = convert_bitemporal(ImageTile(ByteRaster(32, 32, 3), "h"), HistoricalMask(t1), change);
  CHECK(s.label(0, 0) == Category::removed);
  CHECK(s.label(0, 3) == Category::removed);
  CHECK(s.label(0, 4) == Category::background);
  CHECK(s.label(10, 10) == Category::new_building);
  CHECK(s.label(20, 20) == Category::unchanged);
  CHECK(s.label(20, 21) == Category::new_building);
  CHECK_THROWS_AS(convert_bitemporal(ImageTile(ByteRaster(32, 32, 3), "h"), HistoricalMask(t1), ByteRaster(16, 16)),
                  ShapeError);
}

TEST_CASE("target planes per pixel and round trip") {
  Rng rng(12);
  ByteRaster cats(32, 32);
  for (auto& v : cats.data()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 3));
  const ChangeLabel label(cats);
  const auto tp = derive_targets(label);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      const int k = cats(r, c);
      CHECK(tp.new_buildings(r, c) == (k == 2));
      CHECK(tp.removed_buildings(r, c) == (k == 3));
      CHECK(tp.existing_buildings(r, c) == (k == 1 || k == 2));
      CHECK(tp.historical(r, c) == (k == 1 || k == 3));
    }
  CHECK(compose_label(tp) == label);
}

TEST_CASE("category histogram sums to one hundred") {
  ChangeLabel a(2, 2), b(2, 2);
  a.set(0, 0, Category::unchanged);
  a.set(0, 1, Category::new_building);
  b.set(1, 1, Category::removed);
  const auto h = category_histogram({a, b});
  CHECK(h.background == doctest::Approx(62.5));
  CHECK(h.unchanged == doctest::Approx(12.5));
  CHECK(h.new_buildings == doctest::Approx(12.5));
  CHECK(h.removed == doctest::Approx(12.5));
}

TEST_CASE("geometric augmentation moves pixels as expected") {
  Rng rng(13);
  const Sample s = small_scene(3, 32);
  AugmentOps rot;
  rot.rot90 = 1;
  const Sample r = apply_augmentation(s, rot);
  const int n = 32;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      CHECK(r.label(x, n - 1 - y) == s.label(y, x));
      CHECK(r.mask(x, n - 1 - y) == s.mask(y, x));
      CHECK(r.image.pixels()(x, n - 1 - y, 1) == s.image.pixels()(y, x, 1));
    }
  AugmentOps hv;
  hv.hflip = hv.vflip = true;
  const Sample f = apply_augmentation(s, hv);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) CHECK(f.label(n - 1 - y, n - 1 - x) == s.label(y, x));
  AugmentOps twice;
  twice.rot90 = 2;
  CHECK(apply_augmentation(s, twice).label == f.label);
  CHECK(apply_augmentation(s, AugmentOps{}) == s);
}

TEST_CASE("augmentation keeps mask and label consistent") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Sample s = small_scene(seed);
    const Sample a = augment(s, seed * 7 + 1);
    CHECK_NOTHROW(a.validate());
    CHECK(a.tile_id() == s.tile_id());
    // Photometric steps never touch the label.
    AugmentOps ph = draw_augmentation(seed, true);
    ph.hflip = ph.vflip = false;
    ph.rot90 = 0;
    ph.scale = 1.0;
    CHECK(apply_augmentation(s, ph).label == s.label);
  }
  CHECK(augment(small_scene(1), 5) == augment(small_scene(1), 5));
}

TEST_CASE("augmentation draws are active and in range") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AugmentOps o = draw_augmentation(seed, seed % 2 == 0);
    const bool active = o.hflip || o.vflip || o.rot90 != 0 || o.scale != 1.0 || o.photometric;
    CHECK(active);
    CHECK((o.scale >= kScaleMin && o.scale <= kScaleMax));
    if (seed % 2) CHECK(o.rot90 == 0);
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(o.brightness[c]) <= 20.0);
      CHECK((o.contrast[c] >= 0.8 && o.contrast[c] <= 1.2));
    }
  }
}

TEST_CASE("rotated rectangle rasterisation") {
  bool clipped = false;
  auto px = rasterize_rotated_rect(10.5, 10.5, 4, 6, 0, 32, 32, clipped);
  CHECK(px.size() == 24);
  CHECK_FALSE(clipped);
  px = rasterize_rotated_rect(10.5, 10.5, 4, 6, 90, 32, 32, clipped);
  CHECK(px.size() == 24);
  int rmin = 99, rmax = -1;
  for (auto [r, c] : px) rmin = std::min(rmin, r), rmax = std::max(rmax, r);
  CHECK(rmax - rmin + 1 == 6);
  rasterize_rotated_rect(1, 1, 8, 8, 30, 32, 32, clipped);
  CHECK(clipped);
}

TEST_CASE("random change simulation invariants") {
  RsgParams p;
  p.n_removed_range = {1, 3};
  p.area_range_px = {16, 64};
  p.flip_to_new_fraction = 0.5;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Sample s = small_scene(seed);
    p.seed = seed;
    const Sample out = simulate_changes(s, p);
    CHECK_NOTHROW(out.validate());
    CHECK(out.image == s.image);
    CHECK(derive_targets(out.label).historical == out.mask.values());
    int added_removed = 0;
    for (int r = 0; r < s.label.rows(); ++r)
      for (int c = 0; c < s.label.cols(); ++c) {
        const auto a = s.label(r, c), b = out.label(r, c);
        if (b == Category::removed && a != Category::removed) {
          ++added_removed;
          CHECK(a == Category::background);
          // Clearance: no building of the input within the 8-neighbourhood.
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              if (!s.label.categories().in_bounds(r + dr, c + dc)) continue;
              CHECK(s.label(r + dr, c + dc) == Category::background);
            }
        }
        if (b == Category::new_building && a != Category::new_building) CHECK(a == Category::unchanged);
        if (a == Category::new_building) CHECK(b == Category::new_building);
        if (a == Category::removed) CHECK(b == Category::removed);
      }
    // Flipped buildings flip whole.
    for (const auto& inst : extract_instances(s.label, 1)) {
      int flipped = 0;
      for (const auto& q : inst.pixels) flipped += out.label(q.row, q.col) == Category::new_building;
      CHECK((flipped == 0 || flipped == static_cast<int>(inst.pixels.size())));
    }
    CHECK(simulate_changes(s, p) == out);
  }
}

TEST_CASE("simulation with nothing to do is the identity") {
  RsgParams p;
  p.n_removed_range = {0, 0};
  p.flip_to_new_fraction = 0.0;
  const Sample s = small_scene(9);
  CHECK(simulate_changes(s, p) == s);
  RsgParams bad;
  bad.n_removed_range = {3, 1};
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = {};
  bad.flip_to_new_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = {};
  bad.area_range_px = {0, 10};
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("dataset round trip and error reporting") {
  TempDir dir("dataset");
  std::vector<DatasetEntry> entries{{small_scene(1), Split::train}, {small_scene(2), Split::test}, {small_scene(3), Split::train}};
  write_dataset(entries, dir.path);
  const auto back = read_dataset(dir.path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].sample == entries[i].sample);
    CHECK(back[i].split == entries[i].split);
  }
  const auto train = select_split(back, Split::train);
  REQUIRE(train.size() == 2);
  CHECK(train[1].tile_id() == "s3");
  CHECK(parse_split(to_string(Split::test)) == Split::test);
  CHECK_THROWS_AS(parse_split("val"), UsageError);

  fs::remove(dir.path / "test" / "s2_label.png");
  try {
    read_dataset(dir.path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("s2") != std::string::npos);
  }
  CHECK_THROWS_AS(read_dataset(dir.path / "nowhere"), DataError);

  Sample bad = small_scene(4);
  bad.image.set_tile_id("a/b");
  CHECK_THROWS(write_dataset({{bad, Split::train}}, dir.path / "other"));
}

TEST_CASE("sample validation catches inconsistencies") {
  Sample s = small_scene(5);
  CHECK_NOTHROW(s.validate());
  Sample m = s;
  for (int r = 0; r < m.mask.rows(); ++r)
    for (int c = 0; c < m.mask.cols(); ++c)
      if (m.label(r, c) == Category::background) {
        m.mask.set(r, c, true);
        r = m.mask.rows();
        break;
      }
  CHECK_THROWS_AS(m.validate(), DataError);
}
