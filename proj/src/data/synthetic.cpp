#include "bce/data/synthetic.hpp"

#include <algorithm>
#include <optional>
#include <vector>

#include "bce/core/rng.hpp"

namespace bce::data {

namespace {

struct Box {
  int r0, c0, r1, c1;  // inclusive
};

bool overlaps(const Box& a, const Box& b, int gap) {
  return !(a.r1 + gap < b.r0 || b.r1 + gap < a.r0 || a.c1 + gap < b.c0 || b.c1 + gap < a.c0);
}

}  // namespace

Sample synthetic_scene(const SceneParams& p, const std::string& tile_id) {
  Rng rng(derive_seed(p.seed, {0x53434e}));
  ByteRaster img(p.rows, p.cols, 3);
  const double ground[3] = {uniform_real(rng, 70, 110), uniform_real(rng, 90, 130),
                            uniform_real(rng, 50, 80)};
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      for (int k = 0; k < 3; ++k) {
        const double v = ground[k] + uniform_real(rng, -p.noise, p.noise);
        img(r, c, k) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }

  std::vector<Box> boxes;
  auto place = [&]() -> std::optional<Box> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int h = static_cast<int>(uniform_int(rng, p.min_side, p.max_side));
      const int w = static_cast<int>(uniform_int(rng, p.min_side, p.max_side));
      if (h + 4 > p.rows || w + 4 > p.cols) return std::nullopt;
      const int r0 = static_cast<int>(uniform_int(rng, 2, p.rows - h - 2));
      const int c0 = static_cast<int>(uniform_int(rng, 2, p.cols - w - 2));
      const Box b{r0, c0, r0 + h - 1, c0 + w - 1};
      if (std::none_of(boxes.begin(), boxes.end(), [&](const Box& o) { return overlaps(b, o, 3); })) {
        boxes.push_back(b);
        return b;
      }
    }
    return std::nullopt;
  };

  HistoricalMask mask(p.rows, p.cols);
  ChangeLabel label(p.rows, p.cols);
  auto roof = [&](const Box& b) {
    const double base = uniform_real(rng, 170, 230);
    const double tint[3] = {uniform_real(rng, -15, 15), uniform_real(rng, -15, 15),
                            uniform_real(rng, -15, 15)};
    for (int r = b.r0; r <= b.r1; ++r) {
      for (int c = b.c0; c <= b.c1; ++c) {
        for (int k = 0; k < 3; ++k) {
          const double v = base + tint[k] + uniform_real(rng, -p.noise, p.noise);
          img(r, c, k) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  };
  auto stamp = [&](const Box& b, Category cat, bool in_mask) {
    for (int r = b.r0; r <= b.r1; ++r) {
      for (int c = b.c0; c <= b.c1; ++c) {
        label.set(r, c, cat);
        mask.set(r, c, in_mask);
      }
    }
  };

  for (int i = 0; i < p.unchanged; ++i) {
    if (auto b = place()) {
      roof(*b);
      stamp(*b, Category::unchanged, true);
    }
  }
  for (int i = 0; i < p.added; ++i) {
    if (auto b = place()) {
      roof(*b);
      stamp(*b, Category::new_building, false);
    }
  }
  for (int i = 0; i < p.removed; ++i) {
    if (auto b = place()) stamp(*b, Category::removed, true);
  }
  return {ImageTile(std::move(img), tile_id), std::move(mask), std::move(label)};
}

}  // namespace bce::data
