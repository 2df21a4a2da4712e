#include "bce/core/instances.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

namespace bce {

namespace {

class DisjointSet {
 public:
  int make() {
    parent_.push_back(static_cast<int>(parent_.size()));
    return parent_.back();
  }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Smaller root wins so that roots keep first-seen order.
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<int> parent_;
};

}  // namespace

ComponentMap label_components(const ByteRaster& mask) {
  const int rows = mask.rows();
  const int cols = mask.cols();
  Raster<std::int32_t> provisional(rows, cols, 1, -1);
  DisjointSet sets;

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (mask(r, c) == 0) continue;
      const int up = r > 0 ? provisional(r - 1, c) : -1;
      const int left = c > 0 ? provisional(r, c - 1) : -1;
      if (up < 0 && left < 0) {
        provisional(r, c) = sets.make();
      } else if (up >= 0 && left >= 0) {
        sets.unite(up, left);
        provisional(r, c) = std::min(sets.find(up), sets.find(left));
      } else {
        provisional(r, c) = up >= 0 ? up : left;
      }
    }
  }

  std::vector<int> final_id(sets.size(), 0);
  int count = 0;
  ComponentMap out{Raster<std::int32_t>(rows, cols, 1, 0), 0};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int p = provisional(r, c);
      if (p < 0) continue;
      const int root = sets.find(p);
      if (final_id[root] == 0) final_id[root] = ++count;
      out.ids(r, c) = final_id[root];
    }
  }
  out.count = count;
  return out;
}

std::vector<BuildingInstance> extract_components(const ByteRaster& mask, int category) {
  const ComponentMap map = label_components(mask);
  std::vector<BuildingInstance> instances(static_cast<std::size_t>(map.count));
  for (auto& inst : instances) {
    inst.category = category;
    inst.bbox = {mask.rows(), mask.cols(), -1, -1};
  }
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const int id = map.ids(r, c);
      if (id == 0) continue;
      auto& inst = instances[static_cast<std::size_t>(id - 1)];
      inst.pixels.push_back({r, c});
      inst.bbox.row_min = std::min(inst.bbox.row_min, r);
      inst.bbox.col_min = std::min(inst.bbox.col_min, c);
      inst.bbox.row_max = std::max(inst.bbox.row_max, r);
      inst.bbox.col_max = std::max(inst.bbox.col_max, c);
    }
  }
  // Components are currently in first-pixel raster order; stable sort keeps that as tie-break.
  std::ranges::stable_sort(instances, [](const BuildingInstance& a, const BuildingInstance& b) {
    return std::tie(a.bbox.row_min, a.bbox.col_min) < std::tie(b.bbox.row_min, b.bbox.col_min);
  });
  for (std::size_t i = 0; i < instances.size(); ++i) {
    instances[i].instance_id = static_cast<int>(i) + 1;
  }
  return instances;
}

std::vector<BuildingInstance> extract_instances(const ChangeLabel& label, int category) {
  if (category < 1 || category > 3) {
    throw UsageError("extract_instances: category must be 1, 2 or 3");
  }
  ByteRaster plane(label.rows(), label.cols());
  auto src = label.categories().data();
  auto dst = plane.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] == category ? 1 : 0;
  return extract_components(plane, category);
}

std::vector<BuildingInstance> extract_instances(const HistoricalMask& mask) {
  return extract_components(mask.values(), 1);
}

}  // namespace bce
