#include "bce/core/mask_ops.hpp"

namespace bce {

ByteRaster invert_mask(const ByteRaster& mask) {
  ByteRaster out(mask.rows(), mask.cols(), mask.channels());
  auto src = mask.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<std::uint8_t>(1 - src[i]);
  return out;
}

ByteRaster invert_mask(const HistoricalMask& mask) { return invert_mask(mask.values()); }

namespace {

void fill_grid(const HistoricalMask& mask, int h, int w, double* dst) {
  for (int i = 0; i < h; ++i) {
    const int r = static_cast<int>(static_cast<long long>(i) * mask.rows() / h);
    for (int j = 0; j < w; ++j) {
      const int c = static_cast<int>(static_cast<long long>(j) * mask.cols() / w);
      dst[static_cast<std::size_t>(i) * w + j] = mask(r, c) ? 1.0 : 0.0;
    }
  }
}

void require_grid(const Tensor& features, const Tensor& grid, const char* what) {
  const auto& f = features.shape();
  const auto& g = grid.shape();
  if (g.n != f.n || g.c != 1 || g.h != f.h || g.w != f.w) {
    throw ShapeError(std::string(what) + ": mask grid " + g.str() +
                     " does not match features " + f.str());
  }
}

void require_stride(const FeatureMap& features, const HistoricalMask& mask, const char* what) {
  const auto& s = features.values.shape();
  if (s.n != 1 || mask.rows() != s.h * features.stride || mask.cols() != s.w * features.stride) {
    throw ShapeError(std::string(what) + ": mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " incompatible with features " + s.str() +
                     " at stride " + std::to_string(features.stride));
  }
}

}  // namespace

Tensor mask_to_grid(const HistoricalMask& mask, int h, int w) {
  if (h <= 0 || w <= 0 || mask.rows() < h || mask.cols() < w) {
    throw ShapeError("mask_to_grid: cannot resample mask onto a larger or empty grid");
  }
  Tensor grid(1, 1, h, w);
  fill_grid(mask, h, w, grid.data());
  return grid;
}

Tensor mask_to_grid(std::span<const HistoricalMask> masks, int h, int w) {
  Tensor grid(static_cast<int>(masks.size()), 1, h, w);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].rows() < h || masks[n].cols() < w) {
      throw ShapeError("mask_to_grid: cannot resample mask onto a larger grid");
    }
    fill_grid(masks[n], h, w, grid.plane(static_cast<int>(n), 0));
  }
  return grid;
}

Tensor split_background(const Tensor& features, const Tensor& grid) {
  require_grid(features, grid, "split_background");
  Tensor out(features.shape());
  const auto& s = features.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* m = grid.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* src = features.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = (1.0 - m[i]) * src[i];
    }
  }
  return out;
}

Tensor split_foreground(const Tensor& features, const Tensor& grid) {
  require_grid(features, grid, "split_foreground");
  Tensor out(features.shape());
  const auto& s = features.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* m = grid.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* src = features.plane(n, c);
      double* dst = out.plane(n, c);
      // 1 - sigmoid(x) == sigmoid(-x), which keeps precision when x is large.
      for (std::size_t i = 0; i < plane; ++i) dst[i] = m[i] * sigmoid(-src[i]);
    }
  }
  return out;
}

Tensor split_background_backward(const Tensor& grad_out, const Tensor& grid) {
  return split_background(grad_out, grid);
}

Tensor split_foreground_backward(const Tensor& grad_out, const Tensor& features,
                                 const Tensor& grid) {
  require_grid(features, grid, "split_foreground_backward");
  require_same_shape(grad_out, features, "split_foreground_backward");
  Tensor out(features.shape());
  const auto& s = features.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* m = grid.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* x = features.plane(n, c);
      const double* g = grad_out.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double sg = sigmoid(x[i]);
        dst[i] = -m[i] * sg * (1.0 - sg) * g[i];
      }
    }
  }
  return out;
}

FeatureMap split_background(const FeatureMap& features, const HistoricalMask& mask) {
  require_stride(features, mask, "split_background");
  const auto& s = features.values.shape();
  return {split_background(features.values, mask_to_grid(mask, s.h, s.w)), features.stride};
}

FeatureMap split_foreground(const FeatureMap& features, const HistoricalMask& mask) {
  require_stride(features, mask, "split_foreground");
  const auto& s = features.values.shape();
  return {split_foreground(features.values, mask_to_grid(mask, s.h, s.w)), features.stride};
}

}  // namespace bce
