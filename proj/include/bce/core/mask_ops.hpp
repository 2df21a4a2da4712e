#pragma once

#include <span>

#include "bce/core/raster.hpp"
#include "bce/core/tensor.hpp"

namespace bce {

/// One sample's C x h x w feature array (a batch-of-one Tensor) and its input stride.
struct FeatureMap {
  Tensor values;
  int stride = 4;
};

/// Returns J - M.
ByteRaster invert_mask(const ByteRaster& mask);
ByteRaster invert_mask(const HistoricalMask& mask);

/// Nearest-neighbour resample of M onto an h x w grid: cell (i, j) reads M(floor(i*H/h), floor(j*W/w)).
/// Result is 1 x 1 x h x w with values in {0, 1}.
Tensor mask_to_grid(const HistoricalMask& mask, int h, int w);
/// Batched form: N x 1 x h x w.
Tensor mask_to_grid(std::span<const HistoricalMask> masks, int h, int w);

/// F_BG = (J - M) * F, broadcast over channels. `grid` is N x 1 x h x w.
Tensor split_background(const Tensor& features, const Tensor& grid);
/// F_FG = M * (J - sigmoid(F)).
Tensor split_foreground(const Tensor& features, const Tensor& grid);

/// dL/dF given dL/dF_BG.
Tensor split_background_backward(const Tensor& grad_out, const Tensor& grid);
/// dL/dF given dL/dF_FG; `features` is the forward input F.
Tensor split_foreground_backward(const Tensor& grad_out, const Tensor& features, const Tensor& grid);

/// Single-sample forms. M must be exactly stride times the feature extent.
FeatureMap split_background(const FeatureMap& features, const HistoricalMask& mask);
FeatureMap split_foreground(const FeatureMap& features, const HistoricalMask& mask);

inline double sigmoid(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace bce
