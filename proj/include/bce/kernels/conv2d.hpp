#pragma once

#include <cstddef>

#include "bce/kernels/exec.hpp"

namespace bce::kernels {

/// Square-kernel 2-D convolution geometry for a single image (CHW layout).
struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_h = 1;
  int in_w = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int taps() const { return kernel * kernel; }
  /// Rows of the im2col matrix: in_channels * kernel^2.
  int col_rows() const { return in_channels * kernel * kernel; }
  int out_positions() const { return out_h() * out_w(); }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  /// Multiply-accumulates of one forward pass.
  long long macs() const {
    return static_cast<long long>(out_channels) * col_rows() * out_positions();
  }
};

/// out[Cout x Ho x Wo] = conv(in[Cin x H x W], weight[Cout x Cin x k x k]) + bias.
/// `bias` may be null. `out` is overwritten.
template <typename T>
void conv2d_forward(Exec exec, const ConvGeometry& g, const T* in, const T* weight, const T* bias,
                    T* out);

/// Backward pass. `grad_in` is overwritten when non-null; `grad_weight` and `grad_bias`
/// (either may be null) are accumulated into.
template <typename T>
void conv2d_backward(Exec exec, const ConvGeometry& g, const T* in, const T* weight,
                     const T* grad_out, T* grad_in, T* grad_weight, T* grad_bias);

/// im2col: col[(c*k + ki)*k + kj][oh*Wo + ow] = in[c][oh*s - p + ki][ow*s - p + kj] (0 outside).
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col);

/// Adjoint of im2col; `in` is overwritten.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in);

}  // namespace bce::kernels
