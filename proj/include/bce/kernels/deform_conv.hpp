#pragma once

#include "bce/kernels/conv2d.hpp"

namespace bce::kernels {

// Deformable convolution
//
//   y(p0) = sum_{pn in G} w(pn) * x(p0 + pn + dpn) + b
//
// for a single image in CHW layout. `offsets` holds 2*k*k planes of size Ho x Wo; plane 2*t is
// the row displacement and plane 2*t+1 the column displacement of tap t = ki*k + kj.
// Fractional positions are read by bilinear interpolation; samples outside the image read 0.

/// Bilinear read of one plane; 0 when (h, w) lies outside (-1, H) x (-1, W).
template <typename T>
T bilinear_sample(const T* plane, int height, int width, T h, T w);

template <typename T>
void deform_conv_forward(Exec exec, const ConvGeometry& g, const T* in, const T* offsets,
                         const T* weight, const T* bias, T* out);

/// `grad_in` and `grad_offsets` are overwritten when non-null; `grad_weight`/`grad_bias`
/// are accumulated into.
template <typename T>
void deform_conv_backward(Exec exec, const ConvGeometry& g, const T* in, const T* offsets,
                          const T* weight, const T* grad_out, T* grad_in, T* grad_offsets,
                          T* grad_weight, T* grad_bias);

/// Deformable im2col: col[c*k*k + t][p] = x_c(p0(p) + pn(t) + dpn(t, p)).
template <typename T>
void deform_im2col(const ConvGeometry& g, const T* in, const T* offsets, T* col);

}  // namespace bce::kernels
