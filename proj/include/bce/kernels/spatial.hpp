#pragma once

#include <cstdint>

namespace bce::kernels {

/// Bilinear resize of `channels` planes with half-pixel centres (align_corners = false):
/// src = max(0, (dst + 0.5) * in / out - 0.5). `out` is overwritten.
template <typename T>
void bilinear_resize(const T* in, int channels, int in_h, int in_w, int out_h, int out_w, T* out);

/// Adjoint of bilinear_resize. `grad_in` is overwritten.
template <typename T>
void bilinear_resize_backward(const T* grad_out, int channels, int in_h, int in_w, int out_h,
                              int out_w, T* grad_in);

/// k x k max pooling with stride and zero-free padding (padded cells never win).
/// `argmax` receives the flat input index chosen for each output cell.
template <typename T>
void max_pool_forward(const T* in, int channels, int in_h, int in_w, int kernel, int stride,
                      int pad, T* out, std::int32_t* argmax);

template <typename T>
void max_pool_backward(const T* grad_out, const std::int32_t* argmax, int channels, int in_h,
                       int in_w, int out_h, int out_w, T* grad_in);

inline int pooled_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace bce::kernels
