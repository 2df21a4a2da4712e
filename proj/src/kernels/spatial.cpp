#include "bce/kernels/spatial.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

namespace bce::kernels {

namespace {

struct Tap {
  int i0;
  int i1;
  double l0;
  double l1;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - i0;
    taps[d] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

template <typename T>
void bilinear_resize(const T* in, int channels, int in_h, int in_w, int out_h, int out_w, T* out) {
  const auto rows = resize_taps(in_h, out_h);
  const auto cols = resize_taps(in_w, out_w);
  const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* src = in + c * in_plane;
    T* dst = out + c * out_plane;
    for (int r = 0; r < out_h; ++r) {
      const Tap& tr = rows[r];
      const T* r0 = src + static_cast<std::size_t>(tr.i0) * in_w;
      const T* r1 = src + static_cast<std::size_t>(tr.i1) * in_w;
      T* drow = dst + static_cast<std::size_t>(r) * out_w;
      for (int q = 0; q < out_w; ++q) {
        const Tap& tc = cols[q];
        drow[q] = static_cast<T>(tr.l0 * (tc.l0 * r0[tc.i0] + tc.l1 * r0[tc.i1]) +
                                 tr.l1 * (tc.l0 * r1[tc.i0] + tc.l1 * r1[tc.i1]));
      }
    }
  }
}

template <typename T>
void bilinear_resize_backward(const T* grad_out, int channels, int in_h, int in_w, int out_h,
                              int out_w, T* grad_in) {
  const auto rows = resize_taps(in_h, out_h);
  const auto cols = resize_taps(in_w, out_w);
  const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    T* dst = grad_in + c * in_plane;
    std::fill(dst, dst + in_plane, T(0));
    const T* src = grad_out + c * out_plane;
    for (int r = 0; r < out_h; ++r) {
      const Tap& tr = rows[r];
      T* r0 = dst + static_cast<std::size_t>(tr.i0) * in_w;
      T* r1 = dst + static_cast<std::size_t>(tr.i1) * in_w;
      const T* grow = src + static_cast<std::size_t>(r) * out_w;
      for (int q = 0; q < out_w; ++q) {
        const Tap& tc = cols[q];
        const double g = grow[q];
        r0[tc.i0] += static_cast<T>(tr.l0 * tc.l0 * g);
        r0[tc.i1] += static_cast<T>(tr.l0 * tc.l1 * g);
        r1[tc.i0] += static_cast<T>(tr.l1 * tc.l0 * g);
        r1[tc.i1] += static_cast<T>(tr.l1 * tc.l1 * g);
      }
    }
  }
}

template <typename T>
void max_pool_forward(const T* in, int channels, int in_h, int in_w, int kernel, int stride,
                      int pad, T* out, std::int32_t* argmax) {
  const int out_h = pooled_extent(in_h, kernel, stride, pad);
  const int out_w = pooled_extent(in_w, kernel, stride, pad);
  const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* src = in + c * in_plane;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::int32_t best_idx = -1;
        for (int ki = 0; ki < kernel; ++ki) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= in_h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= in_w) continue;
            const T v = src[static_cast<std::size_t>(ih) * in_w + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = ih * in_w + iw;
            }
          }
        }
        const std::size_t o = c * out_plane + static_cast<std::size_t>(oh) * out_w + ow;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
}

template <typename T>
void max_pool_backward(const T* grad_out, const std::int32_t* argmax, int channels, int in_h,
                       int in_w, int out_h, int out_w, T* grad_in) {
  const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    T* dst = grad_in + c * in_plane;
    std::fill(dst, dst + in_plane, T(0));
    for (std::size_t o = 0; o < out_plane; ++o) {
      dst[argmax[c * out_plane + o]] += grad_out[c * out_plane + o];
    }
  }
}

template void bilinear_resize<float>(const float*, int, int, int, int, int, float*);
template void bilinear_resize<double>(const double*, int, int, int, int, int, double*);
template void bilinear_resize_backward<float>(const float*, int, int, int, int, int, float*);
template void bilinear_resize_backward<double>(const double*, int, int, int, int, int, double*);
template void max_pool_forward<float>(const float*, int, int, int, int, int, int, float*,
                                      std::int32_t*);
template void max_pool_forward<double>(const double*, int, int, int, int, int, int, double*,
                                       std::int32_t*);
template void max_pool_backward<float>(const float*, const std::int32_t*, int, int, int, int, int,
                                       float*);
template void max_pool_backward<double>(const double*, const std::int32_t*, int, int, int, int,
                                        int, double*);

}  // namespace bce::kernels
