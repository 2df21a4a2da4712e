#include "bce/kernels/deform_conv.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "bce/kernels/gemm.hpp"

namespace bce::kernels {

namespace {

template <typename T>
inline T read_or_zero(const T* plane, int height, int width, int r, int c) {
  return (r >= 0 && r < height && c >= 0 && c < width)
             ? plane[static_cast<std::size_t>(r) * width + c]
             : T(0);
}

template <typename T>
inline bool inside_support(int height, int width, T h, T w) {
  return h > T(-1) && h < T(height) && w > T(-1) && w < T(width);
}

// d(bilinear)/dh and d(bilinear)/dw at (h, w), using the floor cell (right-sided at integers).
template <typename T>
inline void bilinear_coordinate_grad(const T* plane, int height, int width, T h, T w, T& dh,
                                     T& dw) {
  dh = dw = 0;
  if (!inside_support(height, width, h, w)) return;
  const int h_low = static_cast<int>(std::floor(h));
  const int w_low = static_cast<int>(std::floor(w));
  const int h_high = h_low + 1;
  const int w_high = w_low + 1;
  const T lh = h - h_low;
  const T lw = w - w_low;
  const T v1 = read_or_zero(plane, height, width, h_low, w_low);
  const T v2 = read_or_zero(plane, height, width, h_low, w_high);
  const T v3 = read_or_zero(plane, height, width, h_high, w_low);
  const T v4 = read_or_zero(plane, height, width, h_high, w_high);
  dh = (1 - lw) * (v3 - v1) + lw * (v4 - v2);
  dw = (1 - lh) * (v2 - v1) + lh * (v4 - v3);
}

// Adds `value` times the bilinear weights of (h, w) into `plane`.
template <typename T>
inline void bilinear_scatter(T* plane, int height, int width, T h, T w, T value) {
  if (!inside_support(height, width, h, w)) return;
  const int h_low = static_cast<int>(std::floor(h));
  const int w_low = static_cast<int>(std::floor(w));
  const T lh = h - h_low;
  const T lw = w - w_low;
  const T hh = 1 - lh;
  const T hw = 1 - lw;
  auto add = [&](int r, int c, T wt) {
    if (r >= 0 && r < height && c >= 0 && c < width) {
      plane[static_cast<std::size_t>(r) * width + c] += wt * value;
    }
  };
  add(h_low, w_low, hh * hw);
  add(h_low, w_low + 1, hh * lw);
  add(h_low + 1, w_low, lh * hw);
  add(h_low + 1, w_low + 1, lh * lw);
}

template <typename T>
struct SamplePoint {
  T h;
  T w;
};

template <typename T>
inline SamplePoint<T> sample_point(const ConvGeometry& g, const T* offsets, int t, int oh, int ow) {
  const int k = g.kernel;
  const int p = g.out_positions();
  const std::size_t pos = static_cast<std::size_t>(oh) * g.out_w() + ow;
  const T dy = offsets[static_cast<std::size_t>(2 * t) * p + pos];
  const T dx = offsets[static_cast<std::size_t>(2 * t + 1) * p + pos];
  return {static_cast<T>(oh * g.stride - g.pad + t / k) + dy,
          static_cast<T>(ow * g.stride - g.pad + t % k) + dx};
}

template <typename T>
void forward_reference(const ConvGeometry& g, const T* in, const T* offsets, const T* weight,
                       const T* bias, T* out) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int taps = g.taps();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int co = 0; co < g.out_channels; ++co) {
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        T acc = bias ? bias[co] : T(0);
        for (int t = 0; t < taps; ++t) {
          const auto sp = sample_point(g, offsets, t, oh, ow);
          for (int ci = 0; ci < g.in_channels; ++ci) {
            const T wv = weight[(static_cast<std::size_t>(co) * g.in_channels + ci) * taps + t];
            acc += wv * bilinear_sample(in + ci * in_plane, g.in_h, g.in_w, sp.h, sp.w);
          }
        }
        out[(static_cast<std::size_t>(co) * ho + oh) * wo + ow] = acc;
      }
    }
  }
}

template <typename T>
void backward_reference(const ConvGeometry& g, const T* in, const T* offsets, const T* weight,
                        const T* grad_out, T* grad_in, T* grad_offsets, T* grad_weight,
                        T* grad_bias) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int taps = g.taps();
  const int p = g.out_positions();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  if (grad_in) std::fill(grad_in, grad_in + g.in_channels * in_plane, T(0));
  if (grad_offsets) std::fill(grad_offsets, grad_offsets + static_cast<std::size_t>(2 * taps) * p, T(0));
  for (int co = 0; co < g.out_channels; ++co) {
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        const std::size_t pos = static_cast<std::size_t>(oh) * wo + ow;
        const T go = grad_out[static_cast<std::size_t>(co) * p + pos];
        if (grad_bias) grad_bias[co] += go;
        for (int t = 0; t < taps; ++t) {
          const auto sp = sample_point(g, offsets, t, oh, ow);
          for (int ci = 0; ci < g.in_channels; ++ci) {
            const std::size_t wi = (static_cast<std::size_t>(co) * g.in_channels + ci) * taps + t;
            const T* plane = in + ci * in_plane;
            if (grad_weight) grad_weight[wi] += go * bilinear_sample(plane, g.in_h, g.in_w, sp.h, sp.w);
            if (grad_in) bilinear_scatter(grad_in + ci * in_plane, g.in_h, g.in_w, sp.h, sp.w, go * weight[wi]);
            if (grad_offsets) {
              T dh, dw;
              bilinear_coordinate_grad(plane, g.in_h, g.in_w, sp.h, sp.w, dh, dw);
              grad_offsets[static_cast<std::size_t>(2 * t) * p + pos] += go * weight[wi] * dh;
              grad_offsets[static_cast<std::size_t>(2 * t + 1) * p + pos] += go * weight[wi] * dw;
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
T bilinear_sample(const T* plane, int height, int width, T h, T w) {
  if (!inside_support(height, width, h, w)) return T(0);
  const int h_low = static_cast<int>(std::floor(h));
  const int w_low = static_cast<int>(std::floor(w));
  const T lh = h - h_low;
  const T lw = w - w_low;
  const T hh = 1 - lh;
  const T hw = 1 - lw;
  return hh * hw * read_or_zero(plane, height, width, h_low, w_low) +
         hh * lw * read_or_zero(plane, height, width, h_low, w_low + 1) +
         lh * hw * read_or_zero(plane, height, width, h_low + 1, w_low) +
         lh * lw * read_or_zero(plane, height, width, h_low + 1, w_low + 1);
}

template <typename T>
void deform_im2col(const ConvGeometry& g, const T* in, const T* offsets, T* col) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int taps = g.taps();
  const int p = g.out_positions();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const int rows = g.col_rows();
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int c = row / taps;
    const int t = row % taps;
    const T* plane = in + c * in_plane;
    T* dst = col + static_cast<std::size_t>(row) * p;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        const auto sp = sample_point(g, offsets, t, oh, ow);
        dst[oh * wo + ow] = bilinear_sample(plane, g.in_h, g.in_w, sp.h, sp.w);
      }
    }
  }
}

template <typename T>
void deform_conv_forward(Exec exec, const ConvGeometry& g, const T* in, const T* offsets,
                         const T* weight, const T* bias, T* out) {
  if (exec == Exec::serial) {
    forward_reference(g, in, offsets, weight, bias, out);
    return;
  }
  const int p = g.out_positions();
  for (int co = 0; co < g.out_channels; ++co) {
    std::fill(out + static_cast<std::size_t>(co) * p, out + static_cast<std::size_t>(co + 1) * p,
              bias ? bias[co] : T(0));
  }
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * p);
  deform_im2col(g, in, offsets, col.data());
  gemm_nn(g.out_channels, p, g.col_rows(), weight, col.data(), out);
}

template <typename T>
void deform_conv_backward(Exec exec, const ConvGeometry& g, const T* in, const T* offsets,
                          const T* weight, const T* grad_out, T* grad_in, T* grad_offsets,
                          T* grad_weight, T* grad_bias) {
  if (exec == Exec::serial) {
    backward_reference(g, in, offsets, weight, grad_out, grad_in, grad_offsets, grad_weight,
                       grad_bias);
    return;
  }
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int taps = g.taps();
  const int p = g.out_positions();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;

  if (grad_bias) {
    for (int co = 0; co < g.out_channels; ++co) {
      const T* go = grad_out + static_cast<std::size_t>(co) * p;
      T acc = 0;
      for (int i = 0; i < p; ++i) acc += go[i];
      grad_bias[co] += acc;
    }
  }
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * p);
  if (grad_weight) {
    deform_im2col(g, in, offsets, col.data());
    gemm_nt(g.out_channels, g.col_rows(), p, grad_out, col.data(), grad_weight);
  }
  if (!grad_in && !grad_offsets) return;

  std::fill(col.begin(), col.end(), T(0));
  gemm_tn(g.col_rows(), p, g.out_channels, weight, grad_out, col.data());
  const T* grad_col = col.data();

  if (grad_in) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.in_channels; ++c) {
      T* dst = grad_in + c * in_plane;
      std::fill(dst, dst + in_plane, T(0));
      for (int t = 0; t < taps; ++t) {
        const T* gc = grad_col + (static_cast<std::size_t>(c) * taps + t) * p;
        for (int oh = 0; oh < ho; ++oh) {
          for (int ow = 0; ow < wo; ++ow) {
            const auto sp = sample_point(g, offsets, t, oh, ow);
            bilinear_scatter(dst, g.in_h, g.in_w, sp.h, sp.w, gc[oh * wo + ow]);
          }
        }
      }
    }
  }
  if (grad_offsets) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < taps; ++t) {
      T* gdy = grad_offsets + static_cast<std::size_t>(2 * t) * p;
      T* gdx = grad_offsets + static_cast<std::size_t>(2 * t + 1) * p;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          const int pos = oh * wo + ow;
          const auto sp = sample_point(g, offsets, t, oh, ow);
          T acc_h = 0;
          T acc_w = 0;
          for (int c = 0; c < g.in_channels; ++c) {
            T dh, dw;
            bilinear_coordinate_grad(in + c * in_plane, g.in_h, g.in_w, sp.h, sp.w, dh, dw);
            const T gc = grad_col[(static_cast<std::size_t>(c) * taps + t) * p + pos];
            acc_h += gc * dh;
            acc_w += gc * dw;
          }
          gdy[pos] = acc_h;
          gdx[pos] = acc_w;
        }
      }
    }
  }
}

template float bilinear_sample<float>(const float*, int, int, float, float);
template double bilinear_sample<double>(const double*, int, int, double, double);
template void deform_im2col<float>(const ConvGeometry&, const float*, const float*, float*);
template void deform_im2col<double>(const ConvGeometry&, const double*, const double*, double*);
template void deform_conv_forward<float>(Exec, const ConvGeometry&, const float*, const float*,
                                         const float*, const float*, float*);
template void deform_conv_forward<double>(Exec, const ConvGeometry&, const double*, const double*,
                                          const double*, const double*, double*);
template void deform_conv_backward<float>(Exec, const ConvGeometry&, const float*, const float*,
                                          const float*, const float*, float*, float*, float*,
                                          float*);
template void deform_conv_backward<double>(Exec, const ConvGeometry&, const double*, const double*,
                                           const double*, const double*, double*, double*,
                                           double*, double*);

}  // namespace bce::kernels
