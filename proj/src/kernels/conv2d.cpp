#include "bce/kernels/conv2d.hpp"

#include <algorithm>
#include <vector>

#include "bce/kernels/gemm.hpp"

namespace bce::kernels {

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int k = g.kernel;
  const int rows = g.col_rows();
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int c = row / (k * k);
    const int ki = (row / k) % k;
    const int kj = row % k;
    const T* src = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    T* dst = col + static_cast<std::size_t>(row) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const int ih = oh * g.stride - g.pad + ki;
      T* drow = dst + static_cast<std::size_t>(oh) * wo;
      if (ih < 0 || ih >= g.in_h) {
        std::fill(drow, drow + wo, T(0));
        continue;
      }
      const T* srow = src + static_cast<std::size_t>(ih) * g.in_w;
      if (g.stride == 1) {
        const int iw0 = -g.pad + kj;
        for (int ow = 0; ow < wo; ++ow) {
          const int iw = iw0 + ow;
          drow[ow] = (iw >= 0 && iw < g.in_w) ? srow[iw] : T(0);
        }
      } else {
        for (int ow = 0; ow < wo; ++ow) {
          const int iw = ow * g.stride - g.pad + kj;
          drow[ow] = (iw >= 0 && iw < g.in_w) ? srow[iw] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int k = g.kernel;
  // Parallel over input channels: every channel receives contributions only from its own rows.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.in_channels; ++c) {
    T* dst = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    std::fill(dst, dst + static_cast<std::size_t>(g.in_h) * g.in_w, T(0));
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        const T* src = col + static_cast<std::size_t>(row) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          T* drow = dst + static_cast<std::size_t>(ih) * g.in_w;
          const T* srow = src + static_cast<std::size_t>(oh) * wo;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.in_w) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

namespace {

template <typename T>
void forward_reference(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int k = g.kernel;
  for (int co = 0; co < g.out_channels; ++co) {
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        T acc = bias ? bias[co] : T(0);
        for (int ci = 0; ci < g.in_channels; ++ci) {
          for (int ki = 0; ki < k; ++ki) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.in_h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw < 0 || iw >= g.in_w) continue;
              acc += weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ki) * k + kj] *
                     in[(static_cast<std::size_t>(ci) * g.in_h + ih) * g.in_w + iw];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * ho + oh) * wo + ow] = acc;
      }
    }
  }
}

template <typename T>
void backward_reference(const ConvGeometry& g, const T* in, const T* weight, const T* grad_out,
                        T* grad_in, T* grad_weight, T* grad_bias) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int k = g.kernel;
  if (grad_in) std::fill(grad_in, grad_in + static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w, T(0));
  for (int co = 0; co < g.out_channels; ++co) {
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        const T go = grad_out[(static_cast<std::size_t>(co) * ho + oh) * wo + ow];
        if (grad_bias) grad_bias[co] += go;
        for (int ci = 0; ci < g.in_channels; ++ci) {
          for (int ki = 0; ki < k; ++ki) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.in_h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw < 0 || iw >= g.in_w) continue;
              const std::size_t wi = ((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ki) * k + kj;
              const std::size_t ii = (static_cast<std::size_t>(ci) * g.in_h + ih) * g.in_w + iw;
              if (grad_weight) grad_weight[wi] += go * in[ii];
              if (grad_in) grad_in[ii] += go * weight[wi];
            }
          }
        }
      }
    }
  }
}

// 1x1 stride-1 unpadded convolutions skip im2col: the input already is the column matrix.
bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
void conv2d_forward(Exec exec, const ConvGeometry& g, const T* in, const T* weight, const T* bias,
                    T* out) {
  if (exec == Exec::serial) {
    forward_reference(g, in, weight, bias, out);
    return;
  }
  const int p = g.out_positions();
#pragma omp parallel for schedule(static)
  for (int co = 0; co < g.out_channels; ++co) {
    std::fill(out + static_cast<std::size_t>(co) * p, out + static_cast<std::size_t>(co + 1) * p,
              bias ? bias[co] : T(0));
  }
  if (is_pointwise(g)) {
    gemm_nn(g.out_channels, p, g.in_channels, weight, in, out);
    return;
  }
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * p);
  im2col(g, in, col.data());
  gemm_nn(g.out_channels, p, g.col_rows(), weight, col.data(), out);
}

template <typename T>
void conv2d_backward(Exec exec, const ConvGeometry& g, const T* in, const T* weight,
                     const T* grad_out, T* grad_in, T* grad_weight, T* grad_bias) {
  if (exec == Exec::serial) {
    backward_reference(g, in, weight, grad_out, grad_in, grad_weight, grad_bias);
    return;
  }
  const int p = g.out_positions();
  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      const T* go = grad_out + static_cast<std::size_t>(co) * p;
      T acc = 0;
      for (int i = 0; i < p; ++i) acc += go[i];
      grad_bias[co] += acc;
    }
  }
  if (is_pointwise(g)) {
    if (grad_weight) gemm_nt(g.out_channels, g.in_channels, p, grad_out, in, grad_weight);
    if (grad_in) {
      std::fill(grad_in, grad_in + static_cast<std::size_t>(g.in_channels) * p, T(0));
      gemm_tn(g.in_channels, p, g.out_channels, weight, grad_out, grad_in);
    }
    return;
  }
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * p);
  if (grad_weight) {
    im2col(g, in, col.data());
    gemm_nt(g.out_channels, g.col_rows(), p, grad_out, col.data(), grad_weight);
  }
  if (grad_in) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_tn(g.col_rows(), p, g.out_channels, weight, grad_out, col.data());
    col2im(g, col.data(), grad_in);
  }
}

template void im2col<float>(const ConvGeometry&, const float*, float*);
template void im2col<double>(const ConvGeometry&, const double*, double*);
template void col2im<float>(const ConvGeometry&, const float*, float*);
template void col2im<double>(const ConvGeometry&, const double*, double*);
template void conv2d_forward<float>(Exec, const ConvGeometry&, const float*, const float*,
                                    const float*, float*);
template void conv2d_forward<double>(Exec, const ConvGeometry&, const double*, const double*,
                                     const double*, double*);
template void conv2d_backward<float>(Exec, const ConvGeometry&, const float*, const float*,
                                     const float*, float*, float*, float*);
template void conv2d_backward<double>(Exec, const ConvGeometry&, const double*, const double*,
                                      const double*, double*, double*, double*);

}  // namespace bce::kernels
