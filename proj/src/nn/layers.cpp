#include "bce/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "bce/core/mask_ops.hpp"
#include "bce/kernels/deform_conv.hpp"
#include "bce/kernels/spatial.hpp"

namespace bce::nn {

void Parameter::zero_grad() {
  ensure_grad();
  grad.zero();
}

namespace {

void init_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.span()) v = stddev * standard_normal(rng);
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias,
               Rng& rng, double init_gain)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride),
      pad_(pad), has_bias_(bias) {
  weight_.value = Tensor(out_channels, in_channels, kernel, kernel);
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  if (init_gain > 0) init_normal(weight_.value, std::sqrt(init_gain / fan_in), rng);
  if (has_bias_) bias_.value = Tensor(1, out_channels, 1, 1);
}

kernels::ConvGeometry Conv2d::geometry(int in_h, int in_w) const {
  return {in_channels_, out_channels_, kernel_, stride_, pad_, in_h, in_w};
}

Tensor Conv2d::apply(const Tensor& x, const RunMode& mode) const {
  if (x.c() != in_channels_) {
    throw ShapeError("Conv2d: expected " + std::to_string(in_channels_) + " input channels, got " +
                     x.shape().str());
  }
  const auto g = geometry(x.h(), x.w());
  Tensor out(x.n(), out_channels_, g.out_h(), g.out_w());
  for (int n = 0; n < x.n(); ++n) {
    kernels::conv2d_forward(mode.exec, g, x.plane(n, 0), weight_.value.data(),
                            has_bias_ ? bias_.value.data() : nullptr, out.plane(n, 0));
  }
  return out;
}

Tensor Conv2d::apply_backward(const Tensor& x, const Tensor& grad_out, const RunMode& mode) {
  const auto g = geometry(x.h(), x.w());
  Tensor grad_in(x.shape());
  double* gw = weight_.ensure_grad().data();
  double* gb = has_bias_ ? bias_.ensure_grad().data() : nullptr;
  for (int n = 0; n < x.n(); ++n) {
    kernels::conv2d_backward(mode.exec, g, x.plane(n, 0), weight_.value.data(),
                             grad_out.plane(n, 0), grad_in.plane(n, 0), gw, gb);
  }
  return grad_in;
}

Tensor Conv2d::forward(const Tensor& x, const RunMode& mode) {
  input_ = x;
  return apply(x, mode);
}

Tensor Conv2d::backward(const Tensor& grad_out, const RunMode& mode) {
  return apply_backward(input_, grad_out, mode);
}

Shape4 Conv2d::count(const Shape4& in, Complexity& acc) const {
  const auto g = geometry(in.h, in.w);
  acc.macs += g.macs() * in.n;
  return {in.n, out_channels_, g.out_h(), g.out_w()};
}

void Conv2d::visit(const std::string& prefix, const Visitor& v) {
  v.param(join(prefix, "weight"), weight_);
  if (has_bias_) v.param(join(prefix, "bias"), bias_);
}

// ---------------------------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_.value = Tensor(1, channels, 1, 1, 1.0);
  beta_.value = Tensor(1, channels, 1, 1, 0.0);
  running_mean_ = Tensor(1, channels, 1, 1, 0.0);
  running_var_ = Tensor(1, channels, 1, 1, 1.0);
}

Tensor BatchNorm2d::apply(const Tensor& x, const RunMode& mode, Cache& cache) {
  if (x.c() != channels_) throw ShapeError("BatchNorm2d: channel mismatch " + x.shape().str());
  const auto& s = x.shape();
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  Tensor out(s);
  cache.x_hat = Tensor(s);
  cache.inv_std.assign(static_cast<std::size_t>(channels_), 0.0);
  cache.training = mode.training;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_; ++c) {
    double mean;
    double var;
    if (mode.training) {
      double sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    cache.inv_std[c] = inv;
    const double gm = gamma_.value[c];
    const double bt = beta_.value[c];
    for (int n = 0; n < s.n; ++n) {
      const double* p = x.plane(n, c);
      double* xh = cache.x_hat.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * inv;
        o[i] = gm * xh[i] + bt;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::apply_backward(const Tensor& grad_out, const Cache& cache) {
  const auto& s = grad_out.shape();
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  Tensor grad_in(s);
  double* gg = gamma_.ensure_grad().data();
  double* gb = beta_.ensure_grad().data();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0;
    double sum_dy_xh = 0;
    for (int n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
    }
    gg[c] += sum_dy_xh;
    gb[c] += sum_dy;
    const double scale = gamma_.value[c] * cache.inv_std[c];
    for (int n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xh = cache.x_hat.plane(n, c);
      double* dx = grad_in.plane(n, c);
      if (cache.training) {
        for (std::size_t i = 0; i < plane; ++i) {
          dx[i] = scale * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return grad_in;
}

Tensor BatchNorm2d::forward(const Tensor& x, const RunMode& mode) { return apply(x, mode, cache_); }

Tensor BatchNorm2d::backward(const Tensor& grad_out, const RunMode&) {
  return apply_backward(grad_out, cache_);
}

void BatchNorm2d::visit(const std::string& prefix, const Visitor& v) {
  v.param(join(prefix, "weight"), gamma_);
  v.param(join(prefix, "bias"), beta_);
  if (v.buffer) {
    v.buffer(join(prefix, "running_mean"), running_mean_);
    v.buffer(join(prefix, "running_var"), running_var_);
  }
}

// ---------------------------------------------------------------------------------------------
// Elementwise / pooling

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& y) {
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
  in_shape_ = x.shape();
  const int oh = kernels::pooled_extent(x.h(), kernel_, stride_, pad_);
  const int ow = kernels::pooled_extent(x.w(), kernel_, stride_, pad_);
  Tensor out(x.n(), x.c(), oh, ow);
  argmax_.assign(out.size(), 0);
  kernels::max_pool_forward(x.data(), x.n() * x.c(), x.h(), x.w(), kernel_, stride_, pad_,
                            out.data(), argmax_.data());
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor grad_in(in_shape_);
  kernels::max_pool_backward(grad_out.data(), argmax_.data(), in_shape_.n * in_shape_.c,
                             in_shape_.h, in_shape_.w, grad_out.h(), grad_out.w(),
                             grad_in.data());
  return grad_in;
}

Shape4 MaxPool2d::count(const Shape4& in) const {
  return {in.n, in.c, kernels::pooled_extent(in.h, kernel_, stride_, pad_),
          kernels::pooled_extent(in.w, kernel_, stride_, pad_)};
}

// ---------------------------------------------------------------------------------------------
// ConvBnAct / BasicBlock

ConvBnAct::ConvBnAct(int in_channels, int out_channels, int kernel, int stride, Rng& rng, bool act)
    : conv_(in_channels, out_channels, kernel, stride, kernel / 2, false, rng),
      bn_(out_channels), act_(act) {}

Tensor ConvBnAct::forward(const Tensor& x, const RunMode& mode) {
  Tensor y = bn_.forward(conv_.forward(x, mode), mode);
  if (act_) {
    out_ = relu(y);
    return out_;
  }
  return y;
}

Tensor ConvBnAct::backward(const Tensor& grad_out, const RunMode& mode) {
  Tensor g = act_ ? relu_backward(grad_out, out_) : grad_out;
  return conv_.backward(bn_.backward(g, mode), mode);
}

void ConvBnAct::visit(const std::string& prefix, const Visitor& v) {
  conv_.visit(join(prefix, "conv"), v);
  bn_.visit(join(prefix, "bn"), v);
}

BasicBlock::BasicBlock(int in_channels, int out_channels, int stride, Rng& rng)
    : conv1_(in_channels, out_channels, 3, stride, rng, true),
      conv2_(out_channels, out_channels, 3, 1, rng, false),
      project_(stride != 1 || in_channels != out_channels) {
  if (project_) shortcut_ = ConvBnAct(in_channels, out_channels, 1, stride, rng, false);
}

Tensor BasicBlock::forward(const Tensor& x, const RunMode& mode) {
  Tensor y = conv2_.forward(conv1_.forward(x, mode), mode);
  if (project_) {
    y += shortcut_.forward(x, mode);
  } else {
    y += x;
  }
  out_ = relu(y);
  return out_;
}

Tensor BasicBlock::backward(const Tensor& grad_out, const RunMode& mode) {
  Tensor g = relu_backward(grad_out, out_);
  Tensor dx = conv1_.backward(conv2_.backward(g, mode), mode);
  if (project_) {
    dx += shortcut_.backward(g, mode);
  } else {
    dx += g;
  }
  return dx;
}

Shape4 BasicBlock::count(const Shape4& in, Complexity& acc) const {
  Shape4 s = conv2_.count(conv1_.count(in, acc), acc);
  if (project_) shortcut_.count(in, acc);
  return s;
}

void BasicBlock::visit(const std::string& prefix, const Visitor& v) {
  conv1_.visit(join(prefix, "conv1"), v);
  conv2_.visit(join(prefix, "conv2"), v);
  if (project_) shortcut_.visit(join(prefix, "downsample"), v);
}

// ---------------------------------------------------------------------------------------------
// ChannelAttention

ChannelAttention::ChannelAttention(int channels, int reduction, Rng& rng)
    : squeeze_(channels, std::max(1, channels / reduction), 1, 1, 0, true, rng),
      excite_(std::max(1, channels / reduction), channels, 1, 1, 0, true, rng, 1.0) {}

Tensor ChannelAttention::forward(const Tensor& x, const RunMode& mode) {
  input_ = x;
  const auto& s = x.shape();
  const std::size_t plane = s.plane();
  Tensor pooled(s.n, s.c, 1, 1);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.plane(n, c);
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      pooled.at(n, c, 0, 0) = sum / static_cast<double>(plane);
    }
  }
  hidden_ = relu(squeeze_.forward(pooled, mode));
  Tensor logits = excite_.forward(hidden_, mode);
  gates_ = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) gates_[i] = sigmoid(logits[i]);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double g = gates_.at(n, c, 0, 0);
      const double* p = x.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = g * p[i];
    }
  }
  return out;
}

Tensor ChannelAttention::backward(const Tensor& grad_out, const RunMode& mode) {
  const auto& s = input_.shape();
  const std::size_t plane = s.plane();
  Tensor grad_in(s);
  Tensor grad_logits(gates_.shape());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double g = gates_.at(n, c, 0, 0);
      const double* dy = grad_out.plane(n, c);
      const double* x = input_.plane(n, c);
      double* dx = grad_in.plane(n, c);
      double dg = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        dg += dy[i] * x[i];
        dx[i] = dy[i] * g;
      }
      grad_logits.at(n, c, 0, 0) = dg * g * (1 - g);
    }
  }
  Tensor grad_pooled =
      squeeze_.backward(relu_backward(excite_.backward(grad_logits, mode), hidden_), mode);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double gp = grad_pooled.at(n, c, 0, 0) / static_cast<double>(plane);
      double* dx = grad_in.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) dx[i] += gp;
    }
  }
  return grad_in;
}

Shape4 ChannelAttention::count(const Shape4& in, Complexity& acc) const {
  Shape4 pooled{in.n, in.c, 1, 1};
  excite_.count(squeeze_.count(pooled, acc), acc);
  return in;
}

void ChannelAttention::visit(const std::string& prefix, const Visitor& v) {
  squeeze_.visit(join(prefix, "fc1"), v);
  excite_.visit(join(prefix, "fc2"), v);
}

// ---------------------------------------------------------------------------------------------
// DeformConv2d / DeformBlock

DeformConv2d::DeformConv2d(int in_channels, int out_channels, int kernel, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel),
      offset_conv_(in_channels, 2 * kernel * kernel, kernel, 1, kernel / 2, true, rng, 0.0) {
  if (kernel % 2 == 0) throw UsageError("DeformConv2d: kernel size must be odd");
  weight_.value = Tensor(out_channels, in_channels, kernel, kernel);
  init_normal(weight_.value, std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel)),
              rng);
  bias_.value = Tensor(1, out_channels, 1, 1);
}

kernels::ConvGeometry DeformConv2d::geometry(int in_h, int in_w) const {
  return {in_channels_, out_channels_, kernel_, 1, kernel_ / 2, in_h, in_w};
}

Tensor DeformConv2d::forward(const Tensor& x, const RunMode& mode) {
  if (!x.all_finite()) throw NumericalError("DeformConv2d: non-finite input");
  if (x.c() != in_channels_) throw ShapeError("DeformConv2d: channel mismatch " + x.shape().str());
  input_ = x;
  offsets_ = offset_conv_.forward(x, mode);
  if (!offsets_.all_finite()) throw NumericalError("DeformConv2d: non-finite offsets");
  const auto g = geometry(x.h(), x.w());
  Tensor out(x.n(), out_channels_, g.out_h(), g.out_w());
  for (int n = 0; n < x.n(); ++n) {
    kernels::deform_conv_forward(mode.exec, g, x.plane(n, 0), offsets_.plane(n, 0),
                                 weight_.value.data(), bias_.value.data(), out.plane(n, 0));
  }
  return out;
}

Tensor DeformConv2d::backward(const Tensor& grad_out, const RunMode& mode) {
  const auto g = geometry(input_.h(), input_.w());
  Tensor grad_in(input_.shape());
  Tensor grad_offsets(offsets_.shape());
  double* gw = weight_.ensure_grad().data();
  double* gb = bias_.ensure_grad().data();
  for (int n = 0; n < input_.n(); ++n) {
    kernels::deform_conv_backward(mode.exec, g, input_.plane(n, 0), offsets_.plane(n, 0),
                                  weight_.value.data(), grad_out.plane(n, 0),
                                  grad_in.plane(n, 0), grad_offsets.plane(n, 0), gw, gb);
  }
  grad_in += offset_conv_.backward(grad_offsets, mode);
  return grad_in;
}

Shape4 DeformConv2d::count(const Shape4& in, Complexity& acc) const {
  offset_conv_.count(in, acc);
  const auto g = geometry(in.h, in.w);
  acc.macs += g.macs() * in.n;
  return {in.n, out_channels_, g.out_h(), g.out_w()};
}

void DeformConv2d::visit(const std::string& prefix, const Visitor& v) {
  v.param(join(prefix, "weight"), weight_);
  v.param(join(prefix, "bias"), bias_);
  offset_conv_.visit(join(prefix, "offset"), v);
}

DeformBlock::DeformBlock(int channels, Rng& rng) : conv_(channels, channels, 3, rng), bn_(channels) {}

Tensor DeformBlock::forward(const Tensor& x, const RunMode& mode) {
  return bn_.forward(conv_.forward(x, mode), mode);
}

Tensor DeformBlock::backward(const Tensor& grad_out, const RunMode& mode) {
  return conv_.backward(bn_.backward(grad_out, mode), mode);
}

void DeformBlock::visit(const std::string& prefix, const Visitor& v) {
  conv_.visit(join(prefix, "dcn"), v);
  bn_.visit(join(prefix, "bn"), v);
}

// ---------------------------------------------------------------------------------------------
// SegHead / Projector

SegHead::SegHead(int channels, Rng& rng) : conv_(channels, 1, 1, 1, 0, true, rng, 1.0) {}

Tensor SegHead::forward(const Tensor& feat, int out_h, int out_w, const RunMode& mode) {
  Tensor low = conv_.forward(feat, mode);
  low_shape_ = low.shape();
  Tensor logits = resize_bilinear(low, out_h, out_w);
  prob_ = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) prob_[i] = sigmoid(logits[i]);
  return prob_;
}

Tensor SegHead::backward(const Tensor& grad_prob, const RunMode& mode) {
  Tensor grad_logits(prob_.shape());
  for (std::size_t i = 0; i < prob_.size(); ++i) {
    grad_logits[i] = grad_prob[i] * prob_[i] * (1 - prob_[i]);
  }
  return conv_.backward(resize_bilinear_backward(grad_logits, low_shape_), mode);
}

Shape4 SegHead::count(const Shape4& in, int out_h, int out_w, Complexity& acc) const {
  // Counted in the reference order: upsample first, then the 1x1 projection at full resolution.
  return conv_.count({in.n, in.c, out_h, out_w}, acc);
}

void SegHead::visit(const std::string& prefix, const Visitor& v) { conv_.visit(join(prefix, "conv"), v); }

Projector::Projector(int channels, Rng& rng) : conv_(channels, 1, 1, 1, 0, true, rng, 1.0), bn_(1) {}

Tensor Projector::forward(const Tensor& x, const RunMode& mode, Cache& cache) {
  cache.input = x;
  Tensor y = bn_.apply(conv_.apply(x, mode), mode, cache.norm);
  cache.output = Tensor(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) cache.output[i] = sigmoid(y[i]);
  return cache.output;
}

Tensor Projector::backward(const Tensor& grad_out, const RunMode& mode, const Cache& cache) {
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = grad_out[i] * cache.output[i] * (1 - cache.output[i]);
  }
  return conv_.apply_backward(cache.input, bn_.apply_backward(g, cache.norm), mode);
}

void Projector::visit(const std::string& prefix, const Visitor& v) {
  conv_.visit(join(prefix, "conv"), v);
  bn_.visit(join(prefix, "bn"), v);
}

// ---------------------------------------------------------------------------------------------
// Tensor helpers

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  Tensor out(x.n(), x.c(), out_h, out_w);
  kernels::bilinear_resize(x.data(), x.n() * x.c(), x.h(), x.w(), out_h, out_w, out.data());
  return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, const Shape4& in_shape) {
  Tensor grad_in(in_shape);
  kernels::bilinear_resize_backward(grad_out.data(), in_shape.n * in_shape.c, in_shape.h,
                                    in_shape.w, grad_out.h(), grad_out.w(), grad_in.data());
  return grad_in;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  const Tensor& first = *parts.front();
  int channels = 0;
  for (const Tensor* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w()) {
      throw ShapeError("concat_channels: extent mismatch " + p->shape().str());
    }
    channels += p->c();
  }
  Tensor out(first.n(), channels, first.h(), first.w());
  const std::size_t plane = first.shape().plane();
  for (int n = 0; n < first.n(); ++n) {
    int c0 = 0;
    for (const Tensor* p : parts) {
      std::copy_n(p->plane(n, 0), plane * p->c(), out.plane(n, c0));
      c0 += p->c();
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int c0, int count) {
  Tensor out(x.n(), count, x.h(), x.w());
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) std::copy_n(x.plane(n, c0), plane * count, out.plane(n, 0));
  return out;
}

}  // namespace bce::nn
