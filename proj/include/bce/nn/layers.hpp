#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bce/core/rng.hpp"
#include "bce/core/tensor.hpp"
#include "bce/kernels/conv2d.hpp"

namespace bce::nn {

/// Trainable array with its gradient and optimizer state.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor velocity;

  std::size_t size() const { return value.size(); }
  /// Allocates (or zeroes) the gradient buffer.
  void zero_grad();
  Tensor& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Receives every parameter and persistent buffer of a module tree, in a fixed order.
struct Visitor {
  std::function<void(const std::string&, Parameter&)> param;
  std::function<void(const std::string&, Tensor&)> buffer;
};

/// Multiply-accumulate and parameter tally for count_complexity.
struct Complexity {
  long long macs = 0;
  long long flops() const { return 2 * macs; }
};

/// Execution switches shared by every layer of a forward/backward pass.
struct RunMode {
  kernels::Exec exec = kernels::Exec::parallel;
  bool training = true;
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias, Rng& rng,
         double init_gain = 2.0);

  Tensor forward(const Tensor& x, const RunMode& mode);
  /// Returns dL/dx; accumulates parameter gradients.
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  /// Stateless forms used when one layer is applied to several inputs.
  Tensor apply(const Tensor& x, const RunMode& mode) const;
  Tensor apply_backward(const Tensor& x, const Tensor& grad_out, const RunMode& mode);

  Shape4 count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

  kernels::ConvGeometry geometry(int in_h, int in_w) const;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }
  int out_channels() const { return out_channels_; }

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  bool has_bias_ = false;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// Per-channel batch normalisation with learned affine and running statistics.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);

  /// Explicit-cache forms for layers shared across several inputs.
  struct Cache {
    Tensor x_hat;
    std::vector<double> inv_std;
    bool training = true;
  };
  Tensor apply(const Tensor& x, const RunMode& mode, Cache& cache);
  Tensor apply_backward(const Tensor& grad_out, const Cache& cache);

  void visit(const std::string& prefix, const Visitor& v);
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  int channels_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  Cache cache_;
};

Tensor relu(const Tensor& x);
/// dL/dx for y = relu(x), given the forward output y.
Tensor relu_backward(const Tensor& grad_out, const Tensor& y);

class MaxPool2d {
 public:
  MaxPool2d(int kernel = 3, int stride = 2, int pad = 1) : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  Shape4 count(const Shape4& in) const;

 private:
  int kernel_;
  int stride_;
  int pad_;
  Shape4 in_shape_;
  std::vector<std::int32_t> argmax_;
};

/// conv -> BN -> ReLU (ReLU optional).
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(int in_channels, int out_channels, int kernel, int stride, Rng& rng, bool act = true);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const { return conv_.count(in, acc); }
  void visit(const std::string& prefix, const Visitor& v);

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  bool act_ = true;
  Tensor out_;
};

/// Two 3x3 conv/BN stages with an identity or 1x1-projection shortcut.
class BasicBlock {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

 private:
  ConvBnAct conv1_;
  ConvBnAct conv2_;
  bool project_ = false;
  ConvBnAct shortcut_;
  Tensor out_;
};

/// Squeeze (global average) -> C/r bottleneck -> sigmoid gates that rescale each channel.
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(int channels, int reduction, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

 private:
  Conv2d squeeze_;
  Conv2d excite_;
  Tensor input_;
  Tensor hidden_;
  Tensor gates_;
};

/// Deformable k x k convolution whose offsets come from a standard k x k convolution on the same
/// input. The offset predictor starts at zero so the layer initially equals a plain convolution.
class DeformConv2d {
 public:
  DeformConv2d() = default;
  DeformConv2d(int in_channels, int out_channels, int kernel, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  Conv2d& offset_predictor() { return offset_conv_; }
  /// Offsets produced by the last forward call.
  const Tensor& last_offsets() const { return offsets_; }
  kernels::ConvGeometry geometry(int in_h, int in_w) const;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 3;
  Parameter weight_;
  Parameter bias_;
  Conv2d offset_conv_;
  Tensor input_;
  Tensor offsets_;
};

/// Deformable convolution followed by batch normalisation.
class DeformBlock {
 public:
  DeformBlock() = default;
  DeformBlock(int channels, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode);
  Tensor backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const { return conv_.count(in, acc); }
  void visit(const std::string& prefix, const Visitor& v);
  DeformConv2d& conv() { return conv_; }
  BatchNorm2d& norm() { return bn_; }

 private:
  DeformConv2d conv_;
  BatchNorm2d bn_;
};

/// Bilinear upsampling to the input extent, 1x1 convolution to one channel, sigmoid.
/// Both steps are linear and per-pixel, so the 1x1 projection runs first, at feature resolution.
class SegHead {
 public:
  SegHead() = default;
  SegHead(int channels, Rng& rng);

  /// Returns N x 1 x out_h x out_w probabilities.
  Tensor forward(const Tensor& feat, int out_h, int out_w, const RunMode& mode);
  /// Takes dL/dP, returns dL/dfeat.
  Tensor backward(const Tensor& grad_prob, const RunMode& mode);
  Shape4 count(const Shape4& in, int out_h, int out_w, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);
  Conv2d& conv() { return conv_; }

 private:
  Conv2d conv_;
  Shape4 low_shape_;
  Tensor prob_;
};

/// 1x1 convolution -> normalisation -> sigmoid producing one-channel maps. One instance is shared
/// across several inputs per pass, so activations live in caller-owned caches.
class Projector {
 public:
  struct Cache {
    Tensor input;
    BatchNorm2d::Cache norm;
    Tensor output;
  };

  Projector() = default;
  Projector(int channels, Rng& rng);

  Tensor forward(const Tensor& x, const RunMode& mode, Cache& cache);
  Tensor backward(const Tensor& grad_out, const RunMode& mode, const Cache& cache);
  Shape4 count(const Shape4& in, Complexity& acc) const { return conv_.count(in, acc); }
  void visit(const std::string& prefix, const Visitor& v);

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

/// Bilinear resize of every (n, c) plane.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_bilinear_backward(const Tensor& grad_out, const Shape4& in_shape);

/// Concatenate along channels; inputs must share n, h, w.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
/// Slice of channels [c0, c0 + count).
Tensor slice_channels(const Tensor& x, int c0, int count);

}  // namespace bce::nn
