#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bce/core/raster.hpp"
#include "bce/nn/layers.hpp"

namespace bce::nn {

enum class EncoderPreset { paper34, tiny };

std::string to_string(EncoderPreset preset);
EncoderPreset parse_preset(const std::string& name);

struct ModelConfig {
  EncoderPreset preset = EncoderPreset::tiny;
  bool pretrained = false;
  int fused_channels = 64;
  bool use_attention = true;
  bool use_dtm = true;
  int attention_reduction = 4;
  std::uint64_t seed = 0;

  /// Residual blocks per stage.
  std::array<int, 4> stage_blocks() const;
  /// Output channels per stage (strides 4, 8, 16, 32).
  std::array<int, 4> stage_channels() const;
  int stem_channels() const { return stage_channels()[0]; }
  /// 3x3 conv/BN/ReLU refinements applied to each level before projection.
  int refine_depth() const { return preset == EncoderPreset::paper34 ? 2 : 0; }

  /// Paper-scale preset: ResNet-34 encoder, 128 fused channels.
  static ModelConfig paper34();
  /// Desk-scale preset: one block per stage, 8/16/32/64 channels.
  static ModelConfig tiny();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Normalised N x 3 x H x W network input (ImageNet channel statistics).
Tensor image_batch(std::span<const ImageTile> images);

/// Residual encoder returning the stride-4/8/16/32 feature levels.
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, Rng& rng);
  std::array<Tensor, 4> forward(const Tensor& image, const RunMode& mode);
  /// Gradients may be empty tensors (treated as zero).
  void backward(std::array<Tensor, 4> grads, const RunMode& mode);
  std::array<Shape4, 4> count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

 private:
  ConvBnAct stem_;
  MaxPool2d pool_;
  std::array<std::vector<BasicBlock>, 4> stages_;
};

/// Projects every level to the fused width, upsamples to stride 4, concatenates, reduces with a
/// 1x1 convolution and applies channel attention.
class FeatureFusion {
 public:
  FeatureFusion(const ModelConfig& cfg, Rng& rng);
  Tensor forward(const std::array<Tensor, 4>& levels, const RunMode& mode);
  std::array<Tensor, 4> backward(const Tensor& grad_out, const RunMode& mode);
  Shape4 count(const std::array<Shape4, 4>& levels, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

 private:
  int channels_;
  bool use_attention_;
  std::array<std::vector<ConvBnAct>, 4> refine_;
  std::array<ConvBnAct, 4> project_;
  std::array<Shape4, 4> projected_shapes_;
  ConvBnAct reduce_;
  ChannelAttention attention_;
};

struct DtmOutput {
  Tensor features;    ///< F' (global adjustment)
  Tensor foreground;  ///< F_FG'
  Tensor background;  ///< F_BG'
};

/// Deformable feature transform: F' = block_g(F); F_FG' = block_fg(M * (J - S(F')));
/// F_BG' = block_bg((J - M) * F'). With DTM disabled every block is the identity.
class FeatureTransform {
 public:
  FeatureTransform(int channels, bool enabled, Rng& rng);
  /// `grid` is the N x 1 x h x w historical mask on the feature grid.
  DtmOutput forward(const Tensor& fused, const Tensor& grid, const RunMode& mode);
  /// Gradients may be empty (zero). Returns dL/dF.
  Tensor backward(const Tensor& grad_features, const Tensor& grad_foreground,
                  const Tensor& grad_background, const RunMode& mode);
  Shape4 count(const Shape4& in, Complexity& acc) const;
  void visit(const std::string& prefix, const Visitor& v);

  bool enabled() const { return enabled_; }
  DeformBlock& global_block() { return global_; }
  DeformBlock& foreground_block() { return foreground_; }
  DeformBlock& background_block() { return background_; }

 private:
  bool enabled_;
  DeformBlock global_;
  DeformBlock foreground_;
  DeformBlock background_;
  Tensor adjusted_;
  Tensor grid_;
};

struct ModelOutput {
  Tensor p_new;       ///< P_N, N x 1 x H x W
  Tensor p_removed;   ///< P_R
  Tensor p_existing;  ///< P_E
  Tensor fused;       ///< F before the transform
  Tensor features;    ///< F'
  Tensor foreground;  ///< F_FG'
  Tensor background;  ///< F_BG'
};

/// Upstream gradients for BceNet::backward. Empty tensors count as zero.
struct OutputGrads {
  Tensor p_new;
  Tensor p_removed;
  Tensor p_existing;
  Tensor features;
  Tensor foreground;
  Tensor background;
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* value;
};

class BceNet {
 public:
  explicit BceNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }

  /// F = encode_fuse(I); stride 4.
  Tensor encode_fuse(const Tensor& image, const RunMode& mode);
  ModelOutput forward(const Tensor& image, std::span<const HistoricalMask> masks,
                      const RunMode& mode);
  ModelOutput forward(std::span<const ImageTile> images, std::span<const HistoricalMask> masks,
                      const RunMode& mode);
  /// Backpropagates through the last forward call; accumulates parameter gradients.
  void backward(const OutputGrads& grads, const RunMode& mode);

  Projector& projector() { return projector_; }
  FeatureTransform& transform() { return transform_; }
  SegHead& head_new() { return head_new_; }
  SegHead& head_removed() { return head_removed_; }
  SegHead& head_existing() { return head_existing_; }

  std::vector<NamedParameter> parameters();
  std::vector<NamedBuffer> buffers();
  void zero_grad();
  long long parameter_count();
  Complexity count(int height, int width) const;

 private:
  ModelConfig config_;
  Rng rng_;
  Encoder encoder_;
  FeatureFusion fusion_;
  FeatureTransform transform_;
  SegHead head_new_;
  SegHead head_removed_;
  SegHead head_existing_;
  Projector projector_;
  Shape4 image_shape_;
};

struct ComplexityReport {
  long long flops = 0;
  long long params = 0;
};

/// FLOPs (2 x multiply-accumulates of every convolution and linear layer) at the given input
/// extent, plus the trainable scalar count (the contrastive projector is included).
ComplexityReport count_complexity(BceNet& model, int height, int width);

}  // namespace bce::nn
