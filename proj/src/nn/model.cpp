#include "bce/nn/model.hpp"

#include "bce/core/mask_ops.hpp"

namespace bce::nn {

std::string to_string(EncoderPreset preset) {
  return preset == EncoderPreset::paper34 ? "paper34" : "tiny";
}

EncoderPreset parse_preset(const std::string& name) {
  if (name == "paper34") return EncoderPreset::paper34;
  if (name == "tiny") return EncoderPreset::tiny;
  throw UsageError("unknown encoder preset '" + name + "' (expected paper34 or tiny)");
}

std::array<int, 4> ModelConfig::stage_blocks() const {
  if (preset == EncoderPreset::paper34) return {3, 4, 6, 3};
  return {1, 1, 1, 1};
}

std::array<int, 4> ModelConfig::stage_channels() const {
  if (preset == EncoderPreset::paper34) return {64, 128, 256, 512};
  return {8, 16, 32, 64};
}

ModelConfig ModelConfig::paper34() {
  ModelConfig cfg;
  cfg.preset = EncoderPreset::paper34;
  cfg.fused_channels = 128;
  return cfg;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.preset = EncoderPreset::tiny;
  return cfg;
}

Tensor image_batch(std::span<const ImageTile> images) {
  if (images.empty()) throw ShapeError("image_batch: no images");
  constexpr double kMean[3] = {0.485, 0.456, 0.406};
  constexpr double kStd[3] = {0.229, 0.224, 0.225};
  const int rows = images.front().rows();
  const int cols = images.front().cols();
  Tensor out(static_cast<int>(images.size()), 3, rows, cols);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& px = images[n].pixels();
    if (!px.same_extent(rows, cols)) throw ShapeError("image_batch: tiles differ in extent");
    for (int c = 0; c < 3; ++c) {
      double* dst = out.plane(static_cast<int>(n), c);
      for (int r = 0; r < rows; ++r) {
        for (int q = 0; q < cols; ++q) {
          dst[static_cast<std::size_t>(r) * cols + q] = (px(r, q, c) / 255.0 - kMean[c]) / kStd[c];
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const ModelConfig& cfg, Rng& rng)
    : stem_(3, cfg.stem_channels(), 7, 2, rng, true), pool_(3, 2, 1) {
  const auto blocks = cfg.stage_blocks();
  const auto channels = cfg.stage_channels();
  int in = cfg.stem_channels();
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      stages_[s].emplace_back(b == 0 ? in : channels[s], channels[s], stride, rng);
    }
    in = channels[s];
  }
}

std::array<Tensor, 4> Encoder::forward(const Tensor& image, const RunMode& mode) {
  std::array<Tensor, 4> levels;
  Tensor x = pool_.forward(stem_.forward(image, mode));
  for (int s = 0; s < 4; ++s) {
    for (auto& block : stages_[s]) x = block.forward(x, mode);
    levels[s] = x;
  }
  return levels;
}

void Encoder::backward(std::array<Tensor, 4> grads, const RunMode& mode) {
  Tensor g;
  for (int s = 3; s >= 0; --s) {
    if (!grads[s].empty()) {
      if (g.empty()) {
        g = std::move(grads[s]);
      } else {
        g += grads[s];
      }
    }
    if (g.empty()) continue;
    for (auto it = stages_[s].rbegin(); it != stages_[s].rend(); ++it) g = it->backward(g, mode);
  }
  if (g.empty()) return;
  stem_.backward(pool_.backward(g), mode);
}

std::array<Shape4, 4> Encoder::count(const Shape4& in, Complexity& acc) const {
  std::array<Shape4, 4> levels;
  Shape4 s = pool_.count(stem_.count(in, acc));
  for (int i = 0; i < 4; ++i) {
    for (const auto& block : stages_[i]) s = block.count(s, acc);
    levels[i] = s;
  }
  return levels;
}

void Encoder::visit(const std::string& prefix, const Visitor& v) {
  stem_.visit(join(prefix, "stem"), v);
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].visit(join(prefix, "layer" + std::to_string(s + 1) + "." + std::to_string(b)), v);
    }
  }
}

// ---------------------------------------------------------------------------------------------
// FeatureFusion

FeatureFusion::FeatureFusion(const ModelConfig& cfg, Rng& rng)
    : channels_(cfg.fused_channels), use_attention_(cfg.use_attention) {
  if (channels_ <= 0) throw UsageError("fused_channels must be positive");
  const auto channels = cfg.stage_channels();
  for (int l = 0; l < 4; ++l) {
    for (int d = 0; d < cfg.refine_depth(); ++d) {
      refine_[l].emplace_back(channels[l], channels[l], 3, 1, rng, true);
    }
    project_[l] = ConvBnAct(channels[l], channels_, 1, 1, rng, true);
  }
  reduce_ = ConvBnAct(4 * channels_, channels_, 1, 1, rng, true);
  if (use_attention_) attention_ = ChannelAttention(channels_, cfg.attention_reduction, rng);
}

Tensor FeatureFusion::forward(const std::array<Tensor, 4>& levels, const RunMode& mode) {
  const int h = levels[0].h();
  const int w = levels[0].w();
  std::array<Tensor, 4> up;
  for (int l = 0; l < 4; ++l) {
    Tensor x = levels[l];
    for (auto& r : refine_[l]) x = r.forward(x, mode);
    Tensor p = project_[l].forward(x, mode);
    projected_shapes_[l] = p.shape();
    up[l] = (p.h() == h && p.w() == w) ? std::move(p) : resize_bilinear(p, h, w);
  }
  Tensor fused = reduce_.forward(concat_channels({&up[0], &up[1], &up[2], &up[3]}), mode);
  return use_attention_ ? attention_.forward(fused, mode) : fused;
}

std::array<Tensor, 4> FeatureFusion::backward(const Tensor& grad_out, const RunMode& mode) {
  Tensor g = use_attention_ ? attention_.backward(grad_out, mode) : grad_out;
  g = reduce_.backward(g, mode);
  std::array<Tensor, 4> grads;
  for (int l = 0; l < 4; ++l) {
    Tensor gl = slice_channels(g, l * channels_, channels_);
    if (!(gl.shape() == projected_shapes_[l])) gl = resize_bilinear_backward(gl, projected_shapes_[l]);
    gl = project_[l].backward(gl, mode);
    for (auto it = refine_[l].rbegin(); it != refine_[l].rend(); ++it) gl = it->backward(gl, mode);
    grads[l] = std::move(gl);
  }
  return grads;
}

Shape4 FeatureFusion::count(const std::array<Shape4, 4>& levels, Complexity& acc) const {
  const Shape4 base = levels[0];
  for (int l = 0; l < 4; ++l) {
    Shape4 s = levels[l];
    for (const auto& r : refine_[l]) s = r.count(s, acc);
    project_[l].count(s, acc);
  }
  Shape4 out = reduce_.count({base.n, 4 * channels_, base.h, base.w}, acc);
  if (use_attention_) attention_.count(out, acc);
  return out;
}

void FeatureFusion::visit(const std::string& prefix, const Visitor& v) {
  for (int l = 0; l < 4; ++l) {
    for (std::size_t d = 0; d < refine_[l].size(); ++d) {
      refine_[l][d].visit(join(prefix, "refine" + std::to_string(l + 1) + "." + std::to_string(d)), v);
    }
    project_[l].visit(join(prefix, "project" + std::to_string(l + 1)), v);
  }
  reduce_.visit(join(prefix, "reduce"), v);
  if (use_attention_) attention_.visit(join(prefix, "attention"), v);
}

// ---------------------------------------------------------------------------------------------
// FeatureTransform

FeatureTransform::FeatureTransform(int channels, bool enabled, Rng& rng) : enabled_(enabled) {
  if (enabled_) {
    global_ = DeformBlock(channels, rng);
    foreground_ = DeformBlock(channels, rng);
    background_ = DeformBlock(channels, rng);
  }
}

DtmOutput FeatureTransform::forward(const Tensor& fused, const Tensor& grid, const RunMode& mode) {
  grid_ = grid;
  DtmOutput out;
  if (!enabled_) {
    adjusted_ = fused;
    out.features = fused;
    out.foreground = split_foreground(fused, grid);
    out.background = split_background(fused, grid);
    return out;
  }
  adjusted_ = global_.forward(fused, mode);
  out.features = adjusted_;
  out.foreground = foreground_.forward(split_foreground(adjusted_, grid), mode);
  out.background = background_.forward(split_background(adjusted_, grid), mode);
  return out;
}

Tensor FeatureTransform::backward(const Tensor& grad_features, const Tensor& grad_foreground,
                                  const Tensor& grad_background, const RunMode& mode) {
  Tensor g = grad_features.empty() ? Tensor(adjusted_.shape()) : grad_features;
  if (!grad_foreground.empty()) {
    Tensor d = enabled_ ? foreground_.backward(grad_foreground, mode) : grad_foreground;
    g += split_foreground_backward(d, adjusted_, grid_);
  }
  if (!grad_background.empty()) {
    Tensor d = enabled_ ? background_.backward(grad_background, mode) : grad_background;
    g += split_background_backward(d, grid_);
  }
  return enabled_ ? global_.backward(g, mode) : g;
}

Shape4 FeatureTransform::count(const Shape4& in, Complexity& acc) const {
  if (!enabled_) return in;
  global_.count(in, acc);
  foreground_.count(in, acc);
  return background_.count(in, acc);
}

void FeatureTransform::visit(const std::string& prefix, const Visitor& v) {
  if (!enabled_) return;
  global_.visit(join(prefix, "global"), v);
  foreground_.visit(join(prefix, "foreground"), v);
  background_.visit(join(prefix, "background"), v);
}

// ---------------------------------------------------------------------------------------------
// BceNet

BceNet::BceNet(const ModelConfig& cfg)
    : config_(cfg), rng_(derive_seed(cfg.seed, {0xbce})), encoder_(config_, rng_),
      fusion_(config_, rng_), transform_(config_.fused_channels, config_.use_dtm, rng_),
      head_new_(config_.fused_channels, rng_), head_removed_(config_.fused_channels, rng_),
      head_existing_(config_.fused_channels, rng_), projector_(config_.fused_channels, rng_) {}

Tensor BceNet::encode_fuse(const Tensor& image, const RunMode& mode) {
  if (image.c() != 3 || image.h() <= 0 || image.w() <= 0 || image.h() % 32 != 0 ||
      image.w() % 32 != 0) {
    throw ShapeError("encode_fuse: input " + image.shape().str() +
                     " must be N x 3 x H x W with H, W positive multiples of 32");
  }
  image_shape_ = image.shape();
  return fusion_.forward(encoder_.forward(image, mode), mode);
}

ModelOutput BceNet::forward(const Tensor& image, std::span<const HistoricalMask> masks,
                            const RunMode& mode) {
  if (static_cast<int>(masks.size()) != image.n()) {
    throw ShapeError("forward: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(image.n()) + " images");
  }
  for (const auto& m : masks) {
    if (m.rows() != image.h() || m.cols() != image.w()) {
      throw ShapeError("forward: mask extent differs from image extent");
    }
  }
  ModelOutput out;
  out.fused = encode_fuse(image, mode);
  const Tensor grid = mask_to_grid(masks, out.fused.h(), out.fused.w());
  DtmOutput dtm = transform_.forward(out.fused, grid, mode);
  out.features = std::move(dtm.features);
  out.foreground = std::move(dtm.foreground);
  out.background = std::move(dtm.background);
  out.p_new = head_new_.forward(out.background, image.h(), image.w(), mode);
  out.p_removed = head_removed_.forward(out.foreground, image.h(), image.w(), mode);
  out.p_existing = head_existing_.forward(out.features, image.h(), image.w(), mode);
  return out;
}

ModelOutput BceNet::forward(std::span<const ImageTile> images,
                            std::span<const HistoricalMask> masks, const RunMode& mode) {
  return forward(image_batch(images), masks, mode);
}

void BceNet::backward(const OutputGrads& grads, const RunMode& mode) {
  auto add = [](Tensor& acc, Tensor g) {
    if (acc.empty()) {
      acc = std::move(g);
    } else {
      acc += g;
    }
  };
  Tensor g_features = grads.features;
  Tensor g_foreground = grads.foreground;
  Tensor g_background = grads.background;
  if (!grads.p_new.empty()) add(g_background, head_new_.backward(grads.p_new, mode));
  if (!grads.p_removed.empty()) add(g_foreground, head_removed_.backward(grads.p_removed, mode));
  if (!grads.p_existing.empty()) add(g_features, head_existing_.backward(grads.p_existing, mode));
  Tensor g_fused = transform_.backward(g_features, g_foreground, g_background, mode);
  encoder_.backward(fusion_.backward(g_fused, mode), mode);
}

std::vector<NamedParameter> BceNet::parameters() {
  std::vector<NamedParameter> out;
  Visitor v;
  v.param = [&](const std::string& name, Parameter& p) { out.push_back({name, &p}); };
  encoder_.visit("encoder", v);
  fusion_.visit("fusion", v);
  transform_.visit("dtm", v);
  head_new_.visit("head_new", v);
  head_removed_.visit("head_removed", v);
  head_existing_.visit("head_existing", v);
  projector_.visit("projector", v);
  return out;
}

std::vector<NamedBuffer> BceNet::buffers() {
  std::vector<NamedBuffer> out;
  Visitor v;
  v.param = [](const std::string&, Parameter&) {};
  v.buffer = [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); };
  encoder_.visit("encoder", v);
  fusion_.visit("fusion", v);
  transform_.visit("dtm", v);
  head_new_.visit("head_new", v);
  head_removed_.visit("head_removed", v);
  head_existing_.visit("head_existing", v);
  projector_.visit("projector", v);
  return out;
}

void BceNet::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

long long BceNet::parameter_count() {
  long long total = 0;
  for (auto& p : parameters()) total += static_cast<long long>(p.param->size());
  return total;
}

Complexity BceNet::count(int height, int width) const {
  Complexity acc;
  const Shape4 image{1, 3, height, width};
  const auto levels = encoder_.count(image, acc);
  const Shape4 fused = fusion_.count(levels, acc);
  const Shape4 adjusted = transform_.count(fused, acc);
  head_new_.count(adjusted, height, width, acc);
  head_removed_.count(adjusted, height, width, acc);
  head_existing_.count(adjusted, height, width, acc);
  return acc;
}

ComplexityReport count_complexity(BceNet& model, int height, int width) {
  return {model.count(height, width).flops(), model.parameter_count()};
}

}  // namespace bce::nn
