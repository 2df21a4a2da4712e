#include "bce/loss/losses.hpp"

#include <algorithm>
#include <cmath>

namespace bce::loss {

void LossConfig::validate() const {
  if (alpha < 0 || beta < 0) throw UsageError("loss weights must be non-negative");
  if (alpha + beta <= 0) throw UsageError("alpha + beta must be positive");
  if (!(dice_eps > 0)) throw UsageError("dice_eps must be positive");
}

double bce_loss(const Tensor& prob, const Tensor& target) {
  require_same_shape(prob, target, "bce_loss");
  double sum = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(prob[i], kProbClamp, 1 - kProbClamp);
    sum -= target[i] * std::log(p) + (1 - target[i]) * std::log(1 - p);
  }
  return prob.size() ? sum / static_cast<double>(prob.size()) : 0.0;
}

LossValue bce_loss_grad(const Tensor& prob, const Tensor& target) {
  LossValue out{bce_loss(prob, target), Tensor(prob.shape())};
  const double inv_count = prob.size() ? 1.0 / static_cast<double>(prob.size()) : 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob[i];
    if (p < kProbClamp || p > 1 - kProbClamp) continue;  // clamp is flat there
    out.grad[i] = inv_count * (-target[i] / p + (1 - target[i]) / (1 - p));
  }
  return out;
}

namespace {

struct DiceSums {
  double pl = 0;
  double p = 0;
  double l = 0;
};

DiceSums dice_sums(const Tensor& prob, const Tensor& target) {
  DiceSums s;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    s.pl += prob[i] * target[i];
    s.p += prob[i];
    s.l += target[i];
  }
  return s;
}

}  // namespace

double dice_loss(const Tensor& prob, const Tensor& target, double eps) {
  require_same_shape(prob, target, "dice_loss");
  const DiceSums s = dice_sums(prob, target);
  return 1.0 - (2 * s.pl + eps) / (s.p + s.l + eps);
}

LossValue dice_loss_grad(const Tensor& prob, const Tensor& target, double eps) {
  require_same_shape(prob, target, "dice_loss");
  const DiceSums s = dice_sums(prob, target);
  const double num = 2 * s.pl + eps;
  const double den = s.p + s.l + eps;
  LossValue out{1.0 - num / den, Tensor(prob.shape())};
  for (std::size_t i = 0; i < prob.size(); ++i) {
    out.grad[i] = -(2 * target[i] * den - num) / (den * den);
  }
  return out;
}

LossValue joint_loss(const Tensor& prob, const Tensor& target, const LossConfig& cfg) {
  LossValue out{0.0, Tensor(prob.shape())};
  if (cfg.alpha != 0) {
    LossValue b = bce_loss_grad(prob, target);
    out.value += cfg.alpha * b.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += cfg.alpha * b.grad[i];
  }
  if (cfg.beta != 0) {
    LossValue d = dice_loss_grad(prob, target, cfg.dice_eps);
    out.value += cfg.beta * d.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += cfg.beta * d.grad[i];
  }
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0 || bb <= 0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

BoundingBox feature_box(const BoundingBox& box, int stride, int grid_h, int grid_w) {
  auto clamp_row = [&](int v) { return std::clamp(v, 0, grid_h - 1); };
  auto clamp_col = [&](int v) { return std::clamp(v, 0, grid_w - 1); };
  BoundingBox out{clamp_row(box.row_min / stride), clamp_col(box.col_min / stride),
                  clamp_row(box.row_max / stride), clamp_col(box.col_max / stride)};
  out.row_max = std::max(out.row_max, out.row_min);
  out.col_max = std::max(out.col_max, out.col_min);
  return out;
}

std::size_t BatchInstances::new_count() const {
  std::size_t n = 0;
  for (const auto& v : new_buildings) n += v.size();
  return n;
}

std::size_t BatchInstances::removed_count() const {
  std::size_t n = 0;
  for (const auto& v : removed_buildings) n += v.size();
  return n;
}

namespace {

std::vector<double> gather(const Tensor& map, int n, const BoundingBox& b) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(b.height()) * b.width());
  for (int r = b.row_min; r <= b.row_max; ++r) {
    for (int c = b.col_min; c <= b.col_max; ++c) v.push_back(map.at(n, 0, r, c));
  }
  return v;
}

void scatter_add(Tensor& grad, int n, const BoundingBox& b, const std::vector<double>& g,
                 double scale) {
  std::size_t i = 0;
  for (int r = b.row_min; r <= b.row_max; ++r) {
    for (int c = b.col_min; c <= b.col_max; ++c) grad.at(n, 0, r, c) += scale * g[i++];
  }
}

// dD/da and dD/db for D = cos(a, b); both zero when a norm vanishes.
void cosine_grad(const std::vector<double>& a, const std::vector<double>& b, double& d,
                 std::vector<double>& da, std::vector<double>& db) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  da.assign(a.size(), 0.0);
  db.assign(b.size(), 0.0);
  if (aa <= 0 || bb <= 0) {
    d = 0.0;
    return;
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  d = ab / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] = b[i] / (na * nb) - d * a[i] / aa;
    db[i] = a[i] / (na * nb) - d * b[i] / bb;
  }
}

}  // namespace

ContrastiveValue contrastive_on_projections(const Tensor& existing, const Tensor& foreground,
                                            const Tensor& background,
                                            const BatchInstances& instances, int stride) {
  require_same_shape(existing, foreground, "contrastive_loss");
  require_same_shape(existing, background, "contrastive_loss");
  if (existing.c() != 1) throw ShapeError("contrastive_loss: projected maps must be one-channel");
  ContrastiveValue out{0.0, Tensor(existing.shape()), Tensor(existing.shape()),
                       Tensor(existing.shape())};
  const int batch = existing.n();
  const std::size_t n_new = instances.new_count();
  const std::size_t n_removed = instances.removed_count();
  std::vector<double> da, db;
  double d = 0;

  if (n_new > 0) {
    const double w = 1.0 / (2.0 * static_cast<double>(n_new));
    for (int n = 0; n < batch && n < static_cast<int>(instances.new_buildings.size()); ++n) {
      for (const auto& inst : instances.new_buildings[n]) {
        const BoundingBox b = feature_box(inst.bbox, stride, existing.h(), existing.w());
        const auto bg = gather(background, n, b);
        const auto ex = gather(existing, n, b);
        cosine_grad(bg, ex, d, da, db);
        out.value += w * (1.0 - d);
        scatter_add(out.grad_background, n, b, da, -w);
        scatter_add(out.grad_existing, n, b, db, -w);
      }
    }
  }
  if (n_removed > 0) {
    const double w = 1.0 / (2.0 * static_cast<double>(n_removed));
    for (int n = 0; n < batch && n < static_cast<int>(instances.removed_buildings.size()); ++n) {
      for (const auto& inst : instances.removed_buildings[n]) {
        const BoundingBox b = feature_box(inst.bbox, stride, existing.h(), existing.w());
        const auto ex = gather(existing, n, b);
        const auto fg = gather(foreground, n, b);
        cosine_grad(ex, fg, d, da, db);
        out.value += w * (1.0 + d);
        scatter_add(out.grad_existing, n, b, da, w);
        scatter_add(out.grad_foreground, n, b, db, w);
      }
    }
  }
  return out;
}

ContrastiveResult contrastive_loss(const Tensor& features, const Tensor& foreground,
                                   const Tensor& background, const BatchInstances& instances,
                                   nn::Projector& projector, const nn::RunMode& mode, int stride,
                                   bool backward) {
  ContrastiveResult out;
  if (instances.new_count() == 0 && instances.removed_count() == 0) return out;
  nn::Projector::Cache ce, cf, cb;
  const Tensor pe = projector.forward(features, mode, ce);
  const Tensor pf = projector.forward(foreground, mode, cf);
  const Tensor pb = projector.forward(background, mode, cb);
  ContrastiveValue v = contrastive_on_projections(pe, pf, pb, instances, stride);
  out.value = v.value;
  if (backward) {
    out.grad_features = projector.backward(v.grad_existing, mode, ce);
    out.grad_foreground = projector.backward(v.grad_foreground, mode, cf);
    out.grad_background = projector.backward(v.grad_background, mode, cb);
  }
  return out;
}

LossReport total_loss(double l_n, double l_r, double l_e, double l_c) {
  const std::pair<const char*, double> parts[] = {{"l_n", l_n}, {"l_r", l_r}, {"l_e", l_e}, {"l_c", l_c}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss component ") + name);
  }
  return {l_n, l_r, l_e, l_c, l_n + l_r + l_e + l_c};
}

}  // namespace bce::loss
