#pragma once

#include <string>
#include <vector>

#include "bce/core/instances.hpp"
#include "bce/core/tensor.hpp"
#include "bce/nn/layers.hpp"

namespace bce::loss {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any logarithm.
inline constexpr double kProbClamp = 1e-7;

struct LossConfig {
  double alpha = 1.0;     ///< weight of the cross-entropy term
  double beta = 1.0;      ///< weight of the Dice term
  double dice_eps = 1.0;  ///< Dice smoothing

  /// Throws UsageError when weights are negative, both zero, or eps is not positive.
  void validate() const;
};

/// A scalar loss together with its gradient with respect to the prediction.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// Mean over pixels of -[L ln P + (1 - L) ln(1 - P)] with clamped P.
double bce_loss(const Tensor& prob, const Tensor& target);
LossValue bce_loss_grad(const Tensor& prob, const Tensor& target);

/// 1 - (2 sum(PL) + eps) / (sum(P) + sum(L) + eps), summed over the whole tensor.
double dice_loss(const Tensor& prob, const Tensor& target, double eps = 1.0);
LossValue dice_loss_grad(const Tensor& prob, const Tensor& target, double eps = 1.0);

/// alpha * bce + beta * dice.
LossValue joint_loss(const Tensor& prob, const Tensor& target, const LossConfig& cfg);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Label-resolution box mapped onto a feature grid of the given stride and extent
/// (floor division, clamped to the grid, at least 1 x 1).
BoundingBox feature_box(const BoundingBox& box, int stride, int grid_h, int grid_w);

/// Per-sample instance lists for one batch.
struct BatchInstances {
  std::vector<std::vector<BuildingInstance>> new_buildings;
  std::vector<std::vector<BuildingInstance>> removed_buildings;

  std::size_t new_count() const;
  std::size_t removed_count() const;
};

struct ContrastiveValue {
  double value = 0.0;
  /// Gradients with respect to the three one-channel projected maps.
  Tensor grad_existing;
  Tensor grad_foreground;
  Tensor grad_background;
};

/// Instance contrastive objective on already projected one-channel maps (N x 1 x h x w):
///   1/(2N) sum_n (1 - D(BG^n, E^n)) + 1/(2R) sum_r (1 + D(E^r, FG^r))
/// An empty instance list contributes 0 for its term.
ContrastiveValue contrastive_on_projections(const Tensor& existing, const Tensor& foreground,
                                            const Tensor& background,
                                            const BatchInstances& instances, int stride);

struct ContrastiveResult {
  double value = 0.0;
  Tensor grad_features;
  Tensor grad_foreground;
  Tensor grad_background;
};

/// Projects F', F_FG', F_BG' through the shared projector and evaluates the instance objective.
/// Gradients are with respect to the unprojected feature maps and accumulate projector gradients
/// when `backward` is set.
ContrastiveResult contrastive_loss(const Tensor& features, const Tensor& foreground,
                                   const Tensor& background, const BatchInstances& instances,
                                   nn::Projector& projector, const nn::RunMode& mode,
                                   int stride = 4, bool backward = true);

struct LossReport {
  double l_n = 0.0;
  double l_r = 0.0;
  double l_e = 0.0;
  double l_c = 0.0;
  double total = 0.0;
};

/// Unweighted sum of the four components. Throws NumericalError naming a non-finite component.
LossReport total_loss(double l_n, double l_r, double l_e, double l_c);

}  // namespace bce::loss
