#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "bce/data/dataops.hpp"
#include "bce/loss/losses.hpp"
#include "bce/nn/model.hpp"
#include "bce/pipeline/checkpoint.hpp"
#include "bce/pipeline/inference.hpp"

namespace bce::pipeline {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int max_epochs = 100;
  long long max_steps = 0;  ///< 0 = no cap beyond max_epochs
  int batch_size = 1;
  std::uint64_t seed = 0;
  int eval_every = 0;       ///< steps between evaluations; 0 = end of every epoch
  bool augment = true;
  bool deterministic = false;
  int workers = 1;          ///< threads preparing (simulating/augmenting) the samples of a batch
  kernels::Exec exec = kernels::Exec::parallel;

  /// Throws UsageError on lr <= 0, max_epochs < 1, batch_size < 1, momentum outside [0, 1),
  /// negative max_steps/eval_every, or workers < 1. lr = 0 is accepted only through `allow_zero_lr`.
  void validate(bool allow_zero_lr = false) const;
};

/// One optimisation step: zero grads, forward, losses, backward, SGD with momentum
/// (v = mu v + g; w -= lr v). Returns the loss report of the step.
/// Throws NumericalError (naming the component) when a loss is not finite; parameters are left
/// untouched in that case.
loss::LossReport train_step(nn::BceNet& model, const std::vector<data::Sample>& batch,
                            const loss::LossConfig& loss_cfg, const TrainConfig& cfg);

/// Loss report of one batch without touching parameters (training-mode statistics off).
loss::LossReport batch_loss(nn::BceNet& model, const std::vector<data::Sample>& batch,
                            const loss::LossConfig& loss_cfg, const nn::RunMode& mode,
                            bool backward);

/// Summed confusion over `samples` using eval-mode inference.
EvalCounts evaluate_samples(nn::BceNet& model, const std::vector<data::Sample>& samples,
                            const InferenceConfig& cfg, kernels::Exec exec);

struct LogEntry {
  long long step = 0;
  loss::LossReport loss;
  std::optional<double> eval_f1;
};

/// One JSON object per line: {step, l_n, l_r, l_e, l_c, total[, eval_f1]}.
std::string to_json_line(const LogEntry& e);

struct TrainOutputs {
  std::filesystem::path dir;  ///< empty: nothing is written
  std::filesystem::path log_path() const { return dir / "loss_log.jsonl"; }
  std::filesystem::path best_path() const { return dir / "best.ckpt"; }
  std::filesystem::path last_path() const { return dir / "last.ckpt"; }
};

struct TrainResult {
  TrainState state;
  std::vector<LogEntry> log;
};

/// Full loop. Each step draws its samples from a seeded per-epoch shuffle, applies the optional
/// change simulation and augmentation, and performs train_step. The best eval change-F1
/// checkpoint and the last checkpoint are written to `out` when it has a directory.
TrainResult train(nn::BceNet& model, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set, const TrainConfig& cfg,
                  const loss::LossConfig& loss_cfg, const std::optional<data::RsgParams>& rsg,
                  const TrainOutputs& out = {},
                  const std::function<void(const LogEntry&)>& on_step = {});

}  // namespace bce::pipeline
