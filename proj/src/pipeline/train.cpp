#include "bce/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bce/core/instances.hpp"
#include "bce/core/rng.hpp"

namespace bce::pipeline {

void TrainConfig::validate(bool allow_zero_lr) const {
  if (!(lr > 0 || (allow_zero_lr && lr == 0))) throw UsageError("train.lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("train.momentum must lie in [0, 1)");
  if (max_epochs < 1) throw UsageError("train.max_epochs must be at least 1");
  if (max_steps < 0) throw UsageError("train.max_steps must be non-negative");
  if (batch_size < 1) throw UsageError("train.batch_size must be at least 1");
  if (eval_every < 0) throw UsageError("train.eval_every must be non-negative");
  if (workers < 1) throw UsageError("workers must be at least 1");
}

namespace {

struct BatchTargets {
  Tensor new_buildings;
  Tensor removed;
  Tensor existing;
  loss::BatchInstances instances;
};

BatchTargets batch_targets(const std::vector<data::Sample>& batch) {
  const int n = static_cast<int>(batch.size());
  const int h = batch.front().label.rows();
  const int w = batch.front().label.cols();
  BatchTargets t{Tensor(n, 1, h, w), Tensor(n, 1, h, w), Tensor(n, 1, h, w), {}};
  for (int i = 0; i < n; ++i) {
    const auto planes = data::derive_targets(batch[i].label);
    double* pn = t.new_buildings.plane(i, 0);
    double* pr = t.removed.plane(i, 0);
    double* pe = t.existing.plane(i, 0);
    for (std::size_t k = 0; k < planes.historical.size(); ++k) {
      pn[k] = planes.new_buildings.data()[k];
      pr[k] = planes.removed_buildings.data()[k];
      pe[k] = planes.existing_buildings.data()[k];
    }
    t.instances.new_buildings.push_back(extract_instances(batch[i].label, 2));
    t.instances.removed_buildings.push_back(extract_instances(batch[i].label, 3));
  }
  return t;
}

void require_uniform(const std::vector<data::Sample>& batch) {
  if (batch.empty()) throw UsageError("empty training batch");
  for (const auto& s : batch) {
    require_same_extent(s.image.pixels(), batch.front().image.pixels(), "training batch");
  }
}

void sgd_update(nn::BceNet& model, double lr, double momentum) {
  for (auto& np : model.parameters()) {
    nn::Parameter& p = *np.param;
    if (p.grad.shape() != p.value.shape()) continue;
    if (p.velocity.shape() != p.value.shape()) p.velocity = Tensor(p.value.shape());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.velocity[i] = momentum * p.velocity[i] + p.grad[i];
      p.value[i] -= lr * p.velocity[i];
    }
  }
}

}  // namespace

loss::LossReport batch_loss(nn::BceNet& model, const std::vector<data::Sample>& batch,
                            const loss::LossConfig& loss_cfg, const nn::RunMode& mode,
                            bool backward) {
  require_uniform(batch);
  loss_cfg.validate();
  std::vector<ImageTile> images;
  std::vector<HistoricalMask> masks;
  for (const auto& s : batch) {
    images.push_back(s.image);
    masks.push_back(s.mask);
  }
  const BatchTargets t = batch_targets(batch);
  const nn::ModelOutput out = model.forward(images, masks, mode);
  loss::LossValue ln = loss::joint_loss(out.p_new, t.new_buildings, loss_cfg);
  loss::LossValue lr = loss::joint_loss(out.p_removed, t.removed, loss_cfg);
  loss::LossValue le = loss::joint_loss(out.p_existing, t.existing, loss_cfg);
  loss::ContrastiveResult lc = loss::contrastive_loss(out.features, out.foreground, out.background,
                                                      t.instances, model.projector(), mode, 4, backward);
  const loss::LossReport report = loss::total_loss(ln.value, lr.value, le.value, lc.value);
  if (backward) {
    model.backward({std::move(ln.grad), std::move(lr.grad), std::move(le.grad),
                    std::move(lc.grad_features), std::move(lc.grad_foreground),
                    std::move(lc.grad_background)},
                   mode);
  }
  return report;
}

loss::LossReport train_step(nn::BceNet& model, const std::vector<data::Sample>& batch,
                            const loss::LossConfig& loss_cfg, const TrainConfig& cfg) {
  model.zero_grad();
  const loss::LossReport report = batch_loss(model, batch, loss_cfg, {cfg.exec, true}, true);
  sgd_update(model, cfg.lr, cfg.momentum);
  return report;
}

EvalCounts evaluate_samples(nn::BceNet& model, const std::vector<data::Sample>& samples,
                            const InferenceConfig& cfg, kernels::Exec exec) {
  EvalCounts counts;
  for (const auto& s : samples) counts += count_tile(infer(model, s.image, s.mask, cfg, exec), s.label);
  return counts;
}

std::string to_json_line(const LogEntry& e) {
  nlohmann::json j{{"step", e.step},      {"l_n", e.loss.l_n}, {"l_r", e.loss.l_r},
                   {"l_e", e.loss.l_e},   {"l_c", e.loss.l_c}, {"total", e.loss.total}};
  if (e.eval_f1) j["eval_f1"] = *e.eval_f1;
  return j.dump();
}

namespace {

nlohmann::json run_json(const TrainConfig& cfg, const loss::LossConfig& loss_cfg,
                        const std::optional<data::RsgParams>& rsg) {
  nlohmann::json j{{"train",
                    {{"lr", cfg.lr},
                     {"momentum", cfg.momentum},
                     {"max_epochs", cfg.max_epochs},
                     {"max_steps", cfg.max_steps},
                     {"batch_size", cfg.batch_size},
                     {"seed", cfg.seed},
                     {"eval_every", cfg.eval_every},
                     {"augment", cfg.augment}}},
                   {"loss", {{"alpha", loss_cfg.alpha}, {"beta", loss_cfg.beta}, {"dice_eps", loss_cfg.dice_eps}}}};
  if (rsg) {
    j["rsg"] = {{"n_removed", {rsg->n_removed_range.first, rsg->n_removed_range.second}},
                {"area_px", {rsg->area_range_px.first, rsg->area_range_px.second}},
                {"aspect", {rsg->aspect_range.first, rsg->aspect_range.second}},
                {"rotation_deg", {rsg->rotation_range_deg.first, rsg->rotation_range_deg.second}},
                {"flip_to_new_fraction", rsg->flip_to_new_fraction},
                {"seed", rsg->seed}};
  }
  return j;
}

}  // namespace

TrainResult train(nn::BceNet& model, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set, const TrainConfig& cfg,
                  const loss::LossConfig& loss_cfg, const std::optional<data::RsgParams>& rsg,
                  const TrainOutputs& out, const std::function<void(const LogEntry&)>& on_step) {
  cfg.validate(true);
  loss_cfg.validate();
  if (rsg) rsg->validate();
  if (train_set.empty()) throw DataError("training split is empty");

  std::ofstream log_file;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir);
    log_file.open(out.log_path(), std::ios::trunc);
    if (!log_file) throw DataError("cannot write '" + out.log_path().string() + "'");
  }
  const nlohmann::json run = run_json(cfg, loss_cfg, rsg);
  const InferenceConfig infer_cfg;

  TrainResult result;
  TrainState& state = result.state;
  long long last_eval_step = -1;

  auto run_eval = [&](LogEntry& entry) {
    if (eval_set.empty()) return;
    const double f1 = metrics_from(evaluate_samples(model, eval_set, infer_cfg, cfg.exec).change).f1;
    entry.eval_f1 = f1;
    last_eval_step = state.step;
    if (f1 > state.best_f1) {
      state.best_f1 = f1;
      state.best_step = state.step;
      if (!out.dir.empty()) save_checkpoint(out.best_path(), model, state, run);
    }
  };
  auto emit = [&](const LogEntry& entry) {
    result.log.push_back(entry);
    if (log_file) log_file << to_json_line(entry) << "\n" << std::flush;
    if (on_step) on_step(entry);
  };

  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  bool done = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !done; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, {0x5348, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<long long>(i) - 1))]);
    }
    for (std::size_t start = 0; start < n && !done; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      std::vector<data::Sample> samples(count);
      // Every sample has its own seed, so the pool size never changes the result.
      std::exception_ptr failure;
#pragma omp parallel for num_threads(cfg.workers) schedule(static)
      for (std::size_t k = 0; k < count; ++k) {
        try {
          const std::size_t idx = order[start + k];
          data::Sample s = train_set[idx];
          const auto tag = static_cast<std::uint64_t>(idx);
          if (rsg) {
            data::RsgParams p = *rsg;
            p.seed = derive_seed(cfg.seed, {0x5253, rsg->seed, static_cast<std::uint64_t>(epoch), tag});
            s = data::simulate_changes(s, p);
          }
          if (cfg.augment) {
            s = data::augment(s, derive_seed(cfg.seed, {0x4155, static_cast<std::uint64_t>(epoch), tag}));
          }
          samples[k] = std::move(s);
        } catch (...) {
#pragma omp critical(bce_train_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);
      LogEntry entry;
      try {
        entry.loss = train_step(model, samples, loss_cfg, cfg);
      } catch (const NumericalError& e) {
        throw NumericalError("step " + std::to_string(state.step + 1) + " (epoch " +
                             std::to_string(epoch) + ", first tile '" + samples.front().tile_id() +
                             "'): " + e.what());
      }
      entry.step = ++state.step;
      const bool epoch_end = start + count >= n;
      if (epoch_end) state.epoch = epoch + 1;
      done = cfg.max_steps > 0 && state.step >= cfg.max_steps;
      const bool due = cfg.eval_every > 0 ? state.step % cfg.eval_every == 0 : epoch_end;
      const bool last = done || (epoch_end && epoch + 1 == cfg.max_epochs);
      if (due || (last && last_eval_step != state.step)) run_eval(entry);
      emit(entry);
    }
  }
  if (!out.dir.empty()) save_checkpoint(out.last_path(), model, state, run);
  return result;
}

}  // namespace bce::pipeline
