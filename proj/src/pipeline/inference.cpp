#include "bce/pipeline/inference.hpp"

#include <fstream>

#include <json.hpp>

#include "bce/core/instances.hpp"
#include "bce/core/png_io.hpp"

namespace bce::pipeline {

void InferenceConfig::validate() const {
  if (!(theta > 0 && theta < 1)) throw UsageError("infer.theta must lie in (0, 1)");
  if (!(new_threshold > 0 && new_threshold < 1)) {
    throw UsageError("infer.new_threshold must lie in (0, 1)");
  }
}

namespace {

void require_map(const Tensor& p, const HistoricalMask& mask, const char* what) {
  if (p.n() != 1 || p.c() != 1 || p.h() != mask.rows() || p.w() != mask.cols()) {
    throw ShapeError(std::string(what) + ": expected 1x1x" + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + ", got " + p.shape().str());
  }
}

}  // namespace

std::vector<int> validate_removed(const Tensor& p_removed, const HistoricalMask& mask,
                                  const InferenceConfig& cfg) {
  require_map(p_removed, mask, "validate_removed");
  std::vector<int> ids;
  for (const auto& inst : extract_instances(mask)) {
    double sum = 0;
    for (const auto& px : inst.pixels) sum += p_removed.at(0, 0, px.row, px.col);
    if (sum / static_cast<double>(inst.pixels.size()) > cfg.theta) ids.push_back(inst.instance_id);
  }
  return ids;
}

ChangeResult assemble_change(const Tensor& p_new, const Tensor& p_removed,
                             const HistoricalMask& mask, const InferenceConfig& cfg) {
  require_map(p_new, mask, "assemble_change");
  require_map(p_removed, mask, "assemble_change");
  ChangeResult out{ByteRaster(mask.rows(), mask.cols()), {}, ChangeLabel(mask.rows(), mask.cols())};
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c) && p_new.at(0, 0, r, c) > cfg.new_threshold) {
        out.new_mask(r, c) = 1;
        out.combined_change.set(r, c, Category::new_building);
      }
    }
  }
  const auto instances = extract_instances(mask);
  for (const auto& inst : instances) {
    double sum = 0;
    for (const auto& px : inst.pixels) sum += p_removed.at(0, 0, px.row, px.col);
    if (sum / static_cast<double>(inst.pixels.size()) <= cfg.theta) continue;
    out.removed_instance_ids.push_back(inst.instance_id);
    for (const auto& px : inst.pixels) out.combined_change.set(px.row, px.col, Category::removed);
  }
  return out;
}

ChangeResult infer(nn::BceNet& model, const ImageTile& image, const HistoricalMask& mask,
                   const InferenceConfig& cfg, kernels::Exec exec) {
  cfg.validate();
  require_same_extent(image.pixels(), mask.values(), "infer image/mask");
  const nn::RunMode mode{exec, false};
  const nn::ModelOutput out =
      model.forward(std::span<const ImageTile>(&image, 1), std::span<const HistoricalMask>(&mask, 1), mode);
  return assemble_change(out.p_new, out.p_removed, mask, cfg);
}

void write_change_result(const ChangeResult& result, const std::filesystem::path& png_path) {
  if (png_path.has_parent_path()) std::filesystem::create_directories(png_path.parent_path());
  write_png(png_path, result.combined_change.categories());
  auto sidecar = png_path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  if (!out) throw DataError("cannot write '" + sidecar.string() + "'");
  out << nlohmann::json{{"removed_instance_ids", result.removed_instance_ids}}.dump() << "\n";
}

// ---------------------------------------------------------------------------------------------

Metrics metrics_from(const Confusion& c) {
  Metrics m;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) {
    m.precision = tp / static_cast<double>(c.tp + c.fp);
  } else {
    m.precision = c.fn == 0 ? 1.0 : 0.0;
  }
  if (c.tp + c.fn > 0) {
    m.recall = tp / static_cast<double>(c.tp + c.fn);
  } else {
    m.recall = c.fp == 0 ? 1.0 : 0.0;
  }
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  const long long denom = c.tp + c.fp + c.fn;
  m.iou = denom > 0 ? tp / static_cast<double>(denom) : 1.0;
  return m;
}

std::string to_string(EvalMode m) {
  return m == EvalMode::binary_change ? "binary_change" : "per_category";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "binary_change") return EvalMode::binary_change;
  if (s == "per_category") return EvalMode::per_category;
  throw UsageError("unknown eval mode '" + s + "' (expected binary_change or per_category)");
}

bool is_change(Category c) { return c == Category::new_building || c == Category::removed; }
bool is_new(Category c) { return c == Category::new_building; }
bool is_removed(Category c) { return c == Category::removed; }

Confusion confusion(const ChangeLabel& pred, const ChangeLabel& truth,
                    bool (*positive)(Category)) {
  require_same_extent(pred.categories(), truth.categories(), "evaluate");
  Confusion c;
  const auto p = pred.categories().data();
  const auto t = truth.categories().data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pp = positive(static_cast<Category>(p[i]));
    const bool tt = positive(static_cast<Category>(t[i]));
    if (pp && tt) {
      ++c.tp;
    } else if (pp) {
      ++c.fp;
    } else if (tt) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

EvalCounts count_tile(const ChangeResult& pred, const ChangeLabel& truth) {
  return {confusion(pred.combined_change, truth, is_change),
          confusion(pred.combined_change, truth, is_new),
          confusion(pred.combined_change, truth, is_removed)};
}

Evaluation evaluate(const EvalCounts& counts, EvalMode mode) {
  Evaluation e;
  e.mode = mode;
  e.change = metrics_from(counts.change);
  e.added = metrics_from(counts.added);
  e.removed = metrics_from(counts.removed);
  return e;
}

Evaluation evaluate(const ChangeResult& pred, const ChangeLabel& truth, EvalMode mode) {
  return evaluate(count_tile(pred, truth), mode);
}

}  // namespace bce::pipeline
