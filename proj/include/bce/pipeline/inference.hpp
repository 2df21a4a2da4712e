#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bce/core/raster.hpp"
#include "bce/core/tensor.hpp"
#include "bce/nn/model.hpp"

namespace bce::pipeline {

struct InferenceConfig {
  double theta = 0.5;          ///< removed-instance threshold on mean P_R (strict >)
  double new_threshold = 0.5;  ///< P_N binarisation threshold (strict >)

  void validate() const;
  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct ChangeResult {
  ByteRaster new_mask;                    ///< binary, disjoint from M
  std::vector<int> removed_instance_ids;  ///< ids from extract_instances(M), ascending
  ChangeLabel combined_change;            ///< values in {0, 2, 3}
};

/// Ids of the historical instances whose mean P_R is strictly above theta.
/// `p_removed` is a 1 x 1 x H x W probability map.
std::vector<int> validate_removed(const Tensor& p_removed, const HistoricalMask& mask,
                                  const InferenceConfig& cfg);

/// new_mask = (P_N > new_threshold) and not M; whole removed instances are written as 3.
ChangeResult assemble_change(const Tensor& p_new, const Tensor& p_removed,
                             const HistoricalMask& mask, const InferenceConfig& cfg);

/// Eval-mode forward of one tile followed by assemble_change. P_E is not used.
ChangeResult infer(nn::BceNet& model, const ImageTile& image, const HistoricalMask& mask,
                   const InferenceConfig& cfg, kernels::Exec exec = kernels::Exec::parallel);

/// Category PNG plus `<stem>.json` listing the removed instance ids.
void write_change_result(const ChangeResult& result, const std::filesystem::path& png_path);

// ---------------------------------------------------------------------------------------------
// Metrics

struct Confusion {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct Metrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Ratios with the empty conventions: precision (recall) is 1 when TP+FP (TP+FN) is 0 and
/// there are no misses (false alarms) either, else 0; IoU is 1 on empty-empty; F1 = 2PR/(P+R)
/// or 0 when P+R = 0.
Metrics metrics_from(const Confusion& c);

enum class EvalMode { binary_change, per_category };
std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

/// Pixel counts for `pred` against `truth` treating `positive(category)` as the positive class.
Confusion confusion(const ChangeLabel& pred, const ChangeLabel& truth, bool (*positive)(Category));
bool is_change(Category c);
bool is_new(Category c);
bool is_removed(Category c);

struct EvalCounts {
  Confusion change;   ///< categories {2, 3} against the rest
  Confusion added;    ///< category 2
  Confusion removed;  ///< category 3

  EvalCounts& operator+=(const EvalCounts& o) {
    change += o.change;
    added += o.added;
    removed += o.removed;
    return *this;
  }
};

EvalCounts count_tile(const ChangeResult& pred, const ChangeLabel& truth);

struct Evaluation {
  EvalMode mode = EvalMode::binary_change;
  Metrics change;   ///< binary_change
  Metrics added;    ///< per_category, category 2
  Metrics removed;  ///< per_category, category 3
};

Evaluation evaluate(const ChangeResult& pred, const ChangeLabel& truth, EvalMode mode);
/// Micro-averaged over tiles (counts are summed before the ratios are taken).
Evaluation evaluate(const EvalCounts& counts, EvalMode mode);

}  // namespace bce::pipeline
