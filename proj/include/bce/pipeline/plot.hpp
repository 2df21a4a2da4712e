#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bce/pipeline/train.hpp"

namespace bce::pipeline {

struct ParsedLog {
  std::vector<LogEntry> entries;
  int skipped = 0;  ///< malformed or incomplete lines
};

ParsedLog parse_loss_log(const std::string& text);
ParsedLog read_loss_log(const std::filesystem::path& path);

struct PlotOutputs {
  std::filesystem::path csv;         ///< per-step table
  std::filesystem::path loss_svg;    ///< one curve per loss component
  std::filesystem::path eval_svg;    ///< eval F1 against step
  std::filesystem::path final_csv;   ///< last logged values
};

/// Writes `<out_dir>/{loss_table.csv, loss_curves.svg, eval_f1.svg, final_metrics.csv}`.
PlotOutputs plot_metrics(const ParsedLog& log, const std::filesystem::path& out_dir);

}  // namespace bce::pipeline
