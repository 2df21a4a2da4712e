#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "bce/data/dataops.hpp"
#include "bce/loss/losses.hpp"
#include "bce/nn/model.hpp"
#include "bce/pipeline/inference.hpp"
#include "bce/pipeline/train.hpp"

namespace bce::cli {

/// Everything a config file can set. Keys are flat and dotted, e.g. "train.lr".
struct Settings {
  std::uint64_t seed = 0;
  nn::ModelConfig model;
  pipeline::TrainConfig train;
  loss::LossConfig loss;
  bool use_rsg = false;
  data::RsgParams rsg;
  pipeline::InferenceConfig infer;
  pipeline::EvalMode eval_mode = pipeline::EvalMode::binary_change;
};

/// Every accepted key, in documentation order.
const std::vector<std::string>& setting_keys();

/// Throws UsageError on an unknown key or a value of the wrong type.
void apply_setting(Settings& s, const std::string& key, const nlohmann::json& value);
/// "key=value"; the value is read as JSON when it parses, as a plain string otherwise.
void apply_override(Settings& s, const std::string& assignment);
/// JSON object of flat keys; throws UsageError on unknown keys, DataError on unreadable files.
void apply_config_file(Settings& s, const std::filesystem::path& path);
/// Propagates `seed` into the model, trainer and change simulator and validates all sections.
void finalize(Settings& s);

nlohmann::json to_json(const Settings& s);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bce::cli
