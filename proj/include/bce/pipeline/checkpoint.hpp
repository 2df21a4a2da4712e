#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bce/nn/model.hpp"

namespace bce::pipeline {

/// Training bookkeeping stored next to the weights.
struct TrainState {
  long long step = 0;
  int epoch = 0;  ///< completed epochs
  double best_f1 = -1.0;  ///< negative until the first evaluation
  long long best_step = -1;
};

nlohmann::json model_config_json(const nn::ModelConfig& cfg);
nn::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Binary archive: "BCECKPT" magic, format version, JSON header (config echo, training state,
/// tensor names and shapes), then raw little-endian doubles in header order.
/// `extra` is stored verbatim under "run" in the header.
void save_checkpoint(const std::filesystem::path& path, nn::BceNet& model, const TrainState& state,
                     const nlohmann::json& extra = nlohmann::json::object());

struct CheckpointTensor {
  std::string name;
  bool is_buffer = false;
  Shape4 shape;
  std::vector<double> values;
};

struct Checkpoint {
  nn::ModelConfig config;
  TrainState state;
  nlohmann::json run;
  std::vector<CheckpointTensor> tensors;
};

/// Throws DataError on unreadable, truncated or unversioned files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every tensor into `model`. Throws DataError when the stored config differs from the
/// model's, or when any name or shape disagrees.
void load_into(nn::BceNet& model, const Checkpoint& ckpt);

/// Builds a model from the stored config and loads the weights.
nn::BceNet load_model(const std::filesystem::path& path);

/// Copies the `encoder.*` tensors of `ckpt` into `model` (used for pretrained weights).
/// Throws DataError when names or shapes disagree.
void load_encoder(nn::BceNet& model, const Checkpoint& ckpt);

/// `$BCE_CACHE_DIR/<preset>_encoder.ckpt`; empty path when the variable is unset.
std::filesystem::path pretrained_path(nn::EncoderPreset preset);

/// Loads pretrained encoder weights when `model.config().pretrained` is set.
/// Throws DataError when the cache file is missing.
void apply_pretrained(nn::BceNet& model);

/// Lower-case hex SHA-256 of the file bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace bce::pipeline
