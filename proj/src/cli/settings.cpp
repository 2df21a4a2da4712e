#include <fstream>
#include <functional>
#include <map>

#include "bce/cli/cli.hpp"

namespace bce::cli {

namespace {

using Json = nlohmann::json;
using Setter = std::function<void(Settings&, const Json&)>;
using Getter = std::function<Json(const Settings&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

template <typename T>
T as(const Json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw UsageError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw UsageError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw UsageError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw UsageError("");
    } else {
      if (!v.is_string()) throw UsageError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw UsageError("setting '" + key + "': unexpected value " + v.dump());
  }
}

#define BCE_FIELD(KEY, TYPE, MEMBER) \
  Field{KEY, [](Settings& s, const Json& v) { s.MEMBER = as<TYPE>(v, KEY); }, \
        [](const Settings& s) { return Json(s.MEMBER); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      BCE_FIELD("seed", std::uint64_t, seed),
      Field{"model.preset",
            [](Settings& s, const Json& v) { s.model.preset = nn::parse_preset(as<std::string>(v, "model.preset")); },
            [](const Settings& s) { return Json(nn::to_string(s.model.preset)); }},
      BCE_FIELD("model.pretrained", bool, model.pretrained),
      BCE_FIELD("model.fused_channels", int, model.fused_channels),
      BCE_FIELD("model.use_attention", bool, model.use_attention),
      BCE_FIELD("model.use_dtm", bool, model.use_dtm),
      BCE_FIELD("model.attention_reduction", int, model.attention_reduction),
      BCE_FIELD("train.lr", double, train.lr),
      BCE_FIELD("train.momentum", double, train.momentum),
      BCE_FIELD("train.max_epochs", int, train.max_epochs),
      BCE_FIELD("train.max_steps", long long, train.max_steps),
      BCE_FIELD("train.batch_size", int, train.batch_size),
      BCE_FIELD("train.eval_every", int, train.eval_every),
      BCE_FIELD("train.augment", bool, train.augment),
      BCE_FIELD("train.rsg", bool, use_rsg),
      BCE_FIELD("loss.alpha", double, loss.alpha),
      BCE_FIELD("loss.beta", double, loss.beta),
      BCE_FIELD("loss.dice_eps", double, loss.dice_eps),
      BCE_FIELD("rsg.n_removed_min", int, rsg.n_removed_range.first),
      BCE_FIELD("rsg.n_removed_max", int, rsg.n_removed_range.second),
      BCE_FIELD("rsg.area_min_px", int, rsg.area_range_px.first),
      BCE_FIELD("rsg.area_max_px", int, rsg.area_range_px.second),
      BCE_FIELD("rsg.aspect_min", double, rsg.aspect_range.first),
      BCE_FIELD("rsg.aspect_max", double, rsg.aspect_range.second),
      BCE_FIELD("rsg.rotation_min_deg", double, rsg.rotation_range_deg.first),
      BCE_FIELD("rsg.rotation_max_deg", double, rsg.rotation_range_deg.second),
      BCE_FIELD("rsg.flip_to_new_fraction", double, rsg.flip_to_new_fraction),
      BCE_FIELD("infer.theta", double, infer.theta),
      BCE_FIELD("infer.new_threshold", double, infer.new_threshold),
      Field{"eval.mode",
            [](Settings& s, const Json& v) { s.eval_mode = pipeline::parse_eval_mode(as<std::string>(v, "eval.mode")); },
            [](const Settings& s) { return Json(pipeline::to_string(s.eval_mode)); }},
  };
  return table;
}

#undef BCE_FIELD

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw UsageError("unknown setting '" + key + "'");
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_setting(Settings& s, const std::string& key, const nlohmann::json& value) {
  field(key).set(s, value);
}

void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  apply_setting(s, key, value);
}

void apply_config_file(Settings& s, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError("config '" + path.string() + "' is not valid JSON");
  if (!j.is_object()) throw UsageError("config '" + path.string() + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) apply_setting(s, key, value);
}

void finalize(Settings& s) {
  s.model.seed = s.seed;
  s.train.seed = s.seed;
  s.rsg.seed = s.seed;
  if (s.model.fused_channels < 1) throw UsageError("model.fused_channels must be positive");
  if (s.model.attention_reduction < 1) throw UsageError("model.attention_reduction must be positive");
  s.train.validate();
  s.loss.validate();
  s.rsg.validate();
  s.infer.validate();
}

nlohmann::json to_json(const Settings& s) {
  Json j = Json::object();
  for (const auto& f : fields()) j[f.key] = f.get(s);
  return j;
}

}  // namespace bce::cli
