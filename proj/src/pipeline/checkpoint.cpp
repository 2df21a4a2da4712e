#include "bce/pipeline/checkpoint.hpp"

#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <openssl/evp.h>

namespace bce::pipeline {

namespace {

constexpr char kMagic[8] = {'B', 'C', 'E', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated checkpoint " + what);
  return v;
}

nlohmann::json shape_json(const Shape4& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

nlohmann::json model_config_json(const nn::ModelConfig& cfg) {
  return {{"preset", nn::to_string(cfg.preset)},
          {"pretrained", cfg.pretrained},
          {"fused_channels", cfg.fused_channels},
          {"use_attention", cfg.use_attention},
          {"use_dtm", cfg.use_dtm},
          {"attention_reduction", cfg.attention_reduction},
          {"seed", cfg.seed}};
}

nn::ModelConfig model_config_from_json(const nlohmann::json& j) {
  nn::ModelConfig cfg;
  cfg.preset = nn::parse_preset(j.at("preset").get<std::string>());
  cfg.pretrained = j.at("pretrained").get<bool>();
  cfg.fused_channels = j.at("fused_channels").get<int>();
  cfg.use_attention = j.at("use_attention").get<bool>();
  cfg.use_dtm = j.at("use_dtm").get<bool>();
  cfg.attention_reduction = j.at("attention_reduction").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, nn::BceNet& model, const TrainState& state,
                     const nlohmann::json& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Tensor*> payload;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"kind", "param"}, {"shape", shape_json(p.param->value.shape())}});
    payload.push_back(&p.param->value);
  }
  for (const auto& b : model.buffers()) {
    tensors.push_back({{"name", b.name}, {"kind", "buffer"}, {"shape", shape_json(b.value->shape())}});
    payload.push_back(b.value);
  }
  const nlohmann::json header{
      {"model", model_config_json(model.config())},
      {"state",
       {{"step", state.step},
        {"epoch", state.epoch},
        {"best_f1", state.best_f1},
        {"best_step", state.best_step}}},
      {"run", extra},
      {"tensors", tensors}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so a crash never leaves a half-written checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint '" + path.string() + "'");
    os.write(kMagic, sizeof(kMagic));
    write_raw(os, kFormatVersion);
    write_raw(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : payload) {
      os.write(reinterpret_cast<const char*>(t->data()),
               static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!os) throw DataError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint");
  }
  const auto version = read_raw<std::uint32_t>(is, "version");
  if (version != kFormatVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported");
  }
  const auto header_size = read_raw<std::uint64_t>(is, "header size");
  if (header_size > (1u << 28)) throw DataError("corrupt checkpoint header size");
  std::string text(header_size, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_size))) {
    throw DataError("truncated checkpoint header");
  }
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.config = model_config_from_json(header.at("model"));
    const auto& st = header.at("state");
    ck.state.step = st.at("step").get<long long>();
    ck.state.epoch = st.at("epoch").get<int>();
    ck.state.best_f1 = st.at("best_f1").get<double>();
    ck.state.best_step = st.at("best_step").get<long long>();
    ck.run = header.value("run", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      const auto s = t.at("shape");
      CheckpointTensor ct{t.at("name").get<std::string>(), t.at("kind").get<std::string>() == "buffer",
                          Shape4{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>(),
                                 s.at(3).get<int>()},
                          {}};
      ck.tensors.push_back(std::move(ct));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  for (auto& t : ck.tensors) {
    t.values.resize(t.shape.numel());
    if (!is.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(double)))) {
      throw DataError("truncated checkpoint payload at '" + t.name + "'");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint");
  return ck;
}

namespace {

void copy_tensors(nn::BceNet& model, const Checkpoint& ckpt, bool encoder_only) {
  std::map<std::string, Tensor*> targets;
  std::map<std::string, bool> is_buffer;
  for (const auto& p : model.parameters()) {
    targets[p.name] = &p.param->value;
    is_buffer[p.name] = false;
  }
  for (const auto& b : model.buffers()) {
    targets[b.name] = b.value;
    is_buffer[b.name] = true;
  }
  auto wanted = [&](const std::string& name) {
    return !encoder_only || name.rfind("encoder.", 0) == 0;
  };
  std::size_t matched = 0;
  for (const auto& t : ckpt.tensors) {
    if (!wanted(t.name)) continue;
    auto it = targets.find(t.name);
    if (it == targets.end() || is_buffer[t.name] != t.is_buffer) {
      throw DataError("checkpoint tensor '" + t.name + "' has no counterpart in the model");
    }
    if (it->second->shape() != t.shape) {
      throw DataError("checkpoint tensor '" + t.name + "' has shape " + t.shape.str() +
                      ", model expects " + it->second->shape().str());
    }
    std::copy(t.values.begin(), t.values.end(), it->second->data());
    ++matched;
  }
  const auto expected = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [&](const auto& kv) { return wanted(kv.first); }));
  if (matched != expected) {
    throw DataError("checkpoint provides " + std::to_string(matched) + " of " +
                    std::to_string(expected) + " model tensors");
  }
}

}  // namespace

void load_into(nn::BceNet& model, const Checkpoint& ckpt) {
  if (!(ckpt.config == model.config())) {
    throw DataError("checkpoint model config " + model_config_json(ckpt.config).dump() +
                    " does not match " + model_config_json(model.config()).dump());
  }
  copy_tensors(model, ckpt, false);
}

nn::BceNet load_model(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  nn::BceNet model(ck.config);
  load_into(model, ck);
  return model;
}

void load_encoder(nn::BceNet& model, const Checkpoint& ckpt) {
  if (ckpt.config.preset != model.config().preset) {
    throw DataError("pretrained weights are for preset '" + nn::to_string(ckpt.config.preset) + "'");
  }
  copy_tensors(model, ckpt, true);
}

std::filesystem::path pretrained_path(nn::EncoderPreset preset) {
  const char* dir = std::getenv("BCE_CACHE_DIR");
  if (dir == nullptr || *dir == '\0') return {};
  return std::filesystem::path(dir) / (nn::to_string(preset) + "_encoder.ckpt");
}

void apply_pretrained(nn::BceNet& model) {
  if (!model.config().pretrained) return;
  const auto path = pretrained_path(model.config().preset);
  if (path.empty() || !std::filesystem::exists(path)) {
    throw DataError("model.pretrained is set but no encoder weights were found" +
                    (path.empty() ? std::string(" (BCE_CACHE_DIR is unset)") : " at '" + path.string() + "'"));
  }
  load_encoder(model, read_checkpoint(path));
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

}  // namespace bce::pipeline
