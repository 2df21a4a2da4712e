#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bce/core/error.hpp"
#include "bce/core/instances.hpp"
#include "bce/data/synthetic.hpp"
#include "bce/pipeline/plot.hpp"
#include "bce/pipeline/train.hpp"
#include "../support/oracles.hpp"

using namespace bce;
using namespace bce::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("bce_pipe_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

nn::ModelConfig small_config() {
  auto cfg = nn::ModelConfig::tiny();
  cfg.fused_channels = 8;
  return cfg;
}

data::Sample scene(std::uint64_t seed) {
  data::SceneParams p;
  p.rows = p.cols = 64;
  p.min_side = 6;
  p.max_side = 14;
  p.seed = seed;
  return data::synthetic_scene(p, "t" + std::to_string(seed));
}

std::vector<double> flat_params(nn::BceNet& m) {
  std::vector<double> v;
  for (auto& p : m.parameters()) v.insert(v.end(), p.param->value.data(), p.param->value.data() + p.param->value.size());
  return v;
}

std::vector<double> flat_buffers(nn::BceNet& m) {
  std::vector<double> v;
  for (auto& b : m.buffers()) v.insert(v.end(), b.value->data(), b.value->data() + b.value->size());
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_CASE("removed-instance threshold is strict") {
  HistoricalMask m(32, 32);
  for (int r = 4; r < 10; ++r)
    for (int c = 4; c < 10; ++c) m.set(r, c, true);
  const InferenceConfig cfg;
  for (auto [v, expect] : {std::pair{0.6, true}, std::pair{0.5, false}, std::pair{0.4, false}}) {
    const Tensor pr(1, 1, 32, 32, v);
    const auto ids = validate_removed(pr, m, cfg);
    CHECK(ids.size() == (expect ? 1u : 0u));
  }
  CHECK(validate_removed(Tensor(1, 1, 32, 32, 0.9), HistoricalMask(32, 32), cfg).empty());
  CHECK_THROWS_AS((InferenceConfig{0.0, 0.5}.validate()), UsageError);
  CHECK_THROWS_AS((InferenceConfig{0.5, 1.0}.validate()), UsageError);
}

TEST_CASE("mean probability decides per instance") {
  HistoricalMask m(32, 32);
  m.set(0, 0, true);
  m.set(0, 1, true);
  m.set(5, 5, true);
  Tensor pr(1, 1, 32, 32, 0.0);
  pr[0] = 0.9, pr[1] = 0.2;  // mean 0.55
  pr[5 * 32 + 5] = 0.5;
  CHECK(validate_removed(pr, m, {}) == std::vector<int>{1});
}

TEST_CASE("assembled change is consistent") {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    HistoricalMask m(32, 32);
    for (int k = 0; k < 4; ++k) {
      const int r0 = static_cast<int>(uniform_int(rng, 0, 28)), c0 = static_cast<int>(uniform_int(rng, 0, 28));
      for (int r = r0; r < r0 + 4; ++r)
        for (int c = c0; c < c0 + 4; ++c) m.set(r, c, true);
    }
    Tensor pn(1, 1, 32, 32), pr(1, 1, 32, 32);
    for (std::size_t i = 0; i < pn.size(); ++i) pn[i] = uniform_real(rng, 0, 1), pr[i] = uniform_real(rng, 0, 1);
    const auto res = assemble_change(pn, pr, m, {});
    const auto inst = extract_instances(m);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const auto k = res.combined_change(r, c);
        CHECK((k == Category::background || k == Category::new_building || k == Category::removed));
        if (res.new_mask(r, c)) CHECK_FALSE(m(r, c));
        CHECK((res.new_mask(r, c) != 0) == (pn[r * 32 + c] > 0.5 && !m(r, c)));
        if (k == Category::removed) CHECK(m(r, c));
      }
    for (const auto& b : inst) {
      const bool rem = std::ranges::find(res.removed_instance_ids, b.instance_id) != res.removed_instance_ids.end();
      double mean = 0;
      for (const auto& q : b.pixels) {
        mean += pr[q.row * 32 + q.col];
        CHECK((res.combined_change(q.row, q.col) == Category::removed) == rem);
      }
      CHECK(rem == (mean / b.pixels.size() > 0.5));
    }
  }
}

TEST_CASE("metric ratios and empty conventions") {
  const auto m = metrics_from({2, 1, 1, 0});
  CHECK(m.precision == doctest::Approx(2.0 / 3));
  CHECK(m.recall == doctest::Approx(2.0 / 3));
  CHECK(m.f1 == doctest::Approx(2.0 / 3));
  CHECK(m.iou == doctest::Approx(0.5));
  CHECK(metrics_from({0, 0, 0, 10}) == Metrics{1, 1, 1, 1});
  const auto miss = metrics_from({0, 0, 3, 10});
  CHECK(miss.precision == 0);
  CHECK(miss.recall == 0);
  CHECK(miss.f1 == 0);
  CHECK(miss.iou == 0);
  const auto alarm = metrics_from({0, 4, 0, 10});
  CHECK(alarm.precision == 0);
  CHECK(alarm.f1 == 0);
}

TEST_CASE("confusion counts match a pixel loop") {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    ByteRaster a(32, 32), b(32, 32);
    for (auto& v : a.data()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 3));
    for (auto& v : b.data()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 3));
    const ChangeLabel pred(a), truth(b);
    for (auto [fn, set] : {std::pair{&is_change, std::set<int>{2, 3}}, std::pair{&is_new, std::set<int>{2}},
                           std::pair{&is_removed, std::set<int>{3}}}) {
      const auto k = confusion(pred, truth, fn);
      const auto o = testing::brute_confusion(a, b, set);
      CHECK(k.tp == o.tp);
      CHECK(k.fp == o.fp);
      CHECK(k.fn == o.fn);
      CHECK(k.tp + k.fp + k.fn + k.tn == 1024);
    }
    CHECK(metrics_from(confusion(pred, pred, &is_change)) == Metrics{1, 1, 1, 1});
  }
}

TEST_CASE("evaluation sums counts before taking ratios") {
  EvalCounts a, b;
  a.change = {1, 0, 0, 0};
  b.change = {0, 0, 3, 0};
  EvalCounts sum = a;
  sum += b;
  const auto e = evaluate(sum, EvalMode::binary_change);
  CHECK(e.change.recall == doctest::Approx(0.25));
  CHECK(parse_eval_mode(to_string(EvalMode::per_category)) == EvalMode::per_category);
  CHECK_THROWS_AS(parse_eval_mode("macro"), UsageError);
}

TEST_CASE("inference writes a category raster and instance list") {
  TempDir dir("infer");
  nn::BceNet model(small_config());
  const auto s = scene(1);
  const auto res = infer(model, s.image, s.mask, {});
  CHECK(res.combined_change.rows() == 64);
  write_change_result(res, dir.path / "out.png");
  CHECK(fs::exists(dir.path / "out.png"));
  const auto j = nlohmann::json::parse(slurp(dir.path / "out.json"));
  CHECK(j.at("removed_instance_ids").size() == res.removed_instance_ids.size());
}

TEST_CASE("one epoch over two tiles is two steps") {
  nn::BceNet model(small_config());
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.augment = false;
  const auto r = train(model, {scene(1), scene(2)}, {}, cfg, {}, std::nullopt);
  CHECK(r.state.step == 2);
  CHECK(r.state.epoch == 1);
  CHECK(r.log.size() == 2);
  for (const auto& e : r.log)
    CHECK(e.loss.total == doctest::Approx(e.loss.l_n + e.loss.l_r + e.loss.l_e + e.loss.l_c).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  nn::BceNet model(small_config());
  const auto before = flat_params(model);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.lr = 0.0;
  train(model, {scene(1), scene(2)}, {}, cfg, {}, data::RsgParams{});
  CHECK(flat_params(model) == before);
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  CHECK_NOTHROW(cfg.validate(true));
}

TEST_CASE("momentum update follows the velocity recursion") {
  nn::BceNet model(small_config());
  const std::vector<data::Sample> batch{scene(3)};
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.momentum = 0.5;
  const auto w0 = flat_params(model);
  train_step(model, batch, {}, cfg);
  std::vector<double> g0;
  for (auto& p : model.parameters()) g0.insert(g0.end(), p.param->grad.data(), p.param->grad.data() + p.param->grad.size());
  const auto w1 = flat_params(model);
  for (std::size_t i = 0; i < w0.size(); i += 37) CHECK(w1[i] == doctest::Approx(w0[i] - 0.05 * g0[i]).epsilon(1e-12));
  train_step(model, batch, {}, cfg);
  std::vector<double> g1;
  for (auto& p : model.parameters()) g1.insert(g1.end(), p.param->grad.data(), p.param->grad.data() + p.param->grad.size());
  const auto w2 = flat_params(model);
  for (std::size_t i = 0; i < w0.size(); i += 37)
    CHECK(w2[i] == doctest::Approx(w1[i] - 0.05 * (0.5 * g0[i] + g1[i])).epsilon(1e-12));
}

TEST_CASE("training writes logs and checkpoints") {
  TempDir dir("train");
  nn::BceNet model(small_config());
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.eval_every = 1;
  const auto r = train(model, {scene(1), scene(2)}, {scene(3)}, cfg, {}, std::nullopt, TrainOutputs{dir.path});
  CHECK(fs::exists(dir.path / "best.ckpt"));
  CHECK(fs::exists(dir.path / "last.ckpt"));
  const auto parsed = read_loss_log(dir.path / "loss_log.jsonl");
  CHECK(parsed.entries.size() == 2);
  CHECK(parsed.skipped == 0);
  CHECK(parsed.entries[1].eval_f1.has_value());
  CHECK(r.state.best_f1 >= 0);
  const auto ck = read_checkpoint(dir.path / "last.ckpt");
  CHECK(ck.state.step == 2);
  CHECK(ck.run.contains("train"));
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  nn::BceNet model(small_config());
  TrainConfig cfg;
  cfg.max_steps = 1;
  train(model, {scene(4)}, {}, cfg, {}, std::nullopt);  // moves BN statistics off their defaults
  save_checkpoint(dir.path / "m.ckpt", model, {7, 2, 0.5, 5});
  nn::BceNet back = load_model(dir.path / "m.ckpt");
  CHECK(back.config() == model.config());
  CHECK(flat_params(back) == flat_params(model));
  CHECK(flat_buffers(back) == flat_buffers(model));
  const auto ck = read_checkpoint(dir.path / "m.ckpt");
  CHECK(ck.state.step == 7);
  CHECK(ck.state.best_step == 5);
  const auto s = scene(5);
  const auto a = infer(model, s.image, s.mask, {});
  const auto b = infer(back, s.image, s.mask, {});
  CHECK(a.combined_change == b.combined_change);
  CHECK(file_digest(dir.path / "m.ckpt").size() == 64);

  auto other_cfg = small_config();
  other_cfg.fused_channels = 16;
  nn::BceNet other(other_cfg);
  CHECK_THROWS_AS(load_into(other, ck), DataError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir("corrupt");
  nn::BceNet model(small_config());
  save_checkpoint(dir.path / "ok.ckpt", model, {});
  const std::string bytes = slurp(dir.path / "ok.ckpt");

  spit(dir.path / "short.ckpt", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(read_checkpoint(dir.path / "short.ckpt"), DataError);
  spit(dir.path / "long.ckpt", bytes + "x");
  CHECK_THROWS_AS(read_checkpoint(dir.path / "long.ckpt"), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  spit(dir.path / "magic.ckpt", magic);
  CHECK_THROWS_AS(read_checkpoint(dir.path / "magic.ckpt"), DataError);
  std::string version = bytes;
  version[8] = 9;
  spit(dir.path / "version.ckpt", version);
  CHECK_THROWS_AS(read_checkpoint(dir.path / "version.ckpt"), DataError);
  CHECK_THROWS_AS(read_checkpoint(dir.path / "absent.ckpt"), DataError);
}

TEST_CASE("pretrained weights require the cache file") {
  auto cfg = small_config();
  cfg.pretrained = true;
  nn::BceNet model(cfg);
  TempDir dir("cache");
  setenv("BCE_CACHE_DIR", dir.path.c_str(), 1);
  CHECK_THROWS_AS(apply_pretrained(model), DataError);

  auto donor_cfg = small_config();
  donor_cfg.fused_channels = 16;  // decoder differs, encoder matches
  donor_cfg.seed = 99;
  nn::BceNet donor(donor_cfg);
  save_checkpoint(pretrained_path(cfg.preset), donor, {});
  apply_pretrained(model);
  auto dp = donor.parameters();
  for (auto& p : model.parameters()) {
    if (p.name.rfind("encoder.", 0) != 0) continue;
    const auto it = std::ranges::find_if(dp, [&](const auto& q) { return q.name == p.name; });
    REQUIRE(it != dp.end());
    CHECK(p.param->value == it->param->value);
  }
  unsetenv("BCE_CACHE_DIR");
}

TEST_CASE("loss log parsing and plots") {
  TempDir dir("plot");
  const auto empty = parse_loss_log("");
  CHECK(empty.entries.empty());
  const auto out = plot_metrics(empty, dir.path / "empty");
  CHECK(fs::exists(out.csv));
  CHECK(fs::exists(out.loss_svg));

  std::string text;
  for (int i = 1; i <= 10; ++i) {
    LogEntry e;
    e.step = i;
    e.loss = loss::total_loss(0.1 * i, 0.2, 0.3 / i, 0.01 * i);
    if (i % 5 == 0) e.eval_f1 = 0.1 * i;
    text += to_json_line(e) + "\n";
  }
  text += "not json\n{\"step\": 11}\n\n";
  const auto log = parse_loss_log(text);
  CHECK(log.entries.size() == 10);
  CHECK(log.skipped == 2);
  const auto files = plot_metrics(log, dir.path / "full");
  std::ifstream csv(files.csv);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,l_n,l_r,l_e,l_c,total,eval_f1");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    REQUIRE(f.size() >= 6);
    const double sum = std::stod(f[1]) + std::stod(f[2]) + std::stod(f[3]) + std::stod(f[4]);
    CHECK(std::abs(sum - std::stod(f[5])) < 1e-9);
  }
  CHECK(rows == 10);
  CHECK(fs::exists(files.eval_svg));
  CHECK(slurp(files.final_csv).find("total") != std::string::npos);
}
