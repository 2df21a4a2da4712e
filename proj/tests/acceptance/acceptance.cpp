// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bce/cli/cli.hpp"
#include "bce/core/instances.hpp"
#include "bce/core/mask_ops.hpp"
#include "bce/data/dataops.hpp"
#include "bce/data/synthetic.hpp"
#include "bce/kernels/conv2d.hpp"
#include "bce/kernels/deform_conv.hpp"
#include "bce/loss/losses.hpp"
#include "bce/nn/layers.hpp"
#include "bce/nn/model.hpp"
#include "bce/pipeline/inference.hpp"
#include "bce/pipeline/train.hpp"
#include "../support/oracles.hpp"

using namespace bce;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------------------------

Verdict mask_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  long long checked = 0, bad = 0;
  for (int bits = 0; bits < 16; ++bits) {
    HistoricalMask m(2, 2);
    for (int k = 0; k < 4; ++k) m.set(k / 2, k % 2, (bits >> k) & 1);
    const Tensor grid = mask_to_grid(m, 2, 2);
    for (int draw = 0; draw < 64; ++draw) {
      Tensor f(1, 4, 2, 2);
      testing::fill_normal(f, rng, 4.0);
      const Tensor bg = split_background(f, grid);
      const Tensor fg = split_foreground(f, grid);
      for (int c = 0; c < 4; ++c)
        for (int k = 0; k < 4; ++k) {
          const int r = k / 2, col = k % 2;
          const double x = f.at(0, c, r, col);
          ++checked;
          if (m(r, col)) {
            bad += bg.at(0, c, r, col) != 0.0;
            bad += std::abs(fg.at(0, c, r, col) - 1.0 / (1.0 + std::exp(x))) > 1e-15;
          } else {
            bad += fg.at(0, c, r, col) != 0.0;
            bad += bg.at(0, c, r, col) != x;
          }
        }
    }
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 1.0, fmt("%.0f entries, %.0f mismatches, %.3f s (limit 1 s)", double(checked), double(bad), t)};
}

Verdict deformable() {
  const auto t0 = std::chrono::steady_clock::now();
  using kernels::ConvGeometry;
  using kernels::Exec;
  Rng rng(202);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int cin = static_cast<int>(uniform_int(rng, 1, 4)), cout = static_cast<int>(uniform_int(rng, 1, 4));
    const int k = uniform_int(rng, 0, 1) ? 3 : 1;
    const int h = static_cast<int>(uniform_int(rng, 3, 12)), w = static_cast<int>(uniform_int(rng, 3, 12));
    const ConvGeometry g{cin, cout, k, 1, k / 2, h, w};
    const auto x = testing::normal_vector(static_cast<std::size_t>(cin) * h * w, rng);
    const auto wt = testing::normal_vector(g.weight_size(), rng);
    const auto b = testing::normal_vector(cout, rng);
    int oh = 0, ow = 0;
    const auto ref = testing::naive_conv(x, cin, h, w, wt, cout, k, 1, k / 2, &b, oh, ow);
    const std::vector<float> xf(x.begin(), x.end()), wf(wt.begin(), wt.end()), bf(b.begin(), b.end());
    const std::vector<float> off(2 * static_cast<std::size_t>(g.taps()) * g.out_positions(), 0.0f);
    for (Exec e : {Exec::serial, Exec::parallel}) {
      std::vector<float> y(ref.size());
      kernels::deform_conv_forward(e, g, xf.data(), off.data(), wf.data(), bf.data(), y.data());
      for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(double(y[i]) - ref[i]));
    }
  }

  // 1 x 8 x 8 input, learned offsets, every gradient against central differences.
  const ConvGeometry g{1, 1, 3, 1, 1, 8, 8};
  auto x = testing::normal_vector(64, rng);
  auto off = testing::smooth_offsets(2 * 9 * 64, rng);
  auto wt = testing::normal_vector(9, rng);
  auto b = testing::normal_vector(1, rng);
  const auto r = testing::normal_vector(64, rng);
  auto f = [&] {
    std::vector<double> y(64);
    kernels::deform_conv_forward(Exec::serial, g, x.data(), off.data(), wt.data(), b.data(), y.data());
    double s = 0;
    for (int i = 0; i < 64; ++i) s += r[i] * y[i];
    return s;
  };
  std::vector<double> gx(64), go(off.size()), gw(9, 0.0), gb(1, 0.0);
  kernels::deform_conv_backward(Exec::parallel, g, x.data(), off.data(), wt.data(), r.data(), gx.data(),
                                go.data(), gw.data(), gb.data());
  double rel = 0;
  rel = std::max(rel, testing::relative_error(gx, testing::numeric_gradient(f, x.data(), x.size())));
  rel = std::max(rel, testing::relative_error(go, testing::numeric_gradient(f, off.data(), off.size())));
  rel = std::max(rel, testing::relative_error(gw, testing::numeric_gradient(f, wt.data(), wt.size())));
  rel = std::max(rel, testing::relative_error(gb, testing::numeric_gradient(f, b.data(), b.size())));
  const double t = seconds_since(t0);
  return {worst < 1e-5 && rel < 1e-4 && t < 30.0,
          fmt("zero-offset max |diff| %.2e (tol 1e-5), gradient rel. err %.2e (tol 1e-4), %.2f s", worst, rel, t)};
}

Verdict loss_oracles() {
  using namespace loss;
  auto row = [](std::initializer_list<double> v) {
    Tensor t(1, 1, 1, static_cast<int>(v.size()));
    std::size_t i = 0;
    for (double x : v) t[i++] = x;
    return t;
  };
  const double e_bce = std::abs(bce_loss(Tensor(1, 1, 4, 4, 0.5), Tensor(1, 1, 4, 4, 1.0)) - std::numbers::ln2);
  const double e_bce0 = std::abs(bce_loss(Tensor(1, 1, 4, 4, 0.5), Tensor(1, 1, 4, 4, 0.0)) - std::numbers::ln2);
  const double e_dice = std::abs(dice_loss(row({1, 1, 0, 0}), row({1, 0, 0, 0}), 1.0) - 0.25);

  // Patches (0.6, 0.8) and (0.8, 0.6): cosine 0.96, so (1 - 0.96) / 2 = 0.02.
  Tensor e(1, 1, 1, 2), fg(1, 1, 1, 2), bg(1, 1, 1, 2);
  e[0] = 0.8, e[1] = 0.6, bg[0] = 0.6, bg[1] = 0.8;
  BuildingInstance inst;
  inst.bbox = {0, 0, 0, 7};
  const BatchInstances one{{{inst}}, {{}}};
  const double e_con = std::abs(contrastive_on_projections(e, fg, bg, one, 4).value - 0.02);

  Rng rng(303);
  double lo = 0, hi = 0;
  int out_of_range = 0;
  for (int t = 0; t < 1000; ++t) {
    const int batch = static_cast<int>(uniform_int(rng, 1, 2));
    Tensor pe(batch, 1, 8, 8), pf(batch, 1, 8, 8), pb(batch, 1, 8, 8);
    for (Tensor* p : {&pe, &pf, &pb})
      for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = uniform_real(rng, -1, 1);
    BatchInstances bi;
    bi.new_buildings.resize(batch);
    bi.removed_buildings.resize(batch);
    for (int n = 0; n < batch; ++n) {
      for (auto* list : {&bi.new_buildings[n], &bi.removed_buildings[n]}) {
        const int count = static_cast<int>(uniform_int(rng, 0, 4));
        for (int i = 0; i < count; ++i) {
          BuildingInstance b;
          const int r0 = static_cast<int>(uniform_int(rng, 0, 31)), c0 = static_cast<int>(uniform_int(rng, 0, 31));
          b.bbox = {r0, c0, static_cast<int>(uniform_int(rng, r0, 31)), static_cast<int>(uniform_int(rng, c0, 31))};
          list->push_back(b);
        }
      }
    }
    const double v = contrastive_on_projections(pe, pf, pb, bi, 4).value;
    lo = t ? std::min(lo, v) : v;
    hi = t ? std::max(hi, v) : v;
    out_of_range += !(v >= 0 && v <= 2);
  }

  double e_sum = 0;
  for (int t = 0; t < 1000; ++t) {
    const double a = uniform_real(rng, 0, 3), b = uniform_real(rng, 0, 3), c = uniform_real(rng, 0, 3),
                 d = uniform_real(rng, 0, 2);
    e_sum = std::max(e_sum, std::abs(total_loss(a, b, c, d).total - (((a + b) + c) + d)));
  }
  const double worst = std::max({e_bce, e_bce0, e_dice, e_con});
  return {worst <= 1e-9 && out_of_range == 0 && e_sum <= 1e-12,
          fmt("max oracle error %.1e (tol 1e-9), contrastive range [%.3f, %.3f] over 1000, total-sum error %.1e (tol 1e-12)",
              worst, lo, hi, e_sum)};
}

Verdict metric_oracle() {
  using namespace pipeline;
  Rng rng(404);
  int mismatches = 0;
  auto ratio = [](long long num, long long den, long long other) {
    return den > 0 ? double(num) / double(den) : (other == 0 ? 1.0 : 0.0);
  };
  for (int t = 0; t < 200; ++t) {
    ByteRaster p(32, 32), l(32, 32);
    const int density = static_cast<int>(uniform_int(rng, 0, 3));  // include sparse and empty cases
    for (auto& v : p.data()) {
      const int u = static_cast<int>(uniform_int(rng, 0, 9));
      v = u < density ? 2 : (u < 2 * density ? 3 : 0);
    }
    for (auto& v : l.data()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 9) < 2 * density ? uniform_int(rng, 1, 3) : 0);
    ChangeResult pred;
    pred.combined_change = ChangeLabel(p);
    pred.new_mask = ByteRaster(32, 32);
    for (std::size_t i = 0; i < p.size(); ++i) pred.new_mask.data()[i] = p.data()[i] == 2;
    for (auto mode : {EvalMode::binary_change, EvalMode::per_category}) {
      const Evaluation ev = evaluate(pred, ChangeLabel(l), mode);
      const std::pair<const Metrics*, std::set<int>> cases[] = {{&ev.change, {2, 3}}, {&ev.added, {2}}, {&ev.removed, {3}}};
      for (const auto& [m, pos] : cases) {
        const auto k = testing::brute_confusion(p, l, pos);
        const double prec = ratio(k.tp, k.tp + k.fp, k.fn);
        const double rec = ratio(k.tp, k.tp + k.fn, k.fp);
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        const double iou = k.tp + k.fp + k.fn > 0 ? double(k.tp) / double(k.tp + k.fp + k.fn) : 1.0;
        mismatches += !(m->precision == prec && m->recall == rec && m->f1 == f1 && m->iou == iou);
      }
    }
  }
  return {mismatches == 0, fmt("%.0f of 1200 metric tuples differ from the brute-force count (exact)", mismatches)};
}

Verdict conversion() {
  Rng rng(505);
  int violations = 0, roundtrip = 0, total2 = 0, total3 = 0;
  for (int t = 0; t < 200; ++t) {
    data::SceneParams sp;
    sp.rows = sp.cols = 64;
    sp.min_side = 4;
    sp.max_side = 12;
    sp.seed = static_cast<std::uint64_t>(t);
    const data::Sample scene = data::synthetic_scene(sp, "c");
    // Bi-temporal fixture: the later epoch's buildings plus change blobs of mixed overlap.
    ByteRaster t1(64, 64), change(64, 64);
    for (std::size_t i = 0; i < t1.size(); ++i) t1.data()[i] = scene.mask.values().data()[i];
    for (int k = 0; k < 5; ++k) {
      const int h = static_cast<int>(uniform_int(rng, 2, 10)), w = static_cast<int>(uniform_int(rng, 2, 10));
      const int r0 = static_cast<int>(uniform_int(rng, 0, 64 - h)), c0 = static_cast<int>(uniform_int(rng, 0, 64 - w));
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) change(r, c) = 1;
    }
    const auto s = data::convert_bitemporal(scene.image, HistoricalMask(t1), change);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const auto k = s.label(r, c);
        if (k == Category::removed) ++total3, violations += t1(r, c) == 0;
        if (k == Category::new_building) ++total2, violations += t1(r, c) != 0;
      }
    // Per-component rule from an independent flood fill.
    for (const auto& comp : testing::flood_components(change)) {
      std::size_t inside = 0;
      for (auto [r, c] : comp) inside += t1(r, c) != 0;
      const bool removed = 2 * inside > comp.size();
      for (auto [r, c] : comp) {
        const auto k = s.label(r, c);
        if (t1(r, c)) violations += k != (removed ? Category::removed : Category::unchanged);
        else violations += k != (removed ? Category::background : Category::new_building);
      }
    }
    roundtrip += !(data::compose_label(data::derive_targets(s.label)) == s.label);
    roundtrip += !(data::compose_label(data::derive_targets(scene.label)) == scene.label);
  }
  return {violations == 0 && roundtrip == 0 && total2 > 0 && total3 > 0,
          fmt("%.0f rule violations, %.0f round-trip failures over 200 fixtures (%.0f new, %.0f removed px)",
              violations, roundtrip, total2, total3)};
}

Verdict rsg() {
  data::RsgParams p;
  p.n_removed_range = {1, 4};
  p.area_range_px = {16, 120};
  p.flip_to_new_fraction = 0.3;
  int overlaps = 0, mask_mismatch = 0, nondeterministic = 0;
  long long simulated = 0;
  for (int run = 0; run < 500; ++run) {
    data::SceneParams sp;
    sp.rows = sp.cols = 64;
    sp.min_side = 4;
    sp.max_side = 12;
    sp.seed = static_cast<std::uint64_t>(run % 50);
    const auto s = data::synthetic_scene(sp, "r");
    p.seed = static_cast<std::uint64_t>(run);
    const auto out = data::simulate_changes(s, p);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        if (out.label(r, c) == Category::removed && s.label(r, c) != Category::removed) {
          ++simulated;
          overlaps += s.label(r, c) != Category::background;
        }
      }
    mask_mismatch += !(data::derive_targets(out.label).historical == out.mask.values());
    nondeterministic += !(data::simulate_changes(s, p) == out);
  }
  return {overlaps == 0 && mask_mismatch == 0 && nondeterministic == 0 && simulated > 0,
          fmt("500 runs, %.0f simulated removed px, %.0f overlaps, %.0f mask mismatches, %.0f seed mismatches",
              double(simulated), overlaps, mask_mismatch, nondeterministic)};
}

Verdict polygon_validation() {
  using namespace pipeline;
  HistoricalMask sq(32, 32);
  for (int r = 8; r < 16; ++r)
    for (int c = 8; c < 16; ++c) sq.set(r, c, true);
  const bool r6 = validate_removed(Tensor(1, 1, 32, 32, 0.6), sq, {}).size() == 1;
  const bool r5 = validate_removed(Tensor(1, 1, 32, 32, 0.5), sq, {}).empty();
  const bool r4 = validate_removed(Tensor(1, 1, 32, 32, 0.4), sq, {}).empty();

  Rng rng(606);
  int broken = 0, wrong_ids = 0;
  for (int t = 0; t < 1000; ++t) {
    HistoricalMask m(32, 32);
    const int n = static_cast<int>(uniform_int(rng, 0, 6));
    for (int k = 0; k < n; ++k) {
      const int h = static_cast<int>(uniform_int(rng, 1, 8)), w = static_cast<int>(uniform_int(rng, 1, 8));
      const int r0 = static_cast<int>(uniform_int(rng, 0, 32 - h)), c0 = static_cast<int>(uniform_int(rng, 0, 32 - w));
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) m.set(r, c, true);
    }
    Tensor pn(1, 1, 32, 32), pr(1, 1, 32, 32);
    const double bias = uniform_real(rng, 0.2, 0.8);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      pn[i] = uniform_real(rng, 0, 1);
      pr[i] = std::clamp(bias + uniform_real(rng, -0.3, 0.3), 0.0, 1.0);
    }
    const auto res = assemble_change(pn, pr, m, {});
    std::vector<int> expect;
    for (const auto& comp : testing::flood_components(m.values())) {
      double mean = 0;
      int marked = 0;
      for (auto [r, c] : comp) {
        mean += pr[r * 32 + c];
        marked += res.combined_change(r, c) == Category::removed;
      }
      mean /= double(comp.size());
      broken += !(marked == 0 || marked == static_cast<int>(comp.size()));
      broken += (marked > 0) != (mean > 0.5);
      if (mean > 0.5) expect.push_back(1);
    }
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) broken += res.combined_change(r, c) == Category::removed && !m(r, c);
    wrong_ids += res.removed_instance_ids.size() != expect.size();
  }
  const std::string theta = std::string(r6 ? "removed" : "KEPT") + "/" + (r5 ? "kept" : "REMOVED") + "/" +
                            (r4 ? "kept" : "REMOVED");
  return {r6 && r5 && r4 && broken == 0 && wrong_ids == 0,
          "mean 0.6/0.5/0.4 -> " + theta +
              fmt("; %.0f partial or misjudged instances, %.0f id-count mismatches in 1000 trials", broken, wrong_ids)};
}

Verdict overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<data::Sample> tiles;
  for (int i = 0; i < 4; ++i) {
    data::SceneParams sp;
    sp.seed = static_cast<std::uint64_t>(i);
    tiles.push_back(data::synthetic_scene(sp, "overfit" + std::to_string(i)));
  }
  nn::ModelConfig mc = nn::ModelConfig::tiny();
  mc.fused_channels = 32;
  nn::BceNet model(mc);
  pipeline::TrainConfig tc;
  tc.lr = 0.01;
  tc.max_steps = 300;
  tc.max_epochs = 1000;
  tc.augment = false;
  tc.eval_every = 25;
  const auto result = pipeline::train(model, tiles, tiles, tc, {}, std::nullopt);
  const auto counts = pipeline::evaluate_samples(model, tiles, {}, kernels::Exec::parallel);
  const auto m = pipeline::evaluate(counts, pipeline::EvalMode::binary_change).change;
  const double t = seconds_since(t0);
  return {m.f1 >= 0.90 && t <= 600.0 && result.state.step <= 300,
          fmt("train-set change F1 %.4f (>= 0.90) after %.0f steps, best %.4f, %.0f s (limit 600 s)", m.f1,
              double(result.state.step), result.state.best_f1, t)};
}

Verdict complexity() {
  Rng init(1);
  nn::Conv2d conv(1, 1, 3, 1, 1, true, init);
  nn::Complexity acc;
  conv.count({1, 1, 4, 4}, acc);
  long long params = 0;
  nn::Visitor v;
  v.param = [&](const std::string&, nn::Parameter& p) { params += static_cast<long long>(p.size()); };
  conv.visit("", v);

  nn::BceNet paper(nn::ModelConfig::paper34());
  const auto rep = nn::count_complexity(paper, 256, 256);
  const double df = double(rep.flops) / 15.00e9 - 1.0, dp = double(rep.params) / 31.16e6 - 1.0;
  return {params == 10 && acc.flops() == 288 && std::abs(df) <= 0.2 && std::abs(dp) <= 0.2,
          fmt("single conv %.0f params / %.0f FLOPs (10 / 288); paper34 %.3fe9 FLOPs (%+.1f%%), ", double(params),
              double(acc.flops()), rep.flops / 1e9, 100 * df) +
              fmt("%.3fe6 params (%+.1f%%), band +-20%%", rep.params / 1e6, 100 * dp)};
}

Verdict reproducibility() {
  const fs::path root = fs::temp_directory_path() / "bce_acceptance_repro";
  fs::remove_all(root);
  std::vector<data::DatasetEntry> entries;
  for (int i = 0; i < 4; ++i) {
    data::SceneParams sp;
    sp.rows = sp.cols = 64;
    sp.min_side = 5;
    sp.max_side = 14;
    sp.seed = static_cast<std::uint64_t>(i);
    entries.push_back({data::synthetic_scene(sp, "rep" + std::to_string(i)), i == 3 ? data::Split::test : data::Split::train});
  }
  data::write_dataset(entries, root / "data");
  std::vector<std::string> digests;
  for (const char* run : {"a", "b"}) {
    std::ostringstream out, err;
    const int code = cli::run({"--seed", "17", "--deterministic", "--workers", "2", "--set", "model.fused_channels=16",
                               "--set", "train.max_epochs=3", "--set", "train.batch_size=2", "--set", "train.rsg=true",
                               "--set", "train.eval_every=2", "train", "--data", (root / "data").string(), "--out",
                               (root / run).string()},
                              out, err);
    if (code != 0) return {false, "train exited with " + std::to_string(code) + ": " + err.str()};
    digests.push_back(pipeline::file_digest(root / run / "last.ckpt"));
  }
  const bool best_same = pipeline::file_digest(root / "a" / "best.ckpt") == pipeline::file_digest(root / "b" / "best.ckpt");
  fs::remove_all(root);
  return {digests[0] == digests[1] && best_same, "last.ckpt sha256 " + digests[0].substr(0, 16) + "... vs " +
                                                     digests[1].substr(0, 16) + "..." + (best_same ? ", best.ckpt equal" : ", best.ckpt differs")};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"mask-algebra", mask_algebra},
      {"deformable-conv", deformable},
      {"loss-oracles", loss_oracles},
      {"metric-oracle", metric_oracle},
      {"conversion-invariants", conversion},
      {"rsg-invariants", rsg},
      {"polygon-validation", polygon_validation},
      {"overfit-smoke", overfit},
      {"complexity", complexity},
      {"reproducibility", reproducibility},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
