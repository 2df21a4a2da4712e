#include <doctest.h>

#include <numbers>

#include "bce/data/synthetic.hpp"
#include "bce/loss/losses.hpp"
#include "bce/pipeline/train.hpp"
#include "../support/oracles.hpp"

using namespace bce;
using namespace bce::loss;

namespace {

Tensor row(std::initializer_list<double> v) {
  Tensor t(1, 1, 1, static_cast<int>(v.size()));
  std::size_t i = 0;
  for (double x : v) t[i++] = x;
  return t;
}

Tensor uniform_map(Shape4 s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform_real(rng, lo, hi);
  return t;
}

BuildingInstance box_instance(int r0, int c0, int r1, int c1) {
  BuildingInstance b;
  b.bbox = {r0, c0, r1, c1};
  return b;
}

}  // namespace

TEST_CASE("cross-entropy scalar cases") {
  CHECK(bce_loss(Tensor(1, 1, 2, 2, 0.5), Tensor(1, 1, 2, 2, 1.0)) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(bce_loss(row({0.9, 0.2}), row({1, 0})) ==
        doctest::Approx((-std::log(0.9) - std::log(0.8)) / 2).epsilon(1e-12));
  CHECK(bce_loss(row({0.9, 0.2}), row({1, 0})) == doctest::Approx(0.164252).epsilon(1e-6));
  CHECK(bce_loss(row({1, 0, 1}), row({1, 0, 1})) <= 2e-7);
  CHECK(std::isfinite(bce_loss(row({0, 1}), row({1, 0}))));
  CHECK_THROWS_AS(bce_loss(row({0.5}), row({1, 0})), ShapeError);
}

TEST_CASE("dice scalar cases") {
  CHECK(dice_loss(row({1, 1, 0, 0}), row({1, 0, 0, 0}), 1.0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(dice_loss(row({1, 0, 1}), row({1, 0, 1}), 1e-12) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(dice_loss(row({0, 0, 0}), row({1, 1, 1}), 1e-12) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(dice_loss(row({0, 0}), row({0, 0}), 1.0) == 0.0);
}

TEST_CASE("joint loss composes its parts") {
  Rng rng(1);
  const Tensor p = uniform_map({1, 1, 4, 4}, rng, 0.01, 0.99);
  Tensor l(1, 1, 4, 4);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = i % 3 == 0;
  CHECK(joint_loss(p, l, {1, 0, 1}).value == bce_loss(p, l));
  CHECK(joint_loss(p, l, {0, 1, 1}).value == dice_loss(p, l, 1));
  CHECK(joint_loss(Tensor(1, 1, 2, 2, 0.5), Tensor(1, 1, 2, 2, 0.0), {}).value ==
        doctest::Approx(std::numbers::ln2 + 2.0 / 3.0).epsilon(1e-12));
  CHECK(joint_loss(Tensor(1, 1, 2, 2, 0.5), Tensor(1, 1, 2, 2, 0.0), {}).value ==
        doctest::Approx(1.359814).epsilon(1e-6));
  CHECK_THROWS_AS((LossConfig{-1, 1, 1}.validate()), UsageError);
  CHECK_THROWS_AS((LossConfig{0, 0, 1}.validate()), UsageError);
  CHECK_THROWS_AS((LossConfig{1, 1, 0}.validate()), UsageError);
}

TEST_CASE("segmentation loss gradients match finite differences") {
  Rng rng(2);
  Tensor p = uniform_map({1, 1, 8, 8}, rng, 0.02, 0.98);
  Tensor l(1, 1, 8, 8);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = uniform_real(rng, 0, 1) < 0.4;
  const LossConfig cfg{0.7, 1.3, 1.0};
  const auto analytic = joint_loss(p, l, cfg).grad;
  auto f = [&] { return joint_loss(p, l, cfg).value; };
  const auto numeric = testing::numeric_gradient(f, p.data(), p.size());
  CHECK(testing::relative_error({analytic.data(), analytic.data() + analytic.size()}, numeric) < 1e-6);

  auto fb = [&] { return bce_loss(p, l); };
  auto gb = bce_loss_grad(p, l).grad;
  CHECK(testing::relative_error({gb.data(), gb.data() + gb.size()}, testing::numeric_gradient(fb, p.data(), p.size())) < 1e-6);
  auto fd = [&] { return dice_loss(p, l, 1.0); };
  auto gd = dice_loss_grad(p, l, 1.0).grad;
  CHECK(testing::relative_error({gd.data(), gd.data() + gd.size()}, testing::numeric_gradient(fd, p.data(), p.size())) < 1e-6);
}

TEST_CASE("losses are non-negative and bounded on random inputs") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Tensor p = uniform_map({1, 1, 5, 5}, rng, 0, 1);
    Tensor l(1, 1, 5, 5);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = uniform_real(rng, 0, 1) < 0.5;
    CHECK(bce_loss(p, l) >= 0);
    const double d = dice_loss(p, l, 1.0);
    CHECK((d >= 0 && d <= 1));
  }
}

TEST_CASE("cosine similarity and feature boxes") {
  CHECK(cosine_similarity({0.6, 0.8}, {0.8, 0.6}) == doctest::Approx(0.96).epsilon(1e-12));
  CHECK(cosine_similarity({0, 0}, {1, 2}) == 0.0);
  CHECK(feature_box({5, 9, 14, 10}, 4, 8, 8) == BoundingBox{1, 2, 3, 2});
  CHECK(feature_box({30, 30, 40, 40}, 4, 8, 8) == BoundingBox{7, 7, 7, 7});
}

TEST_CASE("contrastive objective on hand-built patches") {
  // One new instance whose 1x2 patches are (0.6, 0.8) and (0.8, 0.6).
  Tensor e(1, 1, 1, 2), fg(1, 1, 1, 2), bg(1, 1, 1, 2);
  e[0] = 0.8, e[1] = 0.6;
  bg[0] = 0.6, bg[1] = 0.8;
  BatchInstances inst;
  inst.new_buildings = {{box_instance(0, 0, 0, 7)}};
  inst.removed_buildings = {{}};
  CHECK(contrastive_on_projections(e, fg, bg, inst, 4).value == doctest::Approx(0.02).epsilon(1e-12));

  bg = e;  // perfect pull
  CHECK(contrastive_on_projections(e, fg, bg, inst, 4).value == doctest::Approx(0.0).epsilon(1e-12));

  BatchInstances rem;
  rem.new_buildings = {{}};
  rem.removed_buildings = {{box_instance(0, 0, 0, 7)}};
  fg[0] = -0.8, fg[1] = -0.6;  // perfect push
  CHECK(contrastive_on_projections(e, fg, bg, rem, 4).value == doctest::Approx(0.0).epsilon(1e-12));
  fg.zero();  // zero norm: D = 0
  CHECK(contrastive_on_projections(e, fg, bg, rem, 4).value == doctest::Approx(0.5));

  BatchInstances none{{{}}, {{}}};
  CHECK(contrastive_on_projections(e, fg, bg, none, 4).value == 0.0);
}

TEST_CASE("contrastive gradients on projections") {
  Rng rng(4);
  Tensor e = uniform_map({2, 1, 6, 6}, rng, 0.05, 0.95);
  Tensor fg = uniform_map({2, 1, 6, 6}, rng, 0.05, 0.95);
  Tensor bg = uniform_map({2, 1, 6, 6}, rng, 0.05, 0.95);
  BatchInstances inst;
  inst.new_buildings = {{box_instance(0, 0, 7, 11)}, {box_instance(8, 4, 20, 9), box_instance(2, 2, 3, 3)}};
  inst.removed_buildings = {{box_instance(12, 12, 23, 23)}, {}};
  const auto v = contrastive_on_projections(e, fg, bg, inst, 4);
  for (auto [t, g] : {std::pair{&e, &v.grad_existing}, std::pair{&fg, &v.grad_foreground}, std::pair{&bg, &v.grad_background}}) {
    auto f = [&] { return contrastive_on_projections(e, fg, bg, inst, 4).value; };
    const auto num = testing::numeric_gradient(f, t->data(), t->size());
    CHECK(testing::relative_error({g->data(), g->data() + g->size()}, num) < 1e-6);
  }
}

TEST_CASE("contrastive range over random configurations") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const Tensor e = uniform_map({1, 1, 8, 8}, rng, -1, 1);
    const Tensor fg = uniform_map({1, 1, 8, 8}, rng, -1, 1);
    const Tensor bg = uniform_map({1, 1, 8, 8}, rng, -1, 1);
    BatchInstances inst{{{}}, {{}}};
    const int n = static_cast<int>(uniform_int(rng, 0, 3)), r = static_cast<int>(uniform_int(rng, 0, 3));
    auto rand_box = [&] {
      const int r0 = static_cast<int>(uniform_int(rng, 0, 31)), c0 = static_cast<int>(uniform_int(rng, 0, 31));
      return box_instance(r0, c0, static_cast<int>(uniform_int(rng, r0, 31)), static_cast<int>(uniform_int(rng, c0, 31)));
    };
    for (int i = 0; i < n; ++i) inst.new_buildings[0].push_back(rand_box());
    for (int i = 0; i < r; ++i) inst.removed_buildings[0].push_back(rand_box());
    const double v = contrastive_on_projections(e, fg, bg, inst, 4).value;
    CHECK((v >= 0 && v <= 2));
  }
}

TEST_CASE("total loss sums and rejects non-finite parts") {
  CHECK(total_loss(0, 0, 0, 0).total == 0.0);
  CHECK(total_loss(0.1, 0.2, 0.3, 0.4).total == doctest::Approx(1.0).epsilon(1e-15));
  try {
    total_loss(0.1, std::nan(""), 0, 0);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("l_r") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss(0, 0, 0, INFINITY), NumericalError);
}

TEST_CASE("empty supervision gives finite head losses and no contrastive term") {
  nn::ModelConfig cfg = nn::ModelConfig::tiny();
  cfg.fused_channels = 8;
  nn::BceNet model(cfg);
  data::SceneParams sp;
  sp.rows = sp.cols = 64;
  sp.added = sp.removed = 0;
  sp.min_side = 6;
  sp.max_side = 12;
  const std::vector<data::Sample> batch{data::synthetic_scene(sp, "quiet")};
  const auto r = pipeline::batch_loss(model, batch, {}, {kernels::Exec::parallel, true}, false);
  CHECK(std::isfinite(r.l_n));
  CHECK(std::isfinite(r.l_r));
  CHECK(r.l_c == 0.0);
}

TEST_CASE("gradient of the total equals the sum of per-component gradients") {
  nn::ModelConfig cfg = nn::ModelConfig::tiny();
  cfg.fused_channels = 8;
  nn::BceNet model(cfg);
  data::SceneParams sp;
  sp.rows = sp.cols = 64;
  sp.min_side = 6;
  sp.max_side = 14;
  const data::Sample s = data::synthetic_scene(sp, "t");
  const std::vector<ImageTile> img{s.image};
  const std::vector<HistoricalMask> msk{s.mask};
  const auto planes = data::derive_targets(s.label);
  auto plane = [](const ByteRaster& r) {
    Tensor t(1, 1, r.rows(), r.cols());
    for (std::size_t i = 0; i < r.size(); ++i) t[i] = r.data()[i];
    return t;
  };
  BatchInstances inst{{extract_instances(s.label, 2)}, {extract_instances(s.label, 3)}};
  const nn::RunMode mode{kernels::Exec::parallel, true};

  auto grads_for = [&](int mask_bits) {
    model.zero_grad();
    const auto out = model.forward(img, msk, mode);
    nn::OutputGrads g;
    if (mask_bits & 1) g.p_new = joint_loss(out.p_new, plane(planes.new_buildings), {}).grad;
    if (mask_bits & 2) g.p_removed = joint_loss(out.p_removed, plane(planes.removed_buildings), {}).grad;
    if (mask_bits & 4) g.p_existing = joint_loss(out.p_existing, plane(planes.existing_buildings), {}).grad;
    if (mask_bits & 8) {
      auto c = contrastive_loss(out.features, out.foreground, out.background, inst, model.projector(), mode);
      g.features = std::move(c.grad_features);
      g.foreground = std::move(c.grad_foreground);
      g.background = std::move(c.grad_background);
    }
    model.backward(g, mode);
    std::vector<double> all;
    for (auto& np : model.parameters()) all.insert(all.end(), np.param->grad.data(), np.param->grad.data() + np.param->grad.size());
    return all;
  };
  const auto total = grads_for(15);
  std::vector<double> sum(total.size(), 0.0);
  for (int bit : {1, 2, 4, 8}) {
    const auto part = grads_for(bit);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += part[i];
  }
  CHECK(testing::relative_error(total, sum) < 1e-10);
}
