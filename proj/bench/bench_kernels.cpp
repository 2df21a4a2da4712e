// Serial reference against the OpenMP im2col/GEMM paths: wall time and agreement.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include <CLI11.hpp>

#include "bce/core/rng.hpp"
#include "bce/data/synthetic.hpp"
#include "bce/kernels/conv2d.hpp"
#include "bce/kernels/deform_conv.hpp"
#include "bce/kernels/exec.hpp"
#include "bce/kernels/gemm.hpp"
#include "bce/nn/model.hpp"

using namespace bce;
using kernels::ConvGeometry;
using kernels::Exec;

namespace {

double median_ms(int reps, const std::function<void()>& fn) {
  std::vector<double> t;
  fn();  // warm-up
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void row(const char* name, double serial, double parallel, double diff) {
  std::printf("%-28s %10.2f %10.2f %8.2fx %10.1e\n", name, serial, parallel, serial / parallel, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark: serial reference vs parallel path"};
  int size = 64, channels = 32, reps = 5, threads = 0;
  app.add_option("--size", size, "spatial extent of the conv inputs")->check(CLI::PositiveNumber);
  app.add_option("--channels", channels, "input/output channels")->check(CLI::PositiveNumber);
  app.add_option("--reps", reps, "timed repetitions (median reported)")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_threads(threads);

  std::printf("threads %d, %dx%d, %d channels, median of %d\n", kernels::max_threads(), size, size, channels, reps);
  std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "serial ms", "par. ms", "speedup", "max|diff|");

  Rng rng(1);
  {
    const int n = 4 * channels;
    const auto a = randn(static_cast<std::size_t>(n) * n, rng), b = randn(static_cast<std::size_t>(n) * n, rng);
    std::vector<double> c0(static_cast<std::size_t>(n) * n), c1(c0.size());
    const double ts = median_ms(reps, [&] {
      std::fill(c0.begin(), c0.end(), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double s = 0;
          for (int k = 0; k < n; ++k) s += a[i * n + k] * b[k * n + j];
          c0[i * n + j] = s;
        }
    });
    const double tp = median_ms(reps, [&] {
      std::fill(c1.begin(), c1.end(), 0.0);
      kernels::gemm_nn(n, n, n, a.data(), b.data(), c1.data());
    });
    char label[64];
    std::snprintf(label, sizeof label, "gemm %dx%d", n, n);
    row(label, ts, tp, max_diff(c0, c1));
  }

  const ConvGeometry g{channels, channels, 3, 1, 1, size, size};
  const auto x = randn(static_cast<std::size_t>(channels) * size * size, rng);
  const auto w = randn(g.weight_size(), rng);
  const auto bias = randn(channels, rng);
  std::vector<double> off = randn(2 * static_cast<std::size_t>(g.taps()) * g.out_positions(), rng);
  for (auto& o : off) o *= 0.7;
  const auto gy = randn(static_cast<std::size_t>(channels) * g.out_positions(), rng);
  std::vector<double> ys(gy.size()), yp(gy.size());

  row("conv3x3 forward", median_ms(reps, [&] { kernels::conv2d_forward(Exec::serial, g, x.data(), w.data(), bias.data(), ys.data()); }),
      median_ms(reps, [&] { kernels::conv2d_forward(Exec::parallel, g, x.data(), w.data(), bias.data(), yp.data()); }),
      max_diff(ys, yp));

  std::vector<double> gx[2], gw[2], gb[2], go[2];
  auto conv_back = [&](int m) {
    gx[m].assign(x.size(), 0.0);
    gw[m].assign(w.size(), 0.0);
    gb[m].assign(bias.size(), 0.0);
    kernels::conv2d_backward(m ? Exec::parallel : Exec::serial, g, x.data(), w.data(), gy.data(), gx[m].data(),
                             gw[m].data(), gb[m].data());
  };
  {
    const double ts = median_ms(reps, [&] { conv_back(0); });
    const double tp = median_ms(reps, [&] { conv_back(1); });
    row("conv3x3 backward", ts, tp, std::max(max_diff(gx[0], gx[1]), max_diff(gw[0], gw[1])));
  }

  row("deform3x3 forward",
      median_ms(reps, [&] { kernels::deform_conv_forward(Exec::serial, g, x.data(), off.data(), w.data(), bias.data(), ys.data()); }),
      median_ms(reps, [&] { kernels::deform_conv_forward(Exec::parallel, g, x.data(), off.data(), w.data(), bias.data(), yp.data()); }),
      max_diff(ys, yp));

  auto deform_back = [&](int m) {
    gx[m].assign(x.size(), 0.0);
    go[m].assign(off.size(), 0.0);
    gw[m].assign(w.size(), 0.0);
    gb[m].assign(bias.size(), 0.0);
    kernels::deform_conv_backward(m ? Exec::parallel : Exec::serial, g, x.data(), off.data(), w.data(), gy.data(),
                                  gx[m].data(), go[m].data(), gw[m].data(), gb[m].data());
  };
  {
    const double ts = median_ms(reps, [&] { deform_back(0); });
    const double tp = median_ms(reps, [&] { deform_back(1); });
    row("deform3x3 backward", ts, tp,
        std::max({max_diff(gx[0], gx[1]), max_diff(go[0], go[1]), max_diff(gw[0], gw[1])}));
  }

  {
    nn::ModelConfig cfg = nn::ModelConfig::tiny();
    cfg.fused_channels = 32;
    nn::BceNet model(cfg);
    data::SceneParams sp;
    sp.rows = sp.cols = std::max(32, size / 32 * 32);
    const auto s = data::synthetic_scene(sp, "bench");
    const std::vector<ImageTile> img{s.image};
    const std::vector<HistoricalMask> msk{s.mask};
    nn::ModelOutput out[2];
    const double ts = median_ms(reps, [&] { out[0] = model.forward(img, msk, {Exec::serial, false}); });
    const double tp = median_ms(reps, [&] { out[1] = model.forward(img, msk, {Exec::parallel, false}); });
    double d = 0;
    for (std::size_t i = 0; i < out[0].p_new.size(); ++i) d = std::max(d, std::abs(out[0].p_new[i] - out[1].p_new[i]));
    char label[64];
    std::snprintf(label, sizeof label, "tiny model forward %d", sp.rows);
    row(label, ts, tp, d);
  }
  return 0;
}
