#include "fpac/bottleneck.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fpac/kernels.hpp"
#include "fpac/rng.hpp"
#include "test_util.hpp"

using namespace fpac;
using Var = Tape<double>::Var;

namespace {

Tensor<double> maps_to_tensor(const FeatureMaps& m) {
  Tensor<double> t({1, m.channels, m.height, m.width});
  t.data = m.values;
  return t;
}

// extract() on the tape, flattened to [x_1..x_K, y_1..y_K, m_1..m_K]
std::vector<double> tape_extract_values(const FeatureMaps& m, const ExtractorConfig& cfg) {
  Tape<double> tape;
  Var in = tape.leaf(maps_to_tensor(m), false);
  auto ev = extract_on_tape(tape, in, cfg);
  std::vector<double> out;
  auto append = [&](Var v) {
    const auto& t = tape.val(v);
    out.insert(out.end(), t.data.begin(), t.data.end());
  };
  append(ev.xs);
  append(ev.ys);
  append(ev.ms);
  return out;
}

}  // namespace

TEST(TapeExtract, MatchesPlainExtract) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMaps m = test::random_maps(3, 5, 7, rng, 3.0);
    for (auto mode : {SoftmaxMode::separable, SoftmaxMode::full2d}) {
      for (double beta : {0.5, 1.0}) {
        ExtractorConfig cfg;
        cfg.mode = mode;
        cfg.temperature = beta;
        auto got = tape_extract_values(m, cfg);
        auto want = extract(m, cfg);
        for (int k = 0; k < 3; ++k) {
          EXPECT_NEAR(got[k], want.points[k].x, 1e-12);
          EXPECT_NEAR(got[3 + k], want.points[k].y, 1e-12);
          EXPECT_NEAR(got[6 + k], want.points[k].m, 1e-12);
        }
      }
    }
  }
}

TEST(TapeExtract, BatchedKernelsMatchPlainExtract) {
  Rng rng(22);
  int n = 4, k = 3, h = 6, w = 5;
  Tensor<double> batch({n, k, h, w});
  for (auto& v : batch.data) v = rng.uniform(-2, 2);
  double beta = 0.5;
  Tensor<double> xs, ys, prob;
  std::vector<double> bx, by;
  kernels::separable_coords(batch, beta, xs, ys, bx, by);
  Tensor<double> xs2, ys2;
  kernels::full2d_coords(batch, beta, prob, xs2, ys2);
  for (int s = 0; s < n; ++s) {
    FeatureMaps m(k, h, w);
    for (int c = 0; c < k; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          m.at(c, y, x) = batch.at({s, c, y, x});
    ExtractorConfig sep;
    sep.temperature = beta;
    auto want_sep = extract(m, sep);
    ExtractorConfig full;
    full.mode = SoftmaxMode::full2d;
    full.temperature = beta;
    auto want_full = extract(m, full);
    for (int c = 0; c < k; ++c) {
      EXPECT_NEAR(xs.at({s, c}), want_sep.points[c].x, 1e-12);
      EXPECT_NEAR(ys.at({s, c}), want_sep.points[c].y, 1e-12);
      EXPECT_NEAR(xs2.at({s, c}), want_full.points[c].x, 1e-12);
      EXPECT_NEAR(ys2.at({s, c}), want_full.points[c].y, 1e-12);
    }
  }
}

// Analytic gradients of every extract() output with respect to every
// feature-map entry, against central finite differences.
TEST(TapeExtract, GradientsMatchFiniteDifferences) {
  Rng rng(23);
  const int k = 4, h = 8, w = 8;
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    FeatureMaps m = test::random_maps(k, h, w, rng, 1.5);
    for (auto mode : {SoftmaxMode::separable, SoftmaxMode::full2d}) {
      for (double beta : {0.5, 1.0}) {
        ExtractorConfig cfg;
        cfg.mode = mode;
        cfg.temperature = beta;

        Tape<double> tape;
        Var in = tape.leaf(maps_to_tensor(m), true);
        auto ev = extract_on_tape(tape, in, cfg);
        Var outs[3] = {ev.xs, ev.ys, ev.ms};
        for (int block = 0; block < 3; ++block) {
          for (int c = 0; c < k; ++c) {
            tape.zero_grads();
            Tensor<double> seed({1, k});
            seed[c] = 1.0;
            tape.backward_seed(outs[block], seed);
            std::vector<double> analytic = tape.grad(in).data;

            auto f = [&](const std::vector<double>& vals) {
              FeatureMaps mm = m;
              mm.values = vals;
              auto fps = extract(mm, cfg);
              return block == 0 ? fps.points[c].x
                                : (block == 1 ? fps.points[c].y : fps.points[c].m);
            };
            auto numeric = test::finite_diff(m.values, 1e-4, f);
            worst = std::max(worst, test::max_rel_err(analytic, numeric));
          }
        }
      }
    }
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(TapeBuildState, MatchesPlainBuildState) {
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureMaps mt = test::random_maps(3, 5, 5, rng, 2.0);
    FeatureMaps mp = test::random_maps(3, 5, 5, rng, 2.0);
    for (bool relative : {false, true}) {
      for (bool use_delta : {false, true}) {
        for (bool use_vel : {false, true}) {
          ExtractorConfig cfg;
          cfg.relative = relative;
          cfg.use_velocity = use_vel;
          CameraDelta delta{0.15, -0.05};

          auto want = build_state(extract(mt, cfg), extract(mp, cfg),
                                  use_delta ? &delta : nullptr, cfg);

          Tape<double> tape;
          Var vt = tape.leaf(maps_to_tensor(mt), false);
          Var vp = tape.leaf(maps_to_tensor(mp), false);
          auto et = extract_on_tape(tape, vt, cfg);
          auto ep = extract_on_tape(tape, vp, cfg);
          std::vector<CameraDelta> deltas = {delta};
          Var sv = build_state_on_tape(tape, et, ep, use_delta ? &deltas : nullptr, cfg);
          const auto& got = tape.val(sv);
          ASSERT_EQ(got.numel(), static_cast<std::int64_t>(want.size()));
          for (std::size_t i = 0; i < want.size(); ++i)
            EXPECT_NEAR(got[static_cast<std::int64_t>(i)], want[i], 1e-12);
        }
      }
    }
  }
}

TEST(TapeBuildState, GradientsFlowThroughFullStatePath) {
  Rng rng(25);
  const int k = 2, h = 6, w = 6;
  FeatureMaps mt = test::random_maps(k, h, w, rng);
  FeatureMaps mp = test::random_maps(k, h, w, rng);
  ExtractorConfig cfg;
  cfg.relative = true;

  Tape<double> tape;
  Var vt = tape.leaf(maps_to_tensor(mt), true);
  Var vp = tape.leaf(maps_to_tensor(mp), true);
  auto et = extract_on_tape(tape, vt, cfg);
  auto ep = extract_on_tape(tape, vp, cfg);
  Var sv = build_state_on_tape(tape, et, ep, nullptr, cfg);
  Var loss = tape.mean_all(tape.square(sv));
  tape.backward(loss);
  std::vector<double> analytic_t = tape.grad(vt).data;
  std::vector<double> analytic_p = tape.grad(vp).data;

  auto eval = [&](const std::vector<double>& tv, const std::vector<double>& pv) {
    FeatureMaps a = mt, b = mp;
    a.values = tv;
    b.values = pv;
    auto s = build_state(extract(a, cfg), extract(b, cfg), nullptr, cfg);
    double acc = 0;
    for (double x : s) acc += x * x;
    return acc / static_cast<double>(s.size());
  };
  auto num_t = test::finite_diff(mt.values, 1e-5,
                                 [&](const std::vector<double>& v) { return eval(v, mp.values); });
  auto num_p = test::finite_diff(mp.values, 1e-5,
                                 [&](const std::vector<double>& v) { return eval(mt.values, v); });
  EXPECT_LT(test::max_rel_err(analytic_t, num_t), 1e-4);
  EXPECT_LT(test::max_rel_err(analytic_p, num_p), 1e-4);
}
