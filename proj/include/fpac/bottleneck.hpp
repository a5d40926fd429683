#ifndef FPAC_BOTTLENECK_HPP
#define FPAC_BOTTLENECK_HPP

#include <vector>

#include "fpac/autodiff.hpp"
#include "fpac/featpoint.hpp"
#include "fpac/tensor.hpp"

namespace fpac {

// Batched, differentiable counterpart of extract()/build_state() for use in
// training graphs. Feature maps are [N, K, H, W]; coordinates and scalar
// features come out as [N, K].
template <typename T>
struct ExtractVars {
  typename Tape<T>::Var xs, ys, ms;
  int n = 0, k = 0;
};

template <typename T>
inline std::vector<T> grid_of(int n) {
  auto g = normalized_grid(n);
  return std::vector<T>(g.begin(), g.end());
}

template <typename T>
inline ExtractVars<T> extract_on_tape(Tape<T>& tape, typename Tape<T>::Var maps,
                                      const ExtractorConfig& cfg) {
  const Tensor<T>& v = tape.val(maps);
  ExtractVars<T> out;
  out.n = v.dim(0);
  out.k = v.dim(1);
  int h = v.dim(2), w = v.dim(3);
  T beta = static_cast<T>(cfg.temperature);
  if (cfg.mode == SoftmaxMode::separable) {
    out.xs = tape.expect_grid(tape.softmax_last(tape.mean_axis_h(maps), beta), grid_of<T>(w));
    out.ys = tape.expect_grid(tape.softmax_last(tape.mean_axis_w(maps), beta), grid_of<T>(h));
  } else {
    auto prob = tape.softmax_hw(maps, beta);
    out.xs = tape.expect_hw(prob, grid_of<T>(w), 3);
    out.ys = tape.expect_hw(prob, grid_of<T>(h), 2);
  }
  if (cfg.use_scalar_feature) {
    out.ms = tape.tanh_(tape.mean_hw(maps));
  } else {
    out.ms = tape.leaf(Tensor<T>({out.n, out.k}), false);
  }
  return out;
}

// Per-sample camera deltas broadcast to [N, K] constants.
template <typename T>
inline std::pair<typename Tape<T>::Var, typename Tape<T>::Var> delta_constants(
    Tape<T>& tape, const std::vector<CameraDelta>& deltas, int k) {
  int n = static_cast<int>(deltas.size());
  Tensor<T> dx({n, k}), dy({n, k});
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < k; ++i) {
      dx[static_cast<std::int64_t>(r) * k + i] = static_cast<T>(deltas[static_cast<std::size_t>(r)].dx);
      dy[static_cast<std::int64_t>(r) * k + i] = static_cast<T>(deltas[static_cast<std::size_t>(r)].dy);
    }
  return {tape.leaf(std::move(dx), false), tape.leaf(std::move(dy), false)};
}

// State tensor [N, 6K]: current triplets followed by per-step differences,
// with optional camera compensation of the previous frame and optional
// relative (mean-centered) coordinates.
template <typename T>
inline typename Tape<T>::Var build_state_on_tape(Tape<T>& tape, const ExtractVars<T>& cur,
                                                 const ExtractVars<T>& prev,
                                                 const std::vector<CameraDelta>* deltas,
                                                 const ExtractorConfig& cfg) {
  auto xs_t = cur.xs, ys_t = cur.ys;
  auto xs_p = prev.xs, ys_p = prev.ys;
  if (deltas) {
    auto [dx, dy] = delta_constants<T>(tape, *deltas, cur.k);
    xs_p = tape.clamp(tape.sub(xs_p, dx), T(-1), T(1));
    ys_p = tape.clamp(tape.sub(ys_p, dy), T(-1), T(1));
  }
  if (cfg.relative) {
    xs_t = tape.sub_mean_last(xs_t);
    ys_t = tape.sub_mean_last(ys_t);
    xs_p = tape.sub_mean_last(xs_p);
    ys_p = tape.sub_mean_last(ys_p);
  }
  auto pos = tape.interleave3(xs_t, ys_t, cur.ms);
  typename Tape<T>::Var vel;
  if (cfg.use_velocity) {
    auto vx = tape.sub(xs_t, xs_p);
    auto vy = tape.sub(ys_t, ys_p);
    auto vm = cfg.velocity_includes_scalar
                  ? tape.sub(cur.ms, prev.ms)
                  : tape.leaf(Tensor<T>({cur.n, cur.k}), false);
    vel = tape.interleave3(vx, vy, vm);
  } else {
    vel = tape.leaf(Tensor<T>({cur.n, 3 * cur.k}), false);
  }
  return tape.concat_last(pos, vel);
}

}  // namespace fpac

#endif  // FPAC_BOTTLENECK_HPP
