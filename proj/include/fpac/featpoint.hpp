#ifndef FPAC_FEATPOINT_HPP
#define FPAC_FEATPOINT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fpac/tensor.hpp"

namespace fpac {

// K spatial value maps, stored [channel][row][col].
struct FeatureMaps {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channels * height * width

  FeatureMaps() = default;
  FeatureMaps(int k, int h, int w)
      : channels(k), height(h), width(w),
        values(static_cast<std::size_t>(k) * h * w, 0.0) {
    if (k < 1 || h < 1 || w < 1)
      throw std::invalid_argument("feature maps: dimensions must be >= 1");
  }

  double& at(int k, int y, int x) {
    return values[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
  double at(int k, int y, int x) const {
    return values[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
  const double* channel(int k) const {
    return values.data() + static_cast<std::size_t>(k) * height * width;
  }
};

// Per-channel spatial probability distributions, same layout as FeatureMaps.
using ProbMaps = FeatureMaps;

struct FeaturePoint {
  double x = 0.0;
  double y = 0.0;
  double m = 0.0;
};

struct FeaturePointSet {
  std::vector<FeaturePoint> points;

  int size() const { return static_cast<int>(points.size()); }
};

// Camera translation between two frames, in normalized image coordinates.
struct CameraDelta {
  double dx = 0.0;
  double dy = 0.0;
};

enum class SoftmaxMode { separable, full2d };

struct ExtractorConfig {
  SoftmaxMode mode = SoftmaxMode::separable;
  double temperature = 0.5;
  bool relative = false;
  bool use_scalar_feature = true;
  bool use_velocity = true;
  // Whether the velocity block includes the scalar-feature difference.
  bool velocity_includes_scalar = true;
};

// Feature-point state: [x_1,y_1,m_1,...,x_K,y_K,m_K, dx_1,dy_1,dm_1,...],
// length 6K.
using StateVector = std::vector<double>;

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// softmax with max-subtraction; all-equal inputs give the exact uniform
// distribution.
inline void softmax_inplace(double* v, int n, double inv_beta) {
  double mx = v[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    v[i] = std::exp((v[i] - mx) * inv_beta);
    sum += v[i];
  }
  double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) v[i] *= inv;
}

}  // namespace detail

// n evenly spaced coordinates from -1 to 1 inclusive. n == 1 degenerates to
// {-1}.
inline std::vector<double> normalized_grid(int n) {
  if (n < 1) throw std::invalid_argument("normalized_grid: n must be >= 1");
  std::vector<double> g(static_cast<std::size_t>(n));
  if (n == 1) {
    g[0] = -1.0;
    return g;
  }
  double step = 2.0 / (n - 1);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = -1.0 + step * i;
  g[static_cast<std::size_t>(n - 1)] = 1.0;
  return g;
}

// Per-channel softmax over all H*W positions with temperature beta.
inline ProbMaps spatial_softmax_2d(const FeatureMaps& maps, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("spatial_softmax_2d: beta must be > 0");
  detail::check_finite(maps.values, "spatial_softmax_2d");
  ProbMaps out = maps;
  int hw = maps.height * maps.width;
  for (int k = 0; k < maps.channels; ++k)
    detail::softmax_inplace(out.values.data() + static_cast<std::size_t>(k) * hw, hw, 1.0 / beta);
  return out;
}

// Expectation of the normalized grid coordinates under per-channel
// distributions.
inline std::vector<std::pair<double, double>> expected_coords_2d(const ProbMaps& prob) {
  std::vector<double> gx = normalized_grid(prob.width);
  std::vector<double> gy = normalized_grid(prob.height);
  std::vector<std::pair<double, double>> out(static_cast<std::size_t>(prob.channels));
  for (int k = 0; k < prob.channels; ++k) {
    double sum = 0.0, ex = 0.0, ey = 0.0;
    for (int y = 0; y < prob.height; ++y) {
      for (int x = 0; x < prob.width; ++x) {
        double p = prob.at(k, y, x);
        sum += p;
        ex += p * gx[static_cast<std::size_t>(x)];
        ey += p * gy[static_cast<std::size_t>(y)];
      }
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw std::invalid_argument("expected_coords_2d: probabilities do not sum to 1");
    out[static_cast<std::size_t>(k)] = {ex, ey};
  }
  return out;
}

enum class PoolAxis { rows, cols };

// Mean-pool each channel along one axis. Pooling rows gives a profile over
// columns (length W); pooling cols gives a profile over rows (length H).
inline std::vector<std::vector<double>> mean_pool_axis(const FeatureMaps& maps, PoolAxis axis) {
  detail::check_finite(maps.values, "mean_pool_axis");
  int out_len = axis == PoolAxis::rows ? maps.width : maps.height;
  int pooled = axis == PoolAxis::rows ? maps.height : maps.width;
  std::vector<std::vector<double>> out(
      static_cast<std::size_t>(maps.channels),
      std::vector<double>(static_cast<std::size_t>(out_len), 0.0));
  for (int k = 0; k < maps.channels; ++k) {
    auto& g = out[static_cast<std::size_t>(k)];
    for (int y = 0; y < maps.height; ++y)
      for (int x = 0; x < maps.width; ++x) {
        int idx = axis == PoolAxis::rows ? x : y;
        g[static_cast<std::size_t>(idx)] += maps.at(k, y, x);
      }
    for (double& v : g) v /= pooled;
  }
  return out;
}

// Separable coordinates: softmax over the mean-pooled 1D profiles.
inline std::vector<std::pair<double, double>> expected_coords_separable(const FeatureMaps& maps,
                                                                        double beta) {
  if (!(beta > 0.0))
    throw std::invalid_argument("expected_coords_separable: beta must be > 0");
  detail::check_finite(maps.values, "expected_coords_separable");
  auto gx_profiles = mean_pool_axis(maps, PoolAxis::rows);
  auto gy_profiles = mean_pool_axis(maps, PoolAxis::cols);
  std::vector<double> gridx = normalized_grid(maps.width);
  std::vector<double> gridy = normalized_grid(maps.height);
  std::vector<std::pair<double, double>> out(static_cast<std::size_t>(maps.channels));
  double inv_beta = 1.0 / beta;
  for (int k = 0; k < maps.channels; ++k) {
    auto& px = gx_profiles[static_cast<std::size_t>(k)];
    auto& py = gy_profiles[static_cast<std::size_t>(k)];
    detail::softmax_inplace(px.data(), maps.width, inv_beta);
    detail::softmax_inplace(py.data(), maps.height, inv_beta);
    double ex = 0.0, ey = 0.0;
    for (int x = 0; x < maps.width; ++x) ex += px[static_cast<std::size_t>(x)] * gridx[static_cast<std::size_t>(x)];
    for (int y = 0; y < maps.height; ++y) ey += py[static_cast<std::size_t>(y)] * gridy[static_cast<std::size_t>(y)];
    out[static_cast<std::size_t>(k)] = {ex, ey};
  }
  return out;
}

// tanh-activated per-channel mean of the feature maps.
inline std::vector<double> scalar_features(const FeatureMaps& maps) {
  detail::check_finite(maps.values, "scalar_features");
  std::vector<double> out(static_cast<std::size_t>(maps.channels));
  int hw = maps.height * maps.width;
  for (int k = 0; k < maps.channels; ++k) {
    const double* c = maps.channel(k);
    double sum = 0.0;
    for (int i = 0; i < hw; ++i) sum += c[i];
    out[static_cast<std::size_t>(k)] = std::tanh(sum / hw);
  }
  return out;
}

// Full feature-point extraction: coordinates by the configured softmax mode,
// plus the scalar features (zeroed when disabled so the layout is fixed).
inline FeaturePointSet extract(const FeatureMaps& maps, const ExtractorConfig& cfg) {
  std::vector<std::pair<double, double>> coords;
  if (cfg.mode == SoftmaxMode::separable) {
    coords = expected_coords_separable(maps, cfg.temperature);
  } else {
    coords = expected_coords_2d(spatial_softmax_2d(maps, cfg.temperature));
  }
  std::vector<double> ms;
  if (cfg.use_scalar_feature) ms = scalar_features(maps);
  FeaturePointSet fps;
  fps.points.resize(static_cast<std::size_t>(maps.channels));
  for (int k = 0; k < maps.channels; ++k) {
    auto& p = fps.points[static_cast<std::size_t>(k)];
    p.x = coords[static_cast<std::size_t>(k)].first;
    p.y = coords[static_cast<std::size_t>(k)].second;
    p.m = cfg.use_scalar_feature ? ms[static_cast<std::size_t>(k)] : 0.0;
  }
  return fps;
}

// Subtract the mean coordinate over all points; scalar features pass through.
inline FeaturePointSet to_relative(const FeaturePointSet& fps) {
  if (fps.points.empty()) throw std::invalid_argument("to_relative: empty point set");
  double mx = 0.0, my = 0.0;
  for (const auto& p : fps.points) {
    mx += p.x;
    my += p.y;
  }
  mx /= fps.points.size();
  my /= fps.points.size();
  FeaturePointSet out = fps;
  for (auto& p : out.points) {
    p.x -= mx;
    p.y -= my;
  }
  return out;
}

// Translate previous-frame points so that a world-static point observed
// through a camera that moved by delta lands on its current-frame coordinate.
// Results are clamped to the normalized range.
inline FeaturePointSet compensate_camera(const FeaturePointSet& fps_prev,
                                         const CameraDelta& delta) {
  if (!std::isfinite(delta.dx) || !std::isfinite(delta.dy))
    throw std::invalid_argument("compensate_camera: non-finite delta");
  FeaturePointSet out = fps_prev;
  for (auto& p : out.points) {
    p.x = std::clamp(p.x - delta.dx, -1.0, 1.0);
    p.y = std::clamp(p.y - delta.dy, -1.0, 1.0);
  }
  return out;
}

// Concatenate current points with per-step differences into the 6K state
// layout. delta, when present, compensates the previous frame for camera
// motion first.
inline StateVector build_state(const FeaturePointSet& fps_t, const FeaturePointSet& fps_prev,
                               const CameraDelta* delta, const ExtractorConfig& cfg) {
  if (fps_t.size() != fps_prev.size())
    throw std::invalid_argument("build_state: point counts differ");
  FeaturePointSet prev = delta ? compensate_camera(fps_prev, *delta) : fps_prev;
  FeaturePointSet cur = fps_t;
  if (cfg.relative) {
    cur = to_relative(cur);
    prev = to_relative(prev);
  }
  int k = cur.size();
  StateVector s(static_cast<std::size_t>(6 * k), 0.0);
  for (int i = 0; i < k; ++i) {
    const auto& pc = cur.points[static_cast<std::size_t>(i)];
    s[static_cast<std::size_t>(3 * i) + 0] = pc.x;
    s[static_cast<std::size_t>(3 * i) + 1] = pc.y;
    s[static_cast<std::size_t>(3 * i) + 2] = pc.m;
    if (cfg.use_velocity) {
      const auto& pp = prev.points[static_cast<std::size_t>(i)];
      s[static_cast<std::size_t>(3 * (k + i)) + 0] = pc.x - pp.x;
      s[static_cast<std::size_t>(3 * (k + i)) + 1] = pc.y - pp.y;
      s[static_cast<std::size_t>(3 * (k + i)) + 2] =
          cfg.velocity_includes_scalar ? pc.m - pp.m : 0.0;
    }
  }
  return s;
}

}  // namespace fpac

#endif  // FPAC_FEATPOINT_HPP
