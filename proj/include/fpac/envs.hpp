#ifndef FPAC_ENVS_HPP
#define FPAC_ENVS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpac/featpoint.hpp"
#include "fpac/image.hpp"
#include "fpac/rng.hpp"

namespace fpac {

struct Camera2D {
  double cx = 0.0;
  double cy = 0.0;
  double scale = 2.0;  // world units spanned by the frame width
};

// World -> normalized image coordinates. x grows rightward; normalized y
// grows downward (row 0 of the frame is y = -1), world y grows upward.
// Out-of-frame points yield values outside [-1, 1], unclamped.
inline std::pair<double, double> project(double wx, double wy, const Camera2D& cam) {
  double nx = (wx - cam.cx) * 2.0 / cam.scale;
  double ny = (cam.cy - wy) * 2.0 / cam.scale;
  return {nx, ny};
}

inline std::pair<double, double> unproject(double nx, double ny, const Camera2D& cam) {
  double wx = cam.cx + nx * cam.scale / 2.0;
  double wy = cam.cy - ny * cam.scale / 2.0;
  return {wx, wy};
}

struct EnvSpec {
  std::string name;
  int action_dim = 1;
  int frame_channels = 1;
  int frame_height = 48;
  int frame_width = 48;
  int episode_length = 1000;  // raw physics steps
  int action_repeat = 4;
  double dt = 0.02;
};

struct PhysicsState {
  std::array<double, 8> q{};  // task-specific slots
  double camera_x = 0.0;      // scroll_runner camera center
  int raw_step = 0;
  bool done = false;
  std::uint64_t seed = 0;  // respawn sequences are pure functions of this
  int respawn_count = 0;
};

struct EnvInfo {
  FeaturePointSet keypoints;
  std::vector<double> raw_state;
  bool action_clamped = false;
};

struct StepResult {
  Image frame;
  double reward = 0.0;
  bool done = false;      // episode boundary (time limit)
  bool terminal = false;  // true termination; none of the built-in tasks has one
  CameraDelta camera_delta;
  EnvInfo info;
};

namespace raster {

inline void fill(Image& img, double v) {
  std::fill(img.values.begin(), img.values.end(), v);
}

inline void blend_pixel(Image& img, int x, int y, double intensity, double alpha) {
  if (alpha <= 0.0) return;
  for (int c = 0; c < img.channels; ++c) {
    double& dst = img.at(c, y, x);
    dst = dst * (1.0 - alpha) + intensity * alpha;
  }
}

// world coordinates of the center of pixel (px, py)
inline std::pair<double, double> pixel_world(const Image& img, const Camera2D& cam, int px,
                                             int py) {
  double nx = img.width > 1 ? -1.0 + 2.0 * px / (img.width - 1) : -1.0;
  double ny = img.height > 1 ? -1.0 + 2.0 * py / (img.height - 1) : -1.0;
  return unproject(nx, ny, cam);
}

inline void draw_disk(Image& img, const Camera2D& cam, double wx, double wy, double wr,
                      double intensity) {
  double pitch = cam.scale / (img.width - 1);  // world units per pixel
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      auto [x, y] = pixel_world(img, cam, px, py);
      double d = std::hypot(x - wx, y - wy);
      double alpha = std::clamp((wr - d) / pitch + 0.5, 0.0, 1.0);
      blend_pixel(img, px, py, intensity, alpha);
    }
}

// axis-aligned rectangle given by world corner coordinates
inline void draw_rect(Image& img, const Camera2D& cam, double x0, double y0, double x1,
                      double y1, double intensity) {
  double pitch = cam.scale / (img.width - 1);
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      auto [x, y] = pixel_world(img, cam, px, py);
      double dx = std::min(x - x0, x1 - x);
      double dy = std::min(y - y0, y1 - y);
      double d = std::min(dx, dy);
      double alpha = std::clamp(d / pitch + 0.5, 0.0, 1.0);
      blend_pixel(img, px, py, intensity, alpha);
    }
}

// capsule between two world points
inline void draw_rod(Image& img, const Camera2D& cam, double x0, double y0, double x1,
                     double y1, double half_width, double intensity) {
  double pitch = cam.scale / (img.width - 1);
  double vx = x1 - x0, vy = y1 - y0;
  double len2 = vx * vx + vy * vy;
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      auto [x, y] = pixel_world(img, cam, px, py);
      double t = len2 > 0 ? std::clamp(((x - x0) * vx + (y - y0) * vy) / len2, 0.0, 1.0) : 0.0;
      double d = std::hypot(x - (x0 + t * vx), y - (y0 + t * vy));
      double alpha = std::clamp((half_width - d) / pitch + 0.5, 0.0, 1.0);
      blend_pixel(img, px, py, intensity, alpha);
    }
}

}  // namespace raster

// Deterministic software-rendered continuous-control tasks. All physics uses
// semi-implicit Euler with fixed dt; every trajectory is a pure function of
// (seed, action sequence).
class Env {
 public:
  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"point_reacher_dense", "point_reacher_sparse",
                                               "pendulum_swingup", "ball_catcher",
                                               "scroll_runner"};
    return n;
  }

  explicit Env(const std::string& name, int frame_height = 48, int frame_width = 48,
               int frame_channels = 1, int action_repeat = 4, int episode_length = 1000) {
    if (name == "point_reacher_dense") kind_ = Kind::reacher_dense;
    else if (name == "point_reacher_sparse") kind_ = Kind::reacher_sparse;
    else if (name == "pendulum_swingup") kind_ = Kind::pendulum;
    else if (name == "ball_catcher") kind_ = Kind::catcher;
    else if (name == "scroll_runner") kind_ = Kind::scroll;
    else throw std::invalid_argument("unknown environment: " + name);
    spec_.name = name;
    spec_.action_dim = (kind_ == Kind::reacher_dense || kind_ == Kind::reacher_sparse) ? 2 : 1;
    spec_.frame_channels = frame_channels;
    spec_.frame_height = frame_height;
    spec_.frame_width = frame_width;
    spec_.action_repeat = action_repeat;
    spec_.episode_length = episode_length;
    if (spec_.episode_length % spec_.action_repeat != 0)
      throw std::invalid_argument("episode_length must be divisible by action_repeat");
  }

  const EnvSpec& spec() const { return spec_; }
  const PhysicsState& state() const { return state_; }

  StepResult reset(std::uint64_t seed) {
    Rng rng(split_seed(seed, 0x45f5));
    state_ = PhysicsState{};
    state_.seed = seed;
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse: {
        state_.q[0] = rng.uniform(-0.75, 0.75);
        state_.q[1] = rng.uniform(-0.75, 0.75);
        // target re-drawn until it is not on top of the agent
        for (int tries = 0; tries < 64; ++tries) {
          state_.q[4] = rng.uniform(-0.75, 0.75);
          state_.q[5] = rng.uniform(-0.75, 0.75);
          if (std::hypot(state_.q[4] - state_.q[0], state_.q[5] - state_.q[1]) > 0.4) break;
        }
        break;
      }
      case Kind::pendulum:
        state_.q[0] = kPi + rng.uniform(-0.1, 0.1);  // hanging down
        state_.q[1] = 0.0;
        break;
      case Kind::catcher:
        state_.q[0] = 0.0;
        spawn_ball();
        break;
      case Kind::scroll:
        state_.q[0] = 0.0;
        state_.q[1] = 0.0;
        state_.camera_x = 0.0;
        break;
    }
    prev_camera_ = camera(state_);
    StepResult r;
    r.frame = render(state_, prev_camera_);
    r.info = info(state_);
    return r;
  }

  StepResult step(const std::vector<double>& action) {
    if (state_.done) throw std::logic_error("step: episode is done; call reset");
    if (static_cast<int>(action.size()) != spec_.action_dim)
      throw std::invalid_argument("step: wrong action dimension");
    StepResult r;
    std::vector<double> a = action;
    for (double& v : a) {
      if (v < -1.0 || v > 1.0) {
        v = std::clamp(v, -1.0, 1.0);
        r.info.action_clamped = true;
      }
    }
    double reward = 0.0;
    for (int i = 0; i < spec_.action_repeat; ++i) {
      reward += raw_step(a);
      ++state_.raw_step;
    }
    state_.done = state_.raw_step >= spec_.episode_length;
    Camera2D cam = camera(state_);
    r.frame = render(state_, cam);
    r.reward = reward;
    r.done = state_.done;
    r.terminal = false;  // all built-in tasks end by time limit only
    r.camera_delta.dx = (cam.cx - prev_camera_.cx) * 2.0 / cam.scale;
    r.camera_delta.dy = (prev_camera_.cy - cam.cy) * 2.0 / cam.scale;
    prev_camera_ = cam;
    EnvInfo inf = info(state_);
    inf.action_clamped = r.info.action_clamped;
    r.info = std::move(inf);
    return r;
  }

  Camera2D camera(const PhysicsState& s) const {
    Camera2D cam;
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse:
      case Kind::pendulum:
        cam.scale = 2.4;
        break;
      case Kind::catcher:
        cam.scale = 2.2;
        break;
      case Kind::scroll:
        cam.cx = s.q[0];  // tracks the agent
        cam.scale = 3.0;
        break;
    }
    return cam;
  }

  Image render(const PhysicsState& s, const Camera2D& cam) const {
    Image img(spec_.frame_channels, spec_.frame_height, spec_.frame_width);
    raster::fill(img, shade(0));
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse:
        raster::draw_disk(img, cam, s.q[4], s.q[5], 0.16, shade(2));
        raster::draw_disk(img, cam, s.q[0], s.q[1], 0.12, shade(1));
        break;
      case Kind::pendulum: {
        double tx = kPoleLen * std::sin(s.q[0]);
        double ty = kPoleLen * std::cos(s.q[0]);
        raster::draw_rod(img, cam, 0.0, 0.0, tx, ty, 0.035, shade(3));
        raster::draw_disk(img, cam, 0.0, 0.0, 0.05, shade(2));
        raster::draw_disk(img, cam, tx, ty, 0.13, shade(1));
        break;
      }
      case Kind::catcher:
        raster::draw_rect(img, cam, s.q[0] - 0.22, kPaddleY - 0.04, s.q[0] + 0.22,
                          kPaddleY + 0.04, shade(3));
        raster::draw_disk(img, cam, s.q[1], s.q[2], 0.10, shade(1));
        break;
      case Kind::scroll: {
        // striped ground provides the motion cue under the tracking camera
        double pitch = cam.scale / (img.width - 1);
        for (int py = 0; py < img.height; ++py)
          for (int px = 0; px < img.width; ++px) {
            auto [wx, wy] = raster::pixel_world(img, cam, px, py);
            if (wy < kGroundY) {
              double edge = std::clamp((kGroundY - wy) / pitch + 0.5, 0.0, 1.0);
              long stripe = static_cast<long>(std::floor(wx / 0.4));
              raster::blend_pixel(img, px, py, stripe % 2 == 0 ? shade(4) : shade(5), edge);
            }
          }
        for (double post : nearby_posts(cam.cx))
          raster::draw_rect(img, cam, post - 0.06, kGroundY, post + 0.06, kGroundY + 0.5,
                            shade(3));
        raster::draw_disk(img, cam, s.q[0], kRunnerY, 0.15, shade(1));
        break;
      }
    }
    return img;
  }

  // Ground-truth object-center keypoints through the given camera.
  // Coordinates are clamped into the normalized range; out-of-frame objects
  // are flagged with m = -1.
  FeaturePointSet true_keypoints(const PhysicsState& s, const Camera2D& cam) const {
    FeaturePointSet fps;
    auto push = [&](double wx, double wy) {
      auto [nx, ny] = project(wx, wy, cam);
      bool visible = nx >= -1.0 && nx <= 1.0 && ny >= -1.0 && ny <= 1.0;
      fps.points.push_back(
          {std::clamp(nx, -1.0, 1.0), std::clamp(ny, -1.0, 1.0), visible ? 1.0 : -1.0});
    };
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse:
        push(s.q[0], s.q[1]);  // agent
        push(s.q[4], s.q[5]);  // target
        break;
      case Kind::pendulum:
        push(kPoleLen * std::sin(s.q[0]), kPoleLen * std::cos(s.q[0]));  // pole tip
        break;
      case Kind::catcher:
        push(s.q[1], s.q[2]);      // ball
        push(s.q[0], kPaddleY);    // paddle
        break;
      case Kind::scroll: {
        push(s.q[0], kRunnerY);  // agent
        for (double post : nearby_posts(cam.cx)) push(post, kGroundY + 0.25);
        break;
      }
    }
    return fps;
  }

  int num_objects() const {
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse:
      case Kind::catcher:
        return 2;
      case Kind::pendulum:
        return 1;
      case Kind::scroll:
        return 3;
    }
    return 0;
  }

  // Low-dimensional observation for the state-based agent.
  std::vector<double> state_obs(const PhysicsState& s) const {
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse:
        return {s.q[0], s.q[1], s.q[2] / 2.0, s.q[3] / 2.0, s.q[4], s.q[5]};
      case Kind::pendulum:
        return {std::cos(s.q[0]), std::sin(s.q[0]), s.q[1] / 8.0};
      case Kind::catcher:
        return {s.q[0], s.q[1], s.q[2], s.q[3], s.q[4]};
      case Kind::scroll:
        return {s.q[1] / 2.0, std::sin(2.0 * kPi * s.q[0] / 2.5),
                std::cos(2.0 * kPi * s.q[0] / 2.5)};
    }
    return {};
  }

  int state_obs_dim() const { return static_cast<int>(state_obs(state_).size()); }

  // alternate palette for appearance-invariance tests
  void set_palette(int palette) { palette_ = palette; }

 private:
  enum class Kind { reacher_dense, reacher_sparse, pendulum, catcher, scroll };

  static constexpr double kPi = 3.14159265358979323846;
  static constexpr double kPoleLen = 0.85;
  static constexpr double kPaddleY = -0.75;
  static constexpr double kGroundY = -0.45;
  static constexpr double kRunnerY = -0.22;

  // shade(i): 0 background, 1 agent/ball, 2 target/pivot, 3 rod/paddle/post,
  // 4/5 ground stripes
  double shade(int i) const {
    static constexpr double base[6] = {0.12, 1.00, 0.55, 0.80, 0.30, 0.45};
    static constexpr double alt[6] = {0.05, 0.70, 0.95, 0.60, 0.20, 0.35};
    return palette_ == 0 ? base[i] : alt[i];
  }

  std::vector<double> nearby_posts(double cx) const {
    double lo = 2.5 * std::floor(cx / 2.5);
    return {lo, lo + 2.5};
  }

  void spawn_ball() {
    Rng rng(split_seed(state_.seed, 0xba11 + static_cast<std::uint64_t>(state_.respawn_count)));
    state_.q[1] = rng.uniform(-0.7, 0.7);
    state_.q[2] = 0.95;
    state_.q[3] = rng.uniform(-0.6, 0.6);
    state_.q[4] = 0.0;
    ++state_.respawn_count;
  }

  // one raw physics step; returns the raw reward
  double raw_step(const std::vector<double>& a) {
    double dt = spec_.dt;
    switch (kind_) {
      case Kind::reacher_dense:
      case Kind::reacher_sparse: {
        for (int i = 0; i < 2; ++i) {
          state_.q[2 + i] += dt * (8.0 * a[static_cast<std::size_t>(i)] - 4.0 * state_.q[2 + i]);
          state_.q[2 + i] = std::clamp(state_.q[2 + i], -2.0, 2.0);
          state_.q[i] += dt * state_.q[2 + i];
          if (state_.q[i] < -0.9 || state_.q[i] > 0.9) {
            state_.q[i] = std::clamp(state_.q[i], -0.9, 0.9);
            state_.q[2 + i] = 0.0;
          }
        }
        double dist = std::hypot(state_.q[0] - state_.q[4], state_.q[1] - state_.q[5]);
        if (kind_ == Kind::reacher_dense) return std::max(0.0, 1.0 - dist / 2.0);
        return dist < 0.25 ? 1.0 : 0.0;
      }
      case Kind::pendulum: {
        double theta = state_.q[0];
        double acc = 15.0 * std::sin(theta) + 6.0 * a[0] - 0.1 * state_.q[1];
        state_.q[1] = std::clamp(state_.q[1] + dt * acc, -8.0, 8.0);
        state_.q[0] += dt * state_.q[1];
        while (state_.q[0] > kPi) state_.q[0] -= 2.0 * kPi;
        while (state_.q[0] <= -kPi) state_.q[0] += 2.0 * kPi;
        return (std::cos(state_.q[0]) + 1.0) / 2.0;
      }
      case Kind::catcher: {
        state_.q[0] = std::clamp(state_.q[0] + dt * 1.6 * a[0], -0.8, 0.8);
        state_.q[4] -= dt * 2.2;
        state_.q[1] += dt * state_.q[3];
        state_.q[2] += dt * state_.q[4];
        if (state_.q[1] < -0.92 || state_.q[1] > 0.92) {
          state_.q[1] = std::clamp(state_.q[1], -0.92, 0.92);
          state_.q[3] = -state_.q[3];
        }
        bool caught = std::fabs(state_.q[1] - state_.q[0]) < 0.22 &&
                      std::fabs(state_.q[2] - kPaddleY) < 0.08;
        if (caught) {
          spawn_ball();
          return 1.0;
        }
        if (state_.q[2] < -0.98) spawn_ball();
        return 0.0;
      }
      case Kind::scroll: {
        state_.q[1] += dt * (6.0 * a[0] - 3.0 * state_.q[1]);
        state_.q[1] = std::clamp(state_.q[1], -2.0, 2.0);
        state_.q[0] += dt * state_.q[1];
        state_.camera_x = state_.q[0];
        return std::clamp(state_.q[1] / 2.0, -1.0, 1.0);
      }
    }
    return 0.0;
  }

  EnvInfo info(const PhysicsState& s) const {
    EnvInfo inf;
    inf.keypoints = true_keypoints(s, camera(s));
    inf.raw_state = state_obs(s);
    return inf;
  }

  Kind kind_;
  EnvSpec spec_;
  PhysicsState state_;
  Camera2D prev_camera_;
  int palette_ = 0;
};

}  // namespace fpac

#endif  // FPAC_ENVS_HPP
