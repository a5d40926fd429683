#ifndef FPAC_AGENTS_HPP
#define FPAC_AGENTS_HPP

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpac/bottleneck.hpp"
#include "fpac/encoder.hpp"
#include "fpac/envs.hpp"
#include "fpac/sac.hpp"

namespace fpac {

// training scalar type; gradient-check oracles instantiate the templates on
// double directly
using real = float;

enum class AgentKind { fpac, pixel_sac, keypoint_sac, state_sac };

inline AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "fpac") return AgentKind::fpac;
  if (s == "pixel_sac") return AgentKind::pixel_sac;
  if (s == "keypoint_sac") return AgentKind::keypoint_sac;
  if (s == "state_sac") return AgentKind::state_sac;
  throw std::invalid_argument("unknown agent kind: " + s);
}

inline std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::fpac: return "fpac";
    case AgentKind::pixel_sac: return "pixel_sac";
    case AgentKind::keypoint_sac: return "keypoint_sac";
    case AgentKind::state_sac: return "state_sac";
  }
  return "?";
}

struct AgentConfig {
  AgentKind kind = AgentKind::fpac;
  ExtractorConfig extractor;
  SACConfig sac;
  int feature_points = 32;  // K
  bool encoder_toy = true;  // two-layer conv stack instead of the four-layer one
  int pixel_latent_dim = 64;
  std::optional<bool> relative;          // default: on for keypoint_sac, off for fpac
  std::optional<bool> use_camera_delta;  // default: on for scroll_runner keypoint agents
};

// Replay payload for image agents. frame_prev aliases the previous
// transition's frame, so storage stays near one frame per step.
struct ImageState {
  std::shared_ptr<const ImageU8> frame;
  std::shared_ptr<const ImageU8> frame_prev;
  CameraDelta delta;  // camera translation frame_prev -> frame
};

// Rollout-side observation bookkeeping (current + previous emitted frame).
// Owned by the loop, not the agent, so evaluation rollouts can run without
// disturbing the training rollout.
struct ObsWindow {
  std::shared_ptr<const ImageU8> frame_q, frame_prev_q;
  Image frame, frame_prev;
  FeaturePointSet kp, kp_prev;
  std::vector<double> raw_state;
  CameraDelta delta;

  void start(const StepResult& r) {
    frame = r.frame;
    frame_prev = r.frame;
    frame_q = std::make_shared<ImageU8>(quantize(r.frame));
    frame_prev_q = frame_q;
    kp = r.info.keypoints;
    kp_prev = r.info.keypoints;
    raw_state = r.info.raw_state;
    delta = CameraDelta{};
  }

  void advance(const StepResult& r) {
    frame_prev = std::move(frame);
    frame_prev_q = frame_q;
    kp_prev = std::move(kp);
    frame = r.frame;
    frame_q = std::make_shared<ImageU8>(quantize(r.frame));
    kp = r.info.keypoints;
    raw_state = r.info.raw_state;
    delta = r.camera_delta;
  }

  ImageState image_state() const { return ImageState{frame_q, frame_prev_q, delta}; }
};

inline Tensor<real> frames_to_tensor(const std::vector<const ImageU8*>& frames) {
  const ImageU8& f0 = *frames.front();
  int n = static_cast<int>(frames.size());
  Tensor<real> t({n, f0.channels, f0.height, f0.width});
  std::int64_t per = static_cast<std::int64_t>(f0.channels) * f0.height * f0.width;
  for (int i = 0; i < n; ++i) {
    const auto& v = frames[static_cast<std::size_t>(i)]->values;
    for (std::int64_t j = 0; j < per; ++j)
      t[i * per + j] = static_cast<real>(v[static_cast<std::size_t>(j)]) * real(1.0 / 255.0);
  }
  return t;
}

inline Tensor<real> image_to_tensor(const Image& img) {
  Tensor<real> t({1, img.channels, img.height, img.width});
  for (std::size_t i = 0; i < img.values.size(); ++i)
    t[static_cast<std::int64_t>(i)] = static_cast<real>(img.values[i]);
  return t;
}

// stack two frames along the channel axis: [1, 2C, H, W]
inline Tensor<real> stack_pair(const Image& prev, const Image& cur) {
  Tensor<real> t({1, 2 * cur.channels, cur.height, cur.width});
  std::int64_t per = static_cast<std::int64_t>(cur.channels) * cur.height * cur.width;
  for (std::int64_t i = 0; i < per; ++i) {
    t[i] = static_cast<real>(prev.values[static_cast<std::size_t>(i)]);
    t[per + i] = static_cast<real>(cur.values[static_cast<std::size_t>(i)]);
  }
  return t;
}

// Composition of encoder, feature-point bottleneck, and the SAC head into the
// four agent kinds.
class Agent {
 public:
  Agent(AgentConfig cfg, const EnvSpec& env_spec, int num_objects, int raw_state_dim,
        std::uint64_t seed)
      : cfg_(std::move(cfg)), env_spec_(env_spec), num_objects_(num_objects) {
    kernels::tune_allocator();
    Rng rng(split_seed(seed, 0xa6e7));
    action_dim_ = env_spec.action_dim;

    // ablation-flag defaults that depend on the agent/env pairing
    if (cfg_.relative.has_value()) cfg_.extractor.relative = *cfg_.relative;
    else cfg_.extractor.relative = cfg_.kind == AgentKind::keypoint_sac;
    bool default_delta = env_spec.name == "scroll_runner" &&
                         (cfg_.kind == AgentKind::fpac || cfg_.kind == AgentKind::keypoint_sac);
    use_camera_delta_ = cfg_.use_camera_delta.value_or(default_delta);
    if (cfg_.kind == AgentKind::pixel_sac) use_camera_delta_ = false;

    switch (cfg_.kind) {
      case AgentKind::fpac: {
        auto ec = cfg_.encoder_toy
                      ? EncoderConfig::toy(env_spec.frame_channels, env_spec.frame_height,
                                           env_spec.frame_width, cfg_.feature_points)
                      : EncoderConfig::standard(env_spec.frame_channels, env_spec.frame_height,
                                                env_spec.frame_width, cfg_.feature_points);
        encoder_.init(ec, rng);
        state_dim_ = 6 * cfg_.feature_points;
        image_buffer_ = std::make_unique<ReplayBuffer<ImageState>>(
            static_cast<std::size_t>(cfg_.sac.replay_capacity));
        break;
      }
      case AgentKind::pixel_sac: {
        auto ec = cfg_.encoder_toy
                      ? EncoderConfig::toy(2 * env_spec.frame_channels, env_spec.frame_height,
                                           env_spec.frame_width, cfg_.feature_points)
                      : EncoderConfig::standard(2 * env_spec.frame_channels,
                                                env_spec.frame_height, env_spec.frame_width,
                                                cfg_.feature_points);
        ec.with_projection = false;  // flatten the trunk output instead
        encoder_.init(ec, rng);
        auto shape = output_shape(ec);
        int flat = shape.channels * shape.height * shape.width;
        latent_.init("pixel_latent", flat, cfg_.pixel_latent_dim, rng);
        state_dim_ = cfg_.pixel_latent_dim;
        image_buffer_ = std::make_unique<ReplayBuffer<ImageState>>(
            static_cast<std::size_t>(cfg_.sac.replay_capacity));
        break;
      }
      case AgentKind::keypoint_sac:
        state_dim_ = 6 * num_objects_;
        vec_buffer_ = std::make_unique<ReplayBuffer<std::vector<double>>>(
            static_cast<std::size_t>(cfg_.sac.replay_capacity));
        break;
      case AgentKind::state_sac:
        state_dim_ = raw_state_dim;
        vec_buffer_ = std::make_unique<ReplayBuffer<std::vector<double>>>(
            static_cast<std::size_t>(cfg_.sac.replay_capacity));
        break;
    }
    if (state_dim_ < 1) throw std::invalid_argument("agent: empty state");
    sac_.init(state_dim_, action_dim_, cfg_.sac, rng);
  }

  AgentKind kind() const { return cfg_.kind; }
  const AgentConfig& config() const { return cfg_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  bool uses_pixels() const {
    return cfg_.kind == AgentKind::fpac || cfg_.kind == AgentKind::pixel_sac;
  }
  bool camera_delta_enabled() const { return use_camera_delta_; }
  SacHead<real>& sac() { return sac_; }
  Encoder<real>& encoder() { return encoder_; }

  // ---- observation ----

  std::vector<double> observe(const ObsWindow& w) {
    switch (cfg_.kind) {
      case AgentKind::state_sac:
        return w.raw_state;
      case AgentKind::keypoint_sac: {
        CameraDelta d = w.delta;
        return build_state(w.kp, w.kp_prev, use_camera_delta_ ? &d : nullptr, cfg_.extractor);
      }
      case AgentKind::fpac: {
        Tensor<real> cur = image_to_tensor(w.frame);
        Tensor<real> prev = image_to_tensor(w.frame_prev);
        std::vector<CameraDelta> deltas = {w.delta};
        Tensor<real> s = fpac_states(prev, cur, use_camera_delta_ ? &deltas : nullptr);
        return to_double(s);
      }
      case AgentKind::pixel_sac: {
        Tensor<real> stacked = stack_pair(w.frame_prev, w.frame);
        return to_double(pixel_latent(stacked));
      }
    }
    return {};
  }

  std::vector<double> act(const std::vector<double>& state, bool deterministic, Rng& rng) {
    return sac_.act(state, deterministic, rng);
  }

  // ---- experience ----

  void remember(const ObsWindow& at_s, const std::vector<double>& action, double reward,
                const ObsWindow& at_s2, bool terminal) {
    if (uses_pixels()) {
      Transition<ImageState> t;
      t.s = at_s.image_state();
      t.s2 = at_s2.image_state();
      t.a = action;
      t.r = reward;
      t.done = terminal;
      image_buffer_->push(std::move(t));
    } else {
      Transition<std::vector<double>> t;
      t.s = observe(at_s);
      t.s2 = observe(at_s2);
      t.a = action;
      t.r = reward;
      t.done = terminal;
      vec_buffer_->push(std::move(t));
    }
  }

  std::size_t buffer_size() const {
    return uses_pixels() ? image_buffer_->size() : vec_buffer_->size();
  }

  // ---- learning ----

  UpdateDiagnostics update(std::int64_t step_counter, Rng& rng) {
    if (!uses_pixels()) return sac_.update_step(*vec_buffer_, step_counter, rng);
    return update_image(step_counter, rng);
  }

  // Loss-to-parameter routing. The encoder (and the pixel latent projection)
  // learn from the critic loss alone.
  std::map<std::string, std::vector<std::string>> gradient_routing() const {
    std::map<std::string, std::vector<std::string>> m;
    m["actor_loss"] = {"actor"};
    m["temperature_loss"] = {"alpha"};
    std::vector<std::string> critic_targets = {"critic1", "critic2"};
    if (cfg_.kind == AgentKind::fpac) critic_targets.push_back("encoder");
    if (cfg_.kind == AgentKind::pixel_sac) {
      critic_targets.push_back("encoder");
      critic_targets.push_back("pixel_latent");
    }
    m["critic_loss"] = std::move(critic_targets);
    return m;
  }

  std::vector<Param<real>*> encoder_params() {
    std::vector<Param<real>*> out;
    if (uses_pixels()) {
      encoder_.collect(out);
      if (cfg_.kind == AgentKind::pixel_sac) {
        out.push_back(&latent_.w);
        out.push_back(&latent_.b);
      }
    }
    return out;
  }

  std::vector<Param<real>*> named_params() {
    auto out = sac_.all_params();
    for (auto* p : encoder_params()) out.push_back(p);
    return out;
  }

  // Feature points of a single frame through the current encoder (viz path).
  FeaturePointSet extract_points(const Image& frame) {
    if (cfg_.kind != AgentKind::fpac)
      throw std::logic_error("extract_points: agent has no feature-point bottleneck");
    auto maps = encoder_.encode(image_to_tensor(frame));
    return extract(maps_to_feature_maps(maps, 0), cfg_.extractor);
  }

  // Per-channel location distributions for the viz prob-map dump.
  FeatureMaps probability_maps(const Image& frame) {
    if (cfg_.kind != AgentKind::fpac)
      throw std::logic_error("probability_maps: agent has no feature-point bottleneck");
    auto maps = encoder_.encode(image_to_tensor(frame));
    FeatureMaps fm = maps_to_feature_maps(maps, 0);
    return spatial_softmax_2d(fm, cfg_.extractor.temperature);
  }

 private:
  // ---- image-agent state paths ----

  static std::vector<double> to_double(const Tensor<real>& t) {
    std::vector<double> out(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i)
      out[static_cast<std::size_t>(i)] = static_cast<double>(t[i]);
    return out;
  }

  static FeatureMaps maps_to_feature_maps(const Tensor<real>& maps, int sample) {
    FeatureMaps fm(maps.dim(1), maps.dim(2), maps.dim(3));
    std::int64_t per = static_cast<std::int64_t>(maps.dim(1)) * maps.dim(2) * maps.dim(3);
    for (std::int64_t i = 0; i < per; ++i)
      fm.values[static_cast<std::size_t>(i)] = static_cast<double>(maps[sample * per + i]);
    return fm;
  }

  // no-grad feature-point states for a batch of frame pairs
  Tensor<real> fpac_states(const Tensor<real>& prev, const Tensor<real>& cur,
                           const std::vector<CameraDelta>* deltas) {
    Tape<real> tape;
    Binder<real> binder(tape);
    auto vars = encoder_.bind(binder, false);
    auto mp = encoder_.forward(tape, vars, tape.leaf(prev, false));
    auto mc = encoder_.forward(tape, vars, tape.leaf(cur, false));
    auto ep = extract_on_tape(tape, mp, cfg_.extractor);
    auto ec = extract_on_tape(tape, mc, cfg_.extractor);
    return tape.val(build_state_on_tape(tape, ec, ep, deltas, cfg_.extractor));
  }

  // no-grad states from already-encoded feature maps
  Tensor<real> fpac_states_from_maps(const Tensor<real>& maps_cur, const Tensor<real>& maps_prev,
                                     const std::vector<CameraDelta>* deltas) {
    Tape<real> tape;
    auto mc = tape.leaf(maps_cur, false);
    auto mp = tape.leaf(maps_prev, false);
    auto ec = extract_on_tape(tape, mc, cfg_.extractor);
    auto ep = extract_on_tape(tape, mp, cfg_.extractor);
    return tape.val(build_state_on_tape(tape, ec, ep, deltas, cfg_.extractor));
  }

  Tensor<real> pixel_latent(const Tensor<real>& stacked) {
    Tape<real> tape;
    Binder<real> binder(tape);
    auto vars = encoder_.bind(binder, false);
    auto lv = latent_.bind(binder, false);
    auto maps = encoder_.forward(tape, vars, tape.leaf(stacked, false));
    int n = tape.val(maps).dim(0);
    int flat = static_cast<int>(tape.val(maps).numel() / n);
    return tape.val(Linear<real>::forward(tape, lv, tape.reshape(maps, {n, flat})));
  }

  UpdateDiagnostics update_image(std::int64_t step_counter, Rng& rng) {
    UpdateDiagnostics diag;
    diag.alpha = sac_.alpha();
    int b = cfg_.sac.batch_size;
    if (image_buffer_->size() < static_cast<std::size_t>(b)) {
      diag.skipped_small_buffer = true;
      return diag;
    }
    auto batch = image_buffer_->sample(b, rng);

    std::vector<const ImageU8*> fprev(static_cast<std::size_t>(b)),
        fcur(static_cast<std::size_t>(b)), fnext(static_cast<std::size_t>(b));
    std::vector<CameraDelta> deltas_s(static_cast<std::size_t>(b)),
        deltas_s2(static_cast<std::size_t>(b));
    Tensor<real> actions({b, action_dim_});
    std::vector<double> rewards(static_cast<std::size_t>(b));
    std::vector<char> done(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      const auto& tr = *batch[static_cast<std::size_t>(i)];
      fprev[static_cast<std::size_t>(i)] = tr.s.frame_prev.get();
      fcur[static_cast<std::size_t>(i)] = tr.s.frame.get();
      fnext[static_cast<std::size_t>(i)] = tr.s2.frame.get();
      deltas_s[static_cast<std::size_t>(i)] = tr.s.delta;
      deltas_s2[static_cast<std::size_t>(i)] = tr.s2.delta;
      for (int j = 0; j < action_dim_; ++j)
        actions[static_cast<std::int64_t>(i) * action_dim_ + j] =
            static_cast<real>(tr.a[static_cast<std::size_t>(j)]);
      rewards[static_cast<std::size_t>(i)] = tr.r;
      done[static_cast<std::size_t>(i)] = tr.done ? 1 : 0;
    }

    if (cfg_.kind == AgentKind::fpac) {
      Tensor<real> xprev = frames_to_tensor(fprev);
      Tensor<real> xcur = frames_to_tensor(fcur);
      Tensor<real> xnext = frames_to_tensor(fnext);
      const std::vector<CameraDelta>* ds = use_camera_delta_ ? &deltas_s : nullptr;
      const std::vector<CameraDelta>* ds2 = use_camera_delta_ ? &deltas_s2 : nullptr;

      // critic + encoder update
      Tape<real> tape;
      Binder<real> binder(tape);
      auto vars = encoder_.bind(binder, true);
      auto mp = encoder_.forward(tape, vars, tape.leaf(xprev, false));
      auto mc = encoder_.forward(tape, vars, tape.leaf(xcur, false));
      auto s_var = build_state_on_tape(tape, extract_on_tape(tape, mc, cfg_.extractor),
                                       extract_on_tape(tape, mp, cfg_.extractor), ds,
                                       cfg_.extractor);
      // targets from pre-update parameters, no gradient
      Tensor<real> maps_next = encoder_.encode(xnext);
      Tensor<real> s2_vals = fpac_states_from_maps(maps_next, tape.val(mc), ds2);
      Tensor<real> y = sac_.make_targets(s2_vals, rewards, done, rng);

      // actor input: the same states, detached (pre-step encoder snapshot)
      Tensor<real> s_vals = tape.val(s_var);

      auto loss = sac_.critic_loss_on_tape(tape, binder, s_var, actions, y);
      tape.backward(loss);
      sac_.critic_opt.step(binder);
      diag.critic_loss = static_cast<double>(tape.val(loss)[0]);
      diag.updated_critic = true;

      if (step_counter % cfg_.sac.actor_update_frequency == 0)
        sac_.actor_and_alpha_update(s_vals, rng, diag);
    } else {  // pixel_sac
      Tensor<real> xs({b, 2 * env_spec_.frame_channels, env_spec_.frame_height,
                       env_spec_.frame_width});
      Tensor<real> xs2 = xs;
      std::int64_t per = static_cast<std::int64_t>(env_spec_.frame_channels) *
                         env_spec_.frame_height * env_spec_.frame_width;
      auto fill = [&](Tensor<real>& dst, int i, const ImageU8* a, const ImageU8* bimg) {
        for (std::int64_t j = 0; j < per; ++j) {
          dst[(static_cast<std::int64_t>(i) * 2) * per + j] =
              static_cast<real>(a->values[static_cast<std::size_t>(j)]) * real(1.0 / 255.0);
          dst[(static_cast<std::int64_t>(i) * 2 + 1) * per + j] =
              static_cast<real>(bimg->values[static_cast<std::size_t>(j)]) * real(1.0 / 255.0);
        }
      };
      for (int i = 0; i < b; ++i) {
        fill(xs, i, fprev[static_cast<std::size_t>(i)], fcur[static_cast<std::size_t>(i)]);
        fill(xs2, i, fcur[static_cast<std::size_t>(i)], fnext[static_cast<std::size_t>(i)]);
      }

      Tape<real> tape;
      Binder<real> binder(tape);
      auto vars = encoder_.bind(binder, true);
      auto lv = latent_.bind(binder, true);
      auto maps = encoder_.forward(tape, vars, tape.leaf(xs, false));
      int flat = static_cast<int>(tape.val(maps).numel() / b);
      auto s_var = Linear<real>::forward(tape, lv, tape.reshape(maps, {b, flat}));
      Tensor<real> s_vals = tape.val(s_var);

      Tensor<real> s2_vals = pixel_latent(xs2);
      Tensor<real> y = sac_.make_targets(s2_vals, rewards, done, rng);

      auto loss = sac_.critic_loss_on_tape(tape, binder, s_var, actions, y);
      tape.backward(loss);
      sac_.critic_opt.step(binder);
      diag.critic_loss = static_cast<double>(tape.val(loss)[0]);
      diag.updated_critic = true;

      if (step_counter % cfg_.sac.actor_update_frequency == 0)
        sac_.actor_and_alpha_update(s_vals, rng, diag);
    }

    if (step_counter % cfg_.sac.target_update_frequency == 0) {
      sac_.target_update();
      diag.updated_target = true;
    }
    diag.alpha = sac_.alpha();
    return diag;
  }

  AgentConfig cfg_;
  EnvSpec env_spec_;
  int num_objects_ = 0;
  int action_dim_ = 0;
  int state_dim_ = 0;
  bool use_camera_delta_ = false;
  Encoder<real> encoder_;
  Linear<real> latent_;
  SacHead<real> sac_;
  std::unique_ptr<ReplayBuffer<ImageState>> image_buffer_;
  std::unique_ptr<ReplayBuffer<std::vector<double>>> vec_buffer_;
};

// Agent factory wired to an environment.
inline std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, const Env& env,
                                         std::uint64_t seed) {
  return std::make_unique<Agent>(cfg, env.spec(), env.num_objects(),
                                 static_cast<int>(env.state_obs(env.state()).size()), seed);
}

}  // namespace fpac

#endif  // FPAC_AGENTS_HPP
