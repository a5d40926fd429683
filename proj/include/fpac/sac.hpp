#ifndef FPAC_SAC_HPP
#define FPAC_SAC_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpac/autodiff.hpp"
#include "fpac/featpoint.hpp"
#include "fpac/image.hpp"
#include "fpac/nn.hpp"
#include "fpac/rng.hpp"

namespace fpac {

struct SACConfig {
  double discount = 0.99;
  int batch_size = 128;
  double learning_rate = 3e-4;
  double initial_temperature = 0.1;
  double target_update_rate = 0.01;  // tau
  int target_update_frequency = 2;
  int actor_update_frequency = 2;
  int initial_random_steps = 1000;
  std::optional<double> target_entropy;  // defaults to -action_dim
  int mlp_hidden_layers = 2;
  int mlp_hidden_units = 1024;
  int replay_capacity = 100000;
  bool twin_critics = true;
};

// One experience tuple. `done` marks true terminations only; time-limit
// truncations store false so the target still bootstraps.
template <class S>
struct Transition {
  S s;
  std::vector<double> a;
  double r = 0.0;
  S s2;
  bool done = false;
};

// FIFO ring with uniform sampling (with replacement).
template <class S>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer: capacity must be positive");
  }

  void push(Transition<S> t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  const Transition<S>& at(std::size_t i) const {
    // i = 0 is the oldest element
    if (data_.size() < capacity_) return data_[i];
    return data_[(head_ + i) % capacity_];
  }

  std::vector<const Transition<S>*> sample(int n, Rng& rng) const {
    if (data_.empty()) throw std::logic_error("replay buffer: sample from empty buffer");
    std::vector<const Transition<S>*> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      out.push_back(&data_[rng.uniform_index(data_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition<S>> data_;
};

// ---- loss formulas (also used standalone in tests) ----

inline double bellman_target(double r, bool done, double gamma, double min_q_target,
                             double alpha, double log_pi) {
  return r + (done ? 0.0 : gamma * (min_q_target - alpha * log_pi));
}

inline double critic_loss_value(const std::vector<double>& q1, const std::vector<double>& q2,
                                const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double d1 = q1[i] - y[i], d2 = q2[i] - y[i];
    acc += 0.5 * (d1 * d1 + d2 * d2);
  }
  return acc / static_cast<double>(y.size());
}

inline double actor_loss_value(double alpha, const std::vector<double>& log_pi,
                               const std::vector<double>& min_q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < log_pi.size(); ++i) acc += alpha * log_pi[i] - min_q[i];
  return acc / static_cast<double>(log_pi.size());
}

inline double temperature_loss_value(double alpha, const std::vector<double>& log_pi,
                                     double target_entropy) {
  double acc = 0.0;
  for (double lp : log_pi) acc += -alpha * (lp + target_entropy);
  return acc / static_cast<double>(log_pi.size());
}

constexpr double kLogStdMin = -10.0;
constexpr double kLogStdMax = 2.0;
constexpr double kLogTwoPi = 1.8378770664093453;
constexpr double kSquashEps = 1e-6;

// tanh-squashed Gaussian policy head
template <typename T>
struct GaussianActor {
  std::vector<Linear<T>> hidden;
  Linear<T> mean_head;
  Linear<T> log_std_head;
  int action_dim = 0;

  void init(int in_dim, int hidden_units, int n_hidden, int act_dim, Rng& rng,
            const std::string& name = "actor") {
    action_dim = act_dim;
    hidden.clear();
    int prev = in_dim;
    for (int i = 0; i < n_hidden; ++i) {
      hidden.emplace_back();
      hidden.back().init(name + ".h" + std::to_string(i), prev, hidden_units, rng);
      prev = hidden_units;
    }
    mean_head.init(name + ".mean", prev, act_dim, rng);
    log_std_head.init(name + ".log_std", prev, act_dim, rng);
  }

  struct Vars {
    std::vector<typename Linear<T>::Vars> hidden;
    typename Linear<T>::Vars mean, log_std;
  };

  Vars bind(Binder<T>& binder, bool trainable) {
    Vars v;
    for (auto& l : hidden) v.hidden.push_back(l.bind(binder, trainable));
    v.mean = mean_head.bind(binder, trainable);
    v.log_std = log_std_head.bind(binder, trainable);
    return v;
  }

  // (mean, clamped log_std), each [B, dA]
  static std::pair<typename Tape<T>::Var, typename Tape<T>::Var> distribution(
      Tape<T>& tape, const Vars& v, typename Tape<T>::Var state) {
    auto h = state;
    for (const auto& l : v.hidden) h = tape.swish(Linear<T>::forward(tape, l, h));
    auto mu = Linear<T>::forward(tape, v.mean, h);
    auto ls = tape.clamp(Linear<T>::forward(tape, v.log_std, h), T(kLogStdMin), T(kLogStdMax));
    return {mu, ls};
  }

  // Reparameterized sample and its log-probability with the tanh squashing
  // correction: a = tanh(mu + std * eps), eps a fixed noise leaf.
  static std::pair<typename Tape<T>::Var, typename Tape<T>::Var> sample(
      Tape<T>& tape, const Vars& v, typename Tape<T>::Var state, typename Tape<T>::Var eps) {
    auto [mu, ls] = distribution(tape, v, state);
    auto stddev = tape.exp_(ls);
    auto action = tape.tanh_(tape.add(mu, tape.mul(stddev, eps)));

    const Tensor<T>& ev = tape.val(eps);
    Tensor<T> base(ev.shape);
    for (std::int64_t i = 0; i < ev.numel(); ++i)
      base[i] = T(-0.5) * ev[i] * ev[i] - T(0.5) * T(kLogTwoPi);
    auto gauss_terms = tape.sub(tape.leaf(std::move(base), false), ls);
    auto squash = tape.log_(tape.add_scalar(tape.neg(tape.square(action)), T(1) + T(kSquashEps)));
    auto log_prob = tape.sum_last(tape.sub(gauss_terms, squash));
    return {action, log_prob};
  }

  void collect(std::vector<Param<T>*>& out) {
    for (auto& l : hidden) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    out.push_back(&mean_head.w);
    out.push_back(&mean_head.b);
    out.push_back(&log_std_head.w);
    out.push_back(&log_std_head.b);
  }
};

template <typename T>
struct Critic {
  Mlp<T> net;

  void init(int state_dim, int action_dim, int hidden_units, int n_hidden, Rng& rng,
            const std::string& name) {
    net.init(name, state_dim + action_dim, hidden_units, n_hidden, 1, rng);
  }

  // Q(s, a) -> [B]
  static typename Tape<T>::Var forward(Tape<T>& tape, const typename Mlp<T>::Vars& v,
                                       typename Tape<T>::Var s, typename Tape<T>::Var a) {
    auto q = Mlp<T>::forward(tape, v, tape.concat_last(s, a));
    return tape.reshape(q, {tape.val(q).dim(0)});
  }

  void collect(std::vector<Param<T>*>& out) { net.collect(out); }
};

struct UpdateDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // estimate: mean of -log pi at the last actor update
  bool updated_critic = false;
  bool updated_actor = false;
  bool updated_target = false;
  bool skipped_small_buffer = false;
};

// SAC head over vector states: actor, twin critics with targets, learnable
// temperature. Image agents feed encoder-built state graphs into
// critic_loss_on_tape and reuse the actor/temperature machinery unchanged.
template <typename T>
class SacHead {
 public:
  SACConfig cfg;
  int state_dim = 0;
  int action_dim = 0;
  GaussianActor<T> actor;
  Critic<T> q1, q2;
  Critic<T> q1_target, q2_target;
  Param<T> log_alpha;
  Adam<T> actor_opt, critic_opt, alpha_opt;
  double target_entropy = 0.0;

  void init(int s_dim, int a_dim, const SACConfig& c, Rng& rng) {
    cfg = c;
    state_dim = s_dim;
    action_dim = a_dim;
    actor.init(s_dim, cfg.mlp_hidden_units, cfg.mlp_hidden_layers, a_dim, rng);
    q1.init(s_dim, a_dim, cfg.mlp_hidden_units, cfg.mlp_hidden_layers, rng, "critic1");
    q2.init(s_dim, a_dim, cfg.mlp_hidden_units, cfg.mlp_hidden_layers, rng, "critic2");
    q1_target = q1;
    q2_target = q2;
    rename_params(q1_target, "critic1_target");
    rename_params(q2_target, "critic2_target");
    log_alpha.init_shape("log_alpha", {1});
    log_alpha.value[0] = static_cast<T>(std::log(cfg.initial_temperature));
    target_entropy = cfg.target_entropy.value_or(-static_cast<double>(a_dim));
    actor_opt.lr = critic_opt.lr = alpha_opt.lr = static_cast<T>(cfg.learning_rate);
  }

  double alpha() const { return std::exp(static_cast<double>(log_alpha.value[0])); }

  // ---- acting ----

  std::vector<double> act(const std::vector<double>& state, bool deterministic, Rng& rng) {
    Tensor<T> s({1, state_dim});
    for (int i = 0; i < state_dim; ++i) s[i] = static_cast<T>(state[static_cast<std::size_t>(i)]);
    Tensor<T> actions = deterministic ? act_batch_deterministic(s) : sample_plain(s, rng, nullptr);
    std::vector<double> out(static_cast<std::size_t>(action_dim));
    for (int i = 0; i < action_dim; ++i) out[static_cast<std::size_t>(i)] = actions[i];
    return out;
  }

  Tensor<T> act_batch_deterministic(const Tensor<T>& states) {
    Tape<T> tape;
    Binder<T> binder(tape);
    auto av = actor.bind(binder, false);
    auto s = tape.leaf(states, false);
    auto [mu, ls] = GaussianActor<T>::distribution(tape, av, s);
    (void)ls;
    return tape.val(tape.tanh_(mu));
  }

  // no-grad reparameterized sample; optionally reports log-probabilities
  Tensor<T> sample_plain(const Tensor<T>& states, Rng& rng, Tensor<T>* log_prob_out) {
    Tape<T> tape;
    Binder<T> binder(tape);
    auto av = actor.bind(binder, false);
    auto s = tape.leaf(states, false);
    auto eps = tape.leaf(gaussian_like(states.dim(0), rng), false);
    auto [a, lp] = GaussianActor<T>::sample(tape, av, s, eps);
    if (log_prob_out) *log_prob_out = tape.val(lp);
    return tape.val(a);
  }

  // ---- targets ----

  // y_i = r_i + (1 - done_i) * gamma * (min_j Qbar_j(s', a') - alpha log pi(a'|s'))
  // with a' freshly sampled from the actor; no gradient flows through y.
  Tensor<T> make_targets(const Tensor<T>& s2_states, const std::vector<double>& rewards,
                         const std::vector<char>& done, Rng& rng) {
    Tensor<T> logp;
    Tensor<T> a2 = sample_plain(s2_states, rng, &logp);
    Tensor<T> minq = min_q_plain(s2_states, a2, /*use_targets=*/true);
    int b = s2_states.dim(0);
    Tensor<T> y({b});
    double al = alpha();
    for (int i = 0; i < b; ++i)
      y[i] = static_cast<T>(bellman_target(rewards[static_cast<std::size_t>(i)],
                                           done[static_cast<std::size_t>(i)] != 0, cfg.discount,
                                           static_cast<double>(minq[i]), al,
                                           static_cast<double>(logp[i])));
    return y;
  }

  Tensor<T> min_q_plain(const Tensor<T>& states, const Tensor<T>& actions, bool use_targets) {
    Tape<T> tape;
    Binder<T> binder(tape);
    auto& c1 = use_targets ? q1_target : q1;
    auto& c2 = use_targets ? q2_target : q2;
    auto v1 = c1.net.bind(binder, false);
    auto s = tape.leaf(states, false);
    auto a = tape.leaf(actions, false);
    auto qa = Critic<T>::forward(tape, v1, s, a);
    if (!cfg.twin_critics) return tape.val(qa);
    auto v2 = c2.net.bind(binder, false);
    auto qb = Critic<T>::forward(tape, v2, s, a);
    return tape.val(tape.min2(qa, qb));
  }

  // ---- updates ----

  // Builds the critic loss on the caller's tape so encoder gradients can flow
  // through s_var. Critic parameters are bound trainable into `binder`.
  typename Tape<T>::Var critic_loss_on_tape(Tape<T>& tape, Binder<T>& binder,
                                            typename Tape<T>::Var s_var,
                                            const Tensor<T>& actions, const Tensor<T>& y) {
    auto a = tape.leaf(actions, false);
    auto yv = tape.leaf(y, false);
    auto v1 = q1.net.bind(binder, true);
    auto e1 = tape.mean_all(tape.square(tape.sub(Critic<T>::forward(tape, v1, s_var, a), yv)));
    if (!cfg.twin_critics) return e1;
    auto v2 = q2.net.bind(binder, true);
    auto e2 = tape.mean_all(tape.square(tape.sub(Critic<T>::forward(tape, v2, s_var, a), yv)));
    return tape.scale(tape.add(e1, e2), T(0.5));
  }

  // Actor loss: mean(alpha * log pi - min Q). Critics and the state are
  // constants; gradients reach the actor only. Also performs the
  // temperature update from the same log-probabilities.
  void actor_and_alpha_update(const Tensor<T>& s_values, Rng& rng, UpdateDiagnostics& diag) {
    Tape<T> tape;
    Binder<T> binder(tape);
    auto av = actor.bind(binder, true);
    auto s = tape.leaf(s_values, false);
    auto eps = tape.leaf(gaussian_like(s_values.dim(0), rng), false);
    auto [a, lp] = GaussianActor<T>::sample(tape, av, s, eps);
    auto v1 = q1.net.bind(binder, false);
    auto qa = Critic<T>::forward(tape, v1, s, a);
    typename Tape<T>::Var minq = qa;
    if (cfg.twin_critics) {
      auto v2 = q2.net.bind(binder, false);
      minq = tape.min2(qa, Critic<T>::forward(tape, v2, s, a));
    }
    double al = alpha();
    auto loss = tape.mean_all(tape.sub(tape.scale(lp, static_cast<T>(al)), minq));
    tape.backward(loss);
    actor_opt.step(binder);

    // temperature: d/d log_alpha of mean(-alpha (log pi + target_entropy))
    const Tensor<T>& lpv = tape.val(lp);
    double mean_lp = 0.0;
    for (std::int64_t i = 0; i < lpv.numel(); ++i) mean_lp += static_cast<double>(lpv[i]);
    mean_lp /= static_cast<double>(lpv.numel());
    Tensor<T> alpha_grad({1});
    alpha_grad[0] = static_cast<T>(-al * (mean_lp + target_entropy));
    adam_single(alpha_opt, log_alpha, alpha_grad);

    diag.actor_loss = static_cast<double>(tape.val(loss)[0]);
    diag.entropy = -mean_lp;
    diag.updated_actor = true;
  }

  void target_update() {
    soft_update(param_values(q1_target), param_values(q1),
                static_cast<T>(cfg.target_update_rate));
    soft_update(param_values(q2_target), param_values(q2),
                static_cast<T>(cfg.target_update_rate));
  }

  // Full update step for agents whose replay states are plain vectors.
  UpdateDiagnostics update_step(ReplayBuffer<std::vector<double>>& buffer,
                                std::int64_t step_counter, Rng& rng) {
    UpdateDiagnostics diag;
    diag.alpha = alpha();
    if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
      diag.skipped_small_buffer = true;
      return diag;
    }
    auto batch = buffer.sample(cfg.batch_size, rng);
    int b = cfg.batch_size;
    Tensor<T> s({b, state_dim}), s2({b, state_dim}), a({b, action_dim});
    std::vector<double> r(static_cast<std::size_t>(b));
    std::vector<char> done(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      const auto& tr = *batch[static_cast<std::size_t>(i)];
      for (int j = 0; j < state_dim; ++j) {
        s[static_cast<std::int64_t>(i) * state_dim + j] = static_cast<T>(tr.s[static_cast<std::size_t>(j)]);
        s2[static_cast<std::int64_t>(i) * state_dim + j] = static_cast<T>(tr.s2[static_cast<std::size_t>(j)]);
      }
      for (int j = 0; j < action_dim; ++j)
        a[static_cast<std::int64_t>(i) * action_dim + j] = static_cast<T>(tr.a[static_cast<std::size_t>(j)]);
      r[static_cast<std::size_t>(i)] = tr.r;
      done[static_cast<std::size_t>(i)] = tr.done ? 1 : 0;
    }

    Tensor<T> y = make_targets(s2, r, done, rng);
    {
      Tape<T> tape;
      Binder<T> binder(tape);
      auto s_var = tape.leaf(s, false);
      auto loss = critic_loss_on_tape(tape, binder, s_var, a, y);
      tape.backward(loss);
      critic_opt.step(binder);
      diag.critic_loss = static_cast<double>(tape.val(loss)[0]);
      diag.updated_critic = true;
    }
    if (step_counter % cfg.actor_update_frequency == 0) actor_and_alpha_update(s, rng, diag);
    if (step_counter % cfg.target_update_frequency == 0) {
      target_update();
      diag.updated_target = true;
    }
    diag.alpha = alpha();
    return diag;
  }

  // ---- parameter access ----

  std::vector<Param<T>*> actor_params() {
    std::vector<Param<T>*> out;
    actor.collect(out);
    return out;
  }

  std::vector<Param<T>*> critic_params() {
    std::vector<Param<T>*> out;
    q1.collect(out);
    q2.collect(out);
    return out;
  }

  std::vector<Param<T>*> target_params() {
    std::vector<Param<T>*> out;
    q1_target.collect(out);
    q2_target.collect(out);
    return out;
  }

  std::vector<Param<T>*> all_params() {
    auto out = actor_params();
    for (auto* p : critic_params()) out.push_back(p);
    for (auto* p : target_params()) out.push_back(p);
    out.push_back(&log_alpha);
    return out;
  }

 private:
  Tensor<T> gaussian_like(int batch, Rng& rng) {
    Tensor<T> eps({batch, action_dim});
    for (auto& v : eps.data) v = static_cast<T>(rng.gaussian());
    return eps;
  }

  static void adam_single(Adam<T>& opt, Param<T>& p, const Tensor<T>& grad) {
    ++opt.t;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(opt.beta1),
                                           static_cast<double>(opt.t)));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(opt.beta2),
                                           static_cast<double>(opt.t)));
    for (std::int64_t i = 0; i < grad.numel(); ++i) {
      p.adam_m[i] = opt.beta1 * p.adam_m[i] + (T(1) - opt.beta1) * grad[i];
      p.adam_v[i] = opt.beta2 * p.adam_v[i] + (T(1) - opt.beta2) * grad[i] * grad[i];
      p.value[i] -= opt.lr * (p.adam_m[i] / bc1) / (std::sqrt(p.adam_v[i] / bc2) + opt.eps);
    }
  }

  static void rename_params(Critic<T>& c, const std::string& prefix) {
    std::vector<Param<T>*> ps;
    c.collect(ps);
    int i = 0;
    for (auto* p : ps) p->name = prefix + ".p" + std::to_string(i++);
  }

  static std::vector<Param<T>*> param_values(Critic<T>& c) {
    std::vector<Param<T>*> out;
    c.collect(out);
    return out;
  }
};

}  // namespace fpac

#endif  // FPAC_SAC_HPP
