#ifndef FPAC_NN_HPP
#define FPAC_NN_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fpac/autodiff.hpp"
#include "fpac/rng.hpp"
#include "fpac/tensor.hpp"

namespace fpac {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> adam_m;
  Tensor<T> adam_v;

  void init_shape(std::string n, std::vector<int> shape) {
    name = std::move(n);
    value = Tensor<T>::zeros(shape);
    adam_m = Tensor<T>::zeros(shape);
    adam_v = Tensor<T>::zeros(std::move(shape));
  }

  // fan-in scaled uniform initialization
  void init_uniform(std::string n, std::vector<int> shape, int fan_in, Rng& rng) {
    init_shape(std::move(n), std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : value.data) v = static_cast<T>(rng.uniform(-bound, bound));
  }
};

// Binds persistent parameters onto a tape for one forward/backward pass and
// remembers which of them are trainable so the optimizer can read gradients
// back.
template <typename T>
class Binder {
 public:
  explicit Binder(Tape<T>& tape) : tape_(&tape) {}

  typename Tape<T>::Var bind(Param<T>& p, bool trainable) {
    auto var = tape_->leaf(p.value, trainable);
    if (trainable) bound_.push_back({&p, var});
    return var;
  }

  typename Tape<T>::Var constant(Tensor<T> t) { return tape_->leaf(std::move(t), false); }

  const std::vector<std::pair<Param<T>*, typename Tape<T>::Var>>& bound() const {
    return bound_;
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  std::vector<std::pair<Param<T>*, typename Tape<T>::Var>> bound_;
};

template <typename T>
struct Adam {
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t t = 0;

  void step(Binder<T>& binder) {
    ++t;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (auto& [p, var] : binder.bound()) {
      const Tensor<T>& g = binder.tape().grad(var);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        p->adam_m[i] = beta1 * p->adam_m[i] + (T(1) - beta1) * g[i];
        p->adam_v[i] = beta2 * p->adam_v[i] + (T(1) - beta2) * g[i] * g[i];
        T mhat = p->adam_m[i] / bc1;
        T vhat = p->adam_v[i] / bc2;
        p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

template <typename T>
struct Linear {
  Param<T> w;  // [in, out]
  Param<T> b;  // [out]

  void init(const std::string& name, int in, int out, Rng& rng) {
    w.init_uniform(name + ".w", {in, out}, in, rng);
    b.init_uniform(name + ".b", {out}, in, rng);
  }

  struct Vars {
    typename Tape<T>::Var w, b;
  };

  Vars bind(Binder<T>& binder, bool trainable) {
    return {binder.bind(w, trainable), binder.bind(b, trainable)};
  }

  static typename Tape<T>::Var forward(Tape<T>& tape, const Vars& v,
                                       typename Tape<T>::Var x) {
    return tape.linear(x, v.w, v.b);
  }
};

// Feedforward network with swish hidden activations and a linear output.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  void init(const std::string& name, int in, int hidden, int n_hidden, int out, Rng& rng) {
    layers.clear();
    int prev = in;
    for (int i = 0; i < n_hidden; ++i) {
      layers.emplace_back();
      layers.back().init(name + ".h" + std::to_string(i), prev, hidden, rng);
      prev = hidden;
    }
    layers.emplace_back();
    layers.back().init(name + ".out", prev, out, rng);
  }

  struct Vars {
    std::vector<typename Linear<T>::Vars> layers;
  };

  Vars bind(Binder<T>& binder, bool trainable) {
    Vars v;
    for (auto& l : layers) v.layers.push_back(l.bind(binder, trainable));
    return v;
  }

  static typename Tape<T>::Var forward(Tape<T>& tape, const Vars& v,
                                       typename Tape<T>::Var x) {
    for (std::size_t i = 0; i < v.layers.size(); ++i) {
      x = Linear<T>::forward(tape, v.layers[i], x);
      if (i + 1 < v.layers.size()) x = tape.swish(x);
    }
    return x;
  }

  void collect(std::vector<Param<T>*>& out) {
    for (auto& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }
};

// target <- (1 - tau) * target + tau * online, elementwise
template <typename T>
inline void soft_update(Tensor<T>& target, const Tensor<T>& online, T tau) {
  if (!target.same_shape(online)) throw std::invalid_argument("soft_update: shape mismatch");
  for (std::int64_t i = 0; i < target.numel(); ++i)
    target[i] = (T(1) - tau) * target[i] + tau * online[i];
}

template <typename T>
inline void soft_update(std::vector<Param<T>*> target, std::vector<Param<T>*> online, T tau) {
  if (target.size() != online.size())
    throw std::invalid_argument("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i)
    soft_update(target[i]->value, online[i]->value, tau);
}

template <typename T>
inline void hard_copy(std::vector<Param<T>*> target, std::vector<Param<T>*> online) {
  for (std::size_t i = 0; i < target.size(); ++i) target[i]->value = online[i]->value;
}

}  // namespace fpac

#endif  // FPAC_NN_HPP
