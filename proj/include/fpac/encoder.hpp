#ifndef FPAC_ENCODER_HPP
#define FPAC_ENCODER_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpac/autodiff.hpp"
#include "fpac/nn.hpp"
#include "fpac/rng.hpp"

namespace fpac {

inline double swish(double x) { return x / (1.0 + std::exp(-x)); }

struct ConvLayerSpec {
  int channels;
  int kernel;
  int stride;
};

struct EncoderConfig {
  int in_channels = 3;
  int in_height = 84;
  int in_width = 84;
  std::vector<ConvLayerSpec> layers;
  int feature_points = 32;   // channels of the 1x1 projection
  bool with_projection = true;  // pixel agents flatten the trunk instead

  // Four 3x3 conv layers with 32 channels, stride 2 on the first layer,
  // valid padding; maps 84x84 inputs to 35x35.
  static EncoderConfig standard(int c, int h, int w, int k) {
    EncoderConfig cfg;
    cfg.in_channels = c;
    cfg.in_height = h;
    cfg.in_width = w;
    cfg.layers = {{32, 3, 2}, {32, 3, 1}, {32, 3, 1}, {32, 3, 1}};
    cfg.feature_points = k;
    return cfg;
  }

  // Small two-layer variant for desk-scale training.
  static EncoderConfig toy(int c, int h, int w, int k) {
    EncoderConfig cfg;
    cfg.in_channels = c;
    cfg.in_height = h;
    cfg.in_width = w;
    cfg.layers = {{16, 3, 2}, {16, 3, 2}};
    cfg.feature_points = k;
    return cfg;
  }
};

struct EncoderShape {
  int channels;
  int height;
  int width;
};

// Closed-form valid-convolution shape arithmetic; throws when any
// intermediate dimension underflows.
inline EncoderShape output_shape(const EncoderConfig& cfg) {
  if (cfg.with_projection && cfg.feature_points < 1)
    throw std::invalid_argument("encoder config: feature_points < 1");
  int h = cfg.in_height, w = cfg.in_width;
  for (const auto& l : cfg.layers) {
    if (h < l.kernel || w < l.kernel)
      throw std::invalid_argument("encoder config: input too small for conv stack");
    h = (h - l.kernel) / l.stride + 1;
    w = (w - l.kernel) / l.stride + 1;
    if (h < 1 || w < 1)
      throw std::invalid_argument("encoder config: input too small for conv stack");
  }
  int out_channels = cfg.with_projection ? cfg.feature_points : cfg.layers.back().channels;
  return {out_channels, h, w};
}

// Convolutional encoder producing K feature maps. Swish after every conv
// layer; the 1x1 projection has no activation (the downstream softmax/tanh
// provide the nonlinearity).
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  std::vector<Param<T>> conv_w;
  std::vector<Param<T>> conv_b;
  Param<T> proj_w;
  Param<T> proj_b;

  void init(const EncoderConfig& c, Rng& rng, const std::string& name = "encoder") {
    cfg = c;
    output_shape(cfg);  // validate
    conv_w.clear();
    conv_b.clear();
    int in_c = cfg.in_channels;
    int li = 0;
    for (const auto& l : cfg.layers) {
      int fan_in = in_c * l.kernel * l.kernel;
      conv_w.emplace_back();
      conv_b.emplace_back();
      conv_w.back().init_uniform(name + ".conv" + std::to_string(li) + ".w",
                                 {l.channels, in_c, l.kernel, l.kernel}, fan_in, rng);
      conv_b.back().init_uniform(name + ".conv" + std::to_string(li) + ".b", {l.channels},
                                 fan_in, rng);
      in_c = l.channels;
      ++li;
    }
    if (cfg.with_projection) {
      proj_w.init_uniform(name + ".proj.w", {cfg.feature_points, in_c, 1, 1}, in_c, rng);
      proj_b.init_uniform(name + ".proj.b", {cfg.feature_points}, in_c, rng);
    }
  }

  struct Vars {
    std::vector<typename Tape<T>::Var> conv_w, conv_b;
    typename Tape<T>::Var proj_w, proj_b;
  };

  Vars bind(Binder<T>& binder, bool trainable) {
    Vars v;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      v.conv_w.push_back(binder.bind(conv_w[i], trainable));
      v.conv_b.push_back(binder.bind(conv_b[i], trainable));
    }
    if (cfg.with_projection) {
      v.proj_w = binder.bind(proj_w, trainable);
      v.proj_b = binder.bind(proj_b, trainable);
    }
    return v;
  }

  typename Tape<T>::Var forward(Tape<T>& tape, const Vars& v,
                                typename Tape<T>::Var x) const {
    for (std::size_t i = 0; i < v.conv_w.size(); ++i) {
      x = tape.conv2d(x, v.conv_w[i], v.conv_b[i], cfg.layers[i].stride);
      x = tape.swish(x);
    }
    if (!cfg.with_projection) return x;
    return tape.conv2d(x, v.proj_w, v.proj_b, 1);
  }

  // Convenience: no-gradient forward on a fresh tape.
  Tensor<T> encode(const Tensor<T>& frames) {
    Tape<T> tape;
    Binder<T> binder(tape);
    auto vars = bind(binder, false);
    auto x = tape.leaf(frames, false);
    return tape.val(forward(tape, vars, x));
  }

  void collect(std::vector<Param<T>*>& out) {
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      out.push_back(&conv_w[i]);
      out.push_back(&conv_b[i]);
    }
    if (cfg.with_projection) {
      out.push_back(&proj_w);
      out.push_back(&proj_b);
    }
  }
};

}  // namespace fpac

#endif  // FPAC_ENCODER_HPP
