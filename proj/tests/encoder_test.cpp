#include "fpac/encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fpac/rng.hpp"
#include "test_util.hpp"

using namespace fpac;

TEST(Swish, Values) {
  EXPECT_DOUBLE_EQ(swish(0.0), 0.0);
  EXPECT_NEAR(swish(1.0), 0.7310585786300049, 1e-12);
  // saturation: swish(x)/x -> 1 for large x
  EXPECT_NEAR(swish(30.0) / 30.0, 1.0, 1e-9);
  EXPECT_NEAR(swish(-30.0), 0.0, 1e-9);
}

TEST(OutputShape, StandardGeometry) {
  auto cfg = EncoderConfig::standard(3, 84, 84, 32);
  auto s = output_shape(cfg);
  EXPECT_EQ(s.channels, 32);
  EXPECT_EQ(s.height, 35);
  EXPECT_EQ(s.width, 35);
}

TEST(OutputShape, SmallInput) {
  auto cfg = EncoderConfig::standard(1, 48, 48, 8);
  auto s = output_shape(cfg);
  EXPECT_EQ(s.channels, 8);
  EXPECT_EQ(s.height, 17);
  EXPECT_EQ(s.width, 17);
}

TEST(OutputShape, UnderflowRejected) {
  auto cfg = EncoderConfig::standard(1, 9, 9, 8);
  EXPECT_THROW(output_shape(cfg), std::invalid_argument);
}

TEST(OutputShape, ToyGeometry) {
  auto cfg = EncoderConfig::toy(1, 48, 48, 8);
  auto s = output_shape(cfg);
  EXPECT_EQ(s.channels, 8);
  EXPECT_EQ(s.height, 11);
  EXPECT_EQ(s.width, 11);
}

TEST(Encoder, ForwardShapeMatchesArithmetic) {
  Rng rng(1);
  Encoder<double> enc;
  enc.init(EncoderConfig::toy(1, 48, 48, 4), rng);
  Tensor<double> frames({2, 1, 48, 48});
  for (auto& v : frames.data) v = rng.uniform(0, 1);
  auto out = enc.encode(frames);
  ASSERT_EQ(out.ndim(), 4);
  EXPECT_EQ(out.dim(0), 2);
  EXPECT_EQ(out.dim(1), 4);
  EXPECT_EQ(out.dim(2), 11);
  EXPECT_EQ(out.dim(3), 11);
}

TEST(Encoder, ZeroInputZeroBiasGivesZeros) {
  Rng rng(2);
  Encoder<double> enc;
  enc.init(EncoderConfig::toy(1, 16, 16, 2), rng);
  for (auto& b : enc.conv_b)
    for (auto& v : b.value.data) v = 0.0;
  for (auto& v : enc.proj_b.value.data) v = 0.0;
  Tensor<double> frames({1, 1, 16, 16});
  auto out = enc.encode(frames);
  for (auto v : out.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Encoder, DeterministicGivenSeed) {
  Tensor<double> frames({1, 1, 24, 24});
  Rng frng(77);
  for (auto& v : frames.data) v = frng.uniform(0, 1);

  Rng rng_a(5);
  Encoder<double> a;
  a.init(EncoderConfig::toy(1, 24, 24, 3), rng_a);
  Rng rng_b(5);
  Encoder<double> b;
  b.init(EncoderConfig::toy(1, 24, 24, 3), rng_b);

  auto oa1 = a.encode(frames);
  auto oa2 = a.encode(frames);
  auto ob = b.encode(frames);
  for (std::int64_t i = 0; i < oa1.numel(); ++i) {
    EXPECT_EQ(oa1[i], oa2[i]);
    EXPECT_EQ(oa1[i], ob[i]);
  }
}

TEST(Encoder, ShapeMismatchRejected) {
  Rng rng(3);
  Encoder<double> enc;
  enc.init(EncoderConfig::toy(1, 48, 48, 4), rng);
  Tensor<double> bad({1, 2, 48, 48});  // wrong channel count
  EXPECT_THROW(enc.encode(bad), std::invalid_argument);
}

// Gradient check on a shrunk two-layer config against central finite
// differences, for input pixels and all parameters.
TEST(Encoder, GradientCheckOnShrunkConfig) {
  Rng rng(4);
  EncoderConfig cfg;
  cfg.in_channels = 1;
  cfg.in_height = 16;
  cfg.in_width = 16;
  cfg.layers = {{4, 3, 2}, {4, 3, 2}};
  cfg.feature_points = 3;
  Encoder<double> enc;
  enc.init(cfg, rng);

  Tensor<double> frames({1, 1, 16, 16});
  for (auto& v : frames.data) v = rng.uniform(0, 1);

  // scalar probe loss: mean of squared feature-map activations
  auto loss_value = [&](const Tensor<double>& f) {
    Tape<double> t;
    Binder<double> b(t);
    auto vars = enc.bind(b, false);
    auto x = t.leaf(f, false);
    return t.val(t.mean_all(t.square(enc.forward(t, vars, x))))[0];
  };

  Tape<double> tape;
  Binder<double> binder(tape);
  auto vars = enc.bind(binder, true);
  auto x = tape.leaf(frames, true);
  auto loss = tape.mean_all(tape.square(enc.forward(tape, vars, x)));
  tape.backward(loss);

  // input gradient
  auto fd_input = test::finite_diff(frames.data, 1e-4, [&](const std::vector<double>& v) {
    Tensor<double> f = frames;
    f.data = v;
    return loss_value(f);
  });
  EXPECT_LT(test::max_rel_err(tape.grad(x).data, fd_input), 1e-3);

  // parameter gradients
  for (auto& [param, var] : binder.bound()) {
    auto fd = test::finite_diff(param->value.data, 1e-4, [&](const std::vector<double>& v) {
      auto saved = param->value.data;
      param->value.data = v;
      double out = loss_value(frames);
      param->value.data = saved;
      return out;
    });
    EXPECT_LT(test::max_rel_err(tape.grad(var).data, fd), 1e-3) << param->name;
  }
}
