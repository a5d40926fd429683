#ifndef FPAC_AUTODIFF_HPP
#define FPAC_AUTODIFF_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fpac/kernels.hpp"
#include "fpac/tensor.hpp"

namespace fpac {

// Reverse-mode autodiff over whole tensors. A Tape records one forward
// computation; node creation order is a topological order, so backward runs
// the recorded closures in reverse. Values stay alive on the tape, so
// closures only capture node ids.
template <typename T>
class Tape {
 public:
  using Var = int;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on demand
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var leaf(Tensor<T> v, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, requires_grad, nullptr});
    return static_cast<Var>(nodes_.size() - 1);
  }

  const Tensor<T>& val(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }

  Tensor<T>& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return unary_binary(std::move(out), a, b, [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) axpy(t.grad(a), g, T(1));
      if (t.needs_grad(b)) axpy(t.grad(b), g, T(1));
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return unary_binary(std::move(out), a, b, [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) axpy(t.grad(a), g, T(1));
      if (t.needs_grad(b)) axpy(t.grad(b), g, T(-1));
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return unary_binary(std::move(out), a, b, [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        const Tensor<T>& vb2 = t.val(b);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        const Tensor<T>& va = t.val(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  Var scale(Var a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v *= c;
    return unary_binary(std::move(out), a, -1, [a, c](Tape& t, Var self) {
      if (t.needs_grad(a)) axpy(t.grad(a), t.grad(self), c);
    });
  }

  Var add_scalar(Var a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v += c;
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (t.needs_grad(a)) axpy(t.grad(a), t.grad(self), T(1));
    });
  }

  Var neg(Var a) { return scale(a, T(-1)); }
  Var square(Var a) { return mul(a, a); }

  Var tanh_(Var a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& y = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }

  Var exp_(Var a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::exp(v);
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& y = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    });
  }

  Var log_(Var a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::log(v);
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& x = t.val(a);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i];
    });
  }

  Var swish(Var a) {
    Tensor<T> out = val(a);
    kernels::swish_inplace(out.data.data(), out.numel());
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& x = t.val(a);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      kernels::swish_grad_accum(x.data.data(), g.data.data(), ga.data.data(), g.numel());
    });
  }

  Var clamp(Var a, T lo, T hi) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    return unary_binary(std::move(out), a, -1, [a, lo, hi](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& x = t.val(a);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += g[i];
    });
  }

  Var min2(Var a, Var b) {
    check_same(a, b, "min2");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(out[i], vb[i]);
    return unary_binary(std::move(out), a, b, [a, b](Tape& t, Var self) {
      const Tensor<T>& va = t.val(a);
      const Tensor<T>& vb2 = t.val(b);
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          if (va[i] <= vb2[i]) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          if (vb2[i] < va[i]) gb[i] += g[i];
      }
    });
  }

  // ---- shape ----

  Var reshape(Var a, std::vector<int> shape) {
    Tensor<T> out = val(a).reshaped(std::move(shape));
    return unary_binary(std::move(out), a, -1, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  // concatenate along the last dimension; a [..., p], b [..., q]
  Var concat_last(Var a, Var b) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    int p = va.shape.back();
    int q = vb.shape.back();
    std::int64_t rows = va.numel() / p;
    if (vb.numel() / q != rows) throw std::invalid_argument("concat_last: row mismatch");
    std::vector<int> shape = va.shape;
    shape.back() = p + q;
    Tensor<T> out(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (int i = 0; i < p; ++i) out[r * (p + q) + i] = va[r * p + i];
      for (int i = 0; i < q; ++i) out[r * (p + q) + p + i] = vb[r * q + i];
    }
    return unary_binary(std::move(out), a, b, [a, b, p, q, rows](Tape& t, Var self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < p; ++i) ga[r * p + i] += g[r * (p + q) + i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < q; ++i) gb[r * q + i] += g[r * (p + q) + p + i];
      }
    });
  }

  // a, b, c of shape [N, K] -> [N, 3K] laid out a1,b1,c1,a2,b2,c2,...
  Var interleave3(Var a, Var b, Var c) {
    check_same(a, b, "interleave3");
    check_same(a, c, "interleave3");
    const Tensor<T>& va = val(a);
    int n = va.dim(0), k = va.dim(1);
    Tensor<T> out({n, 3 * k});
    const Tensor<T>& vb = val(b);
    const Tensor<T>& vc = val(c);
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < k; ++i) {
        out[static_cast<std::int64_t>(r) * 3 * k + 3 * i + 0] = va[static_cast<std::int64_t>(r) * k + i];
        out[static_cast<std::int64_t>(r) * 3 * k + 3 * i + 1] = vb[static_cast<std::int64_t>(r) * k + i];
        out[static_cast<std::int64_t>(r) * 3 * k + 3 * i + 2] = vc[static_cast<std::int64_t>(r) * k + i];
      }
    Var out_var = leaf(std::move(out), needs_grad(a) || needs_grad(b) || needs_grad(c));
    if (nodes_.back().requires_grad) {
      nodes_.back().backward = [a, b, c, n, k, out_var](Tape& t) {
        const Tensor<T>& g = t.grad(out_var);
        Var srcs[3] = {a, b, c};
        for (int j = 0; j < 3; ++j) {
          if (!t.needs_grad(srcs[j])) continue;
          Tensor<T>& gs = t.grad(srcs[j]);
          for (int r = 0; r < n; ++r)
            for (int i = 0; i < k; ++i)
              gs[static_cast<std::int64_t>(r) * k + i] += g[static_cast<std::int64_t>(r) * 3 * k + 3 * i + j];
        }
      };
    }
    return out_var;
  }

  // ---- reductions ----

  Var mean_all(Var a) {
    const Tensor<T>& va = val(a);
    T sum = 0;
    for (const auto& v : va.data) sum += v;
    Tensor<T> out({1});
    out[0] = sum / static_cast<T>(va.numel());
    std::int64_t n = va.numel();
    return unary_binary(std::move(out), a, -1, [a, n](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      T g = t.grad(self)[0] / static_cast<T>(n);
      for (auto& v : t.grad(a).data) v += g;
    });
  }

  // reduce the last dimension by summation
  Var sum_last(Var a) {
    const Tensor<T>& va = val(a);
    int d = va.shape.back();
    std::int64_t rows = va.numel() / d;
    std::vector<int> shape(va.shape.begin(), va.shape.end() - 1);
    if (shape.empty()) shape = {1};
    Tensor<T> out(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = 0;
      for (int i = 0; i < d; ++i) s += va[r * d + i];
      out[r] = s;
    }
    return unary_binary(std::move(out), a, -1, [a, d, rows](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) ga[r * d + i] += g[r];
    });
  }

  // x - mean(x) along the last dimension (centering projector)
  Var sub_mean_last(Var a) {
    const Tensor<T>& va = val(a);
    int d = va.shape.back();
    std::int64_t rows = va.numel() / d;
    Tensor<T> out = va;
    for (std::int64_t r = 0; r < rows; ++r) {
      T m = 0;
      for (int i = 0; i < d; ++i) m += va[r * d + i];
      m /= static_cast<T>(d);
      for (int i = 0; i < d; ++i) out[r * d + i] -= m;
    }
    return unary_binary(std::move(out), a, -1, [a, d, rows](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t r = 0; r < rows; ++r) {
        T m = 0;
        for (int i = 0; i < d; ++i) m += g[r * d + i];
        m /= static_cast<T>(d);
        for (int i = 0; i < d; ++i) ga[r * d + i] += g[r * d + i] - m;
      }
    });
  }

  // ---- softmax / expectation ----

  // softmax over the last dimension with temperature beta
  Var softmax_last(Var a, T beta) {
    const Tensor<T>& va = val(a);
    int d = va.shape.back();
    std::int64_t rows = va.numel() / d;
    Tensor<T> out = va;
    T inv_beta = T(1) / beta;
    for (std::int64_t r = 0; r < rows; ++r) kernels::softmax_row(&out[r * d], d, inv_beta);
    return unary_binary(std::move(out), a, -1, [a, d, rows, inv_beta](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& p = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (int i = 0; i < d; ++i) dot += g[r * d + i] * p[r * d + i];
        for (int i = 0; i < d; ++i)
          ga[r * d + i] += inv_beta * p[r * d + i] * (g[r * d + i] - dot);
      }
    });
  }

  // x [N, K, H, W]: joint softmax over the H*W positions of each channel
  Var softmax_hw(Var a, T beta) {
    const Tensor<T>& va = val(a);
    if (va.ndim() != 4) throw std::invalid_argument("softmax_hw: expected 4-d input");
    int hw = va.dim(2) * va.dim(3);
    std::int64_t rows = va.numel() / hw;
    Tensor<T> out = va;
    T inv_beta = T(1) / beta;
    for (std::int64_t r = 0; r < rows; ++r) kernels::softmax_row(&out[r * hw], hw, inv_beta);
    return unary_binary(std::move(out), a, -1, [a, hw, rows, inv_beta](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& p = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      for (std::int64_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (int i = 0; i < hw; ++i) dot += g[r * hw + i] * p[r * hw + i];
        for (int i = 0; i < hw; ++i)
          ga[r * hw + i] += inv_beta * p[r * hw + i] * (g[r * hw + i] - dot);
      }
    });
  }

  // expectation of a fixed grid under distributions along the last dimension:
  // p [..., d], grid [d] -> [...]
  Var expect_grid(Var p, std::vector<T> grid) {
    const Tensor<T>& vp = val(p);
    int d = vp.shape.back();
    if (static_cast<int>(grid.size()) != d)
      throw std::invalid_argument("expect_grid: grid length mismatch");
    std::int64_t rows = vp.numel() / d;
    std::vector<int> shape(vp.shape.begin(), vp.shape.end() - 1);
    if (shape.empty()) shape = {1};
    Tensor<T> out(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = 0;
      for (int i = 0; i < d; ++i) s += vp[r * d + i] * grid[static_cast<std::size_t>(i)];
      out[r] = s;
    }
    return unary_binary(std::move(out), p, -1,
                        [p, d, rows, grid = std::move(grid)](Tape& t, Var self) {
                          if (!t.needs_grad(p)) return;
                          const Tensor<T>& g = t.grad(self);
                          Tensor<T>& gp = t.grad(p);
                          for (std::int64_t r = 0; r < rows; ++r)
                            for (int i = 0; i < d; ++i)
                              gp[r * d + i] += g[r] * grid[static_cast<std::size_t>(i)];
                        });
  }

  // p [N, K, H, W] -> [N, K]: expectation of grid[w] (axis 3) or grid[h]
  // (axis 2) under the joint distribution
  Var expect_hw(Var p, std::vector<T> grid, int axis) {
    const Tensor<T>& vp = val(p);
    if (vp.ndim() != 4) throw std::invalid_argument("expect_hw: expected 4-d input");
    int h = vp.dim(2), w = vp.dim(3);
    int glen = axis == 3 ? w : h;
    if (static_cast<int>(grid.size()) != glen)
      throw std::invalid_argument("expect_hw: grid length mismatch");
    std::int64_t rows = vp.numel() / (static_cast<std::int64_t>(h) * w);
    Tensor<T> out({vp.dim(0), vp.dim(1)});
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = 0;
      const T* base = &vp[r * h * w];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          s += base[y * w + x] * grid[static_cast<std::size_t>(axis == 3 ? x : y)];
      out[r] = s;
    }
    return unary_binary(std::move(out), p, -1,
                        [p, h, w, rows, axis, grid = std::move(grid)](Tape& t, Var self) {
                          if (!t.needs_grad(p)) return;
                          const Tensor<T>& g = t.grad(self);
                          Tensor<T>& gp = t.grad(p);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            T* base = &gp[r * h * w];
                            for (int y = 0; y < h; ++y)
                              for (int x = 0; x < w; ++x)
                                base[y * w + x] +=
                                    g[r] * grid[static_cast<std::size_t>(axis == 3 ? x : y)];
                          }
                        });
  }

  // x [N, K, H, W] -> [N, K, W]: mean over rows (H)
  Var mean_axis_h(Var a) {
    const Tensor<T>& va = val(a);
    if (va.ndim() != 4) throw std::invalid_argument("mean_axis_h: expected 4-d input");
    int h = va.dim(2), w = va.dim(3);
    std::int64_t rows = va.numel() / (static_cast<std::int64_t>(h) * w);
    Tensor<T> out({va.dim(0), va.dim(1), w});
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* base = &va[r * h * w];
      T* o = &out[r * w];
      for (int x = 0; x < w; ++x) o[x] = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) o[x] += base[y * w + x];
      for (int x = 0; x < w; ++x) o[x] /= static_cast<T>(h);
    }
    return unary_binary(std::move(out), a, -1, [a, h, w, rows](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      T inv = T(1) / static_cast<T>(h);
      for (std::int64_t r = 0; r < rows; ++r) {
        T* base = &ga[r * h * w];
        const T* go = &g[r * w];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) base[y * w + x] += go[x] * inv;
      }
    });
  }

  // x [N, K, H, W] -> [N, K, H]: mean over columns (W)
  Var mean_axis_w(Var a) {
    const Tensor<T>& va = val(a);
    if (va.ndim() != 4) throw std::invalid_argument("mean_axis_w: expected 4-d input");
    int h = va.dim(2), w = va.dim(3);
    std::int64_t rows = va.numel() / (static_cast<std::int64_t>(h) * w);
    Tensor<T> out({va.dim(0), va.dim(1), h});
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* base = &va[r * h * w];
      T* o = &out[r * h];
      for (int y = 0; y < h; ++y) {
        T s = 0;
        for (int x = 0; x < w; ++x) s += base[y * w + x];
        o[y] = s / static_cast<T>(w);
      }
    }
    return unary_binary(std::move(out), a, -1, [a, h, w, rows](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      T inv = T(1) / static_cast<T>(w);
      for (std::int64_t r = 0; r < rows; ++r) {
        T* base = &ga[r * h * w];
        const T* go = &g[r * h];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) base[y * w + x] += go[y] * inv;
      }
    });
  }

  // x [N, K, H, W] -> [N, K]: mean over all spatial positions
  Var mean_hw(Var a) {
    const Tensor<T>& va = val(a);
    if (va.ndim() != 4) throw std::invalid_argument("mean_hw: expected 4-d input");
    int hw = va.dim(2) * va.dim(3);
    std::int64_t rows = va.numel() / hw;
    Tensor<T> out({va.dim(0), va.dim(1)});
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = 0;
      for (int i = 0; i < hw; ++i) s += va[r * hw + i];
      out[r] = s / static_cast<T>(hw);
    }
    return unary_binary(std::move(out), a, -1, [a, hw, rows](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& ga = t.grad(a);
      T inv = T(1) / static_cast<T>(hw);
      for (std::int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < hw; ++i) ga[r * hw + i] += g[r] * inv;
    });
  }

  // ---- linear algebra ----

  // y = x * w + bias; x [m, k], w [k, n], bias [n]
  Var linear(Var x, Var w, Var bias) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(bias);
    int m = vx.dim(0), k = vx.dim(1), n = vw.dim(1);
    if (vw.dim(0) != k || vb.numel() != n)
      throw std::invalid_argument("linear: shape mismatch");
    Tensor<T> out({m, n});
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < n; ++j) out[static_cast<std::int64_t>(r) * n + j] = vb[j];
    gemm(false, false, m, n, k, T(1), vx.data.data(), k, vw.data.data(), n, T(1),
         out.data.data(), n);
    Var out_var = leaf(std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(bias));
    if (nodes_.back().requires_grad) {
      nodes_.back().backward = [x, w, bias, m, k, n, out_var](Tape& t) {
        const Tensor<T>& g = t.grad(out_var);
        if (t.needs_grad(x))
          gemm(false, true, m, k, n, T(1), g.data.data(), n, t.val(w).data.data(), n, T(1),
               t.grad(x).data.data(), k);
        if (t.needs_grad(w))
          gemm(true, false, k, n, m, T(1), t.val(x).data.data(), k, g.data.data(), n, T(1),
               t.grad(w).data.data(), n);
        if (t.needs_grad(bias)) {
          Tensor<T>& gb = t.grad(bias);
          for (int r = 0; r < m; ++r)
            for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::int64_t>(r) * n + j];
        }
      };
    }
    return out_var;
  }

  // Valid 2-d convolution via whole-batch im2col + one GEMM per pass.
  // x [N, C, H, W], w [F, C, kh, kw], bias [F] -> [N, F, Ho, Wo]
  Var conv2d(Var x, Var w, Var bias, int stride) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    int f = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    if (vw.dim(1) != c) throw std::invalid_argument("conv2d: channel mismatch");
    if (h < kh || wd < kw) throw std::invalid_argument("conv2d: input smaller than kernel");
    int ho = (h - kh) / stride + 1;
    int wo = (wd - kw) / stride + 1;
    int ckk = c * kh * kw;
    std::int64_t owo = static_cast<std::int64_t>(ho) * wo;
    std::int64_t total = static_cast<std::int64_t>(n) * owo;

    std::vector<T> col(static_cast<std::size_t>(ckk) * total);
    kernels::im2col_batch(vx.data.data(), n, c, h, wd, kh, kw, stride, ho, wo, col.data());
    // y_r [F x N*owo]
    std::vector<T> y_r(static_cast<std::size_t>(f) * total);
    gemm(false, false, f, static_cast<int>(total), ckk, T(1), vw.data.data(), ckk, col.data(),
         static_cast<int>(total), T(0), y_r.data(), static_cast<int>(total));
    const Tensor<T>& vb = val(bias);
    Tensor<T> out({n, f, ho, wo});
    for (int s = 0; s < n; ++s)
      for (int fi = 0; fi < f; ++fi) {
        const T* src = y_r.data() + static_cast<std::int64_t>(fi) * total + static_cast<std::int64_t>(s) * owo;
        T* dst = &out[(static_cast<std::int64_t>(s) * f + fi) * owo];
        T b = vb[fi];
        for (std::int64_t i = 0; i < owo; ++i) dst[i] = src[i] + b;
      }

    Var out_var = leaf(std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(bias));
    if (nodes_.back().requires_grad) {
      nodes_.back().backward = [x, w, bias, n, c, h, wd, f, kh, kw, stride, ho, wo, out_var](
                                   Tape& t) {
        int ckk = c * kh * kw;
        std::int64_t owo = static_cast<std::int64_t>(ho) * wo;
        std::int64_t total = static_cast<std::int64_t>(n) * owo;
        const Tensor<T>& g = t.grad(out_var);
        // rearrange gradients to [F x N*owo]
        std::vector<T> g_r(static_cast<std::size_t>(f) * total);
        for (int s = 0; s < n; ++s)
          for (int fi = 0; fi < f; ++fi) {
            const T* src = &g[(static_cast<std::int64_t>(s) * f + fi) * owo];
            T* dst = g_r.data() + static_cast<std::int64_t>(fi) * total + static_cast<std::int64_t>(s) * owo;
            for (std::int64_t i = 0; i < owo; ++i) dst[i] = src[i];
          }
        if (t.needs_grad(w)) {
          std::vector<T> col(static_cast<std::size_t>(ckk) * total);
          kernels::im2col_batch(t.val(x).data.data(), n, c, h, wd, kh, kw, stride, ho, wo,
                                col.data());
          gemm(false, true, f, ckk, static_cast<int>(total), T(1), g_r.data(),
               static_cast<int>(total), col.data(), static_cast<int>(total), T(1),
               t.grad(w).data.data(), ckk);
        }
        if (t.needs_grad(bias)) {
          Tensor<T>& gb = t.grad(bias);
          for (int fi = 0; fi < f; ++fi) {
            T sum = 0;
            const T* src = g_r.data() + static_cast<std::int64_t>(fi) * total;
            for (std::int64_t i = 0; i < total; ++i) sum += src[i];
            gb[fi] += sum;
          }
        }
        if (t.needs_grad(x)) {
          std::vector<T> dcol(static_cast<std::size_t>(ckk) * total);
          gemm(true, false, ckk, static_cast<int>(total), f, T(1), t.val(w).data.data(), ckk,
               g_r.data(), static_cast<int>(total), T(0), dcol.data(), static_cast<int>(total));
          kernels::col2im_batch(dcol.data(), n, c, h, wd, kh, kw, stride, ho, wo,
                                t.grad(x).data.data());
        }
      };
    }
    return out_var;
  }

  // ---- backward driver ----

  void zero_grads() {
    for (auto& n : nodes_)
      if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
  }

  // Seed an arbitrary node and propagate. The seed shape must match.
  void backward_seed(Var v, const Tensor<T>& seed) {
    Tensor<T>& g = grad(v);
    if (!g.same_shape(seed)) throw std::invalid_argument("backward_seed: shape mismatch");
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
    for (int i = v; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backward && !n.grad.data.empty()) n.backward(*this);
    }
  }

  // Backward from a scalar loss.
  void backward(Var root) {
    if (val(root).numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    backward_seed(root, Tensor<T>::full({1}, T(1)));
  }

 private:
  std::vector<Node> nodes_;

  static void axpy(Tensor<T>& y, const Tensor<T>& x, T a) {
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += a * x[i];
  }

  void check_same(Var a, Var b, const char* what) const {
    if (!val(a).same_shape(val(b)))
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }




  template <typename F>
  Var unary_binary(Tensor<T> out, Var a, Var b, F&& bw) {
    bool rg = needs_grad(a) || (b >= 0 && needs_grad(b));
    Var v = leaf(std::move(out), rg);
    if (rg) {
      nodes_.back().backward = [bw = std::forward<F>(bw), v](Tape& t) { bw(t, v); };
    }
    return v;
  }
};

}  // namespace fpac

#endif  // FPAC_AUTODIFF_HPP
