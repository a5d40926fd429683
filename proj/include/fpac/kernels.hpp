#ifndef FPAC_KERNELS_HPP
#define FPAC_KERNELS_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "fpac/tensor.hpp"

namespace fpac::kernels {

// Keep large scratch blocks in the heap arena instead of per-call mmap;
// the conv and softmax paths allocate multi-megabyte buffers every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static bool done = false;
  if (!done) {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    done = true;
  }
#endif
}

// exp with ~2e-7 relative error (cephes-style range reduction), written so
// the compiler can vectorize the surrounding loops. The double overload stays
// exact for oracle paths.
inline float fast_exp(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  float nf = std::floor(1.44269504088896341f * x + 0.5f);
  x -= nf * 0.693359375f;
  x -= nf * -2.12194440e-4f;
  float z = 1.9875691500e-4f;
  z = z * x + 1.3981999507e-3f;
  z = z * x + 8.3334519073e-3f;
  z = z * x + 4.1665795894e-2f;
  z = z * x + 1.6666665459e-1f;
  z = z * x + 5.0000001201e-1f;
  z = z * x * x + x + 1.0f;
  std::int32_t bits;
  std::memcpy(&bits, &z, 4);
  bits += static_cast<std::int32_t>(nf) << 23;
  float out;
  std::memcpy(&out, &bits, 4);
  return out;
}

inline double fast_exp(double x) { return std::exp(x); }

#if defined(__AVX2__) && defined(__FMA__)
// 8-wide exp matching fast_exp
inline __m256 exp8(__m256 x) {
  x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.0f)), _mm256_set1_ps(88.0f));
  __m256 nf = _mm256_round_ps(_mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f),
                                              _mm256_set1_ps(0.5f)),
                              _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_ps(nf, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(nf, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 z = _mm256_set1_ps(1.9875691500e-4f);
  z = _mm256_fmadd_ps(z, x, _mm256_set1_ps(1.3981999507e-3f));
  z = _mm256_fmadd_ps(z, x, _mm256_set1_ps(8.3334519073e-3f));
  z = _mm256_fmadd_ps(z, x, _mm256_set1_ps(4.1665795894e-2f));
  z = _mm256_fmadd_ps(z, x, _mm256_set1_ps(1.6666665459e-1f));
  z = _mm256_fmadd_ps(z, x, _mm256_set1_ps(5.0000001201e-1f));
  z = _mm256_fmadd_ps(_mm256_mul_ps(z, x), x, _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  __m256i bits = _mm256_castps_si256(z);
  bits = _mm256_add_epi32(bits, _mm256_slli_epi32(_mm256_cvtps_epi32(nf), 23));
  return _mm256_castsi256_ps(bits);
}
#endif

template <typename T>
inline void exp_inplace(T* v, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) v[i] = fast_exp(v[i]);
}

#if defined(__AVX2__) && defined(__FMA__)
inline void exp_inplace(float* v, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(v + i, exp8(_mm256_loadu_ps(v + i)));
  for (; i < n; ++i) v[i] = fast_exp(v[i]);
}
#endif

// x * sigmoid(x), in place
template <typename T>
inline void swish_inplace(T* v, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) v[i] = v[i] / (T(1) + fast_exp(-v[i]));
}

#if defined(__AVX2__) && defined(__FMA__)
inline void swish_inplace(float* v, std::int64_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 x = _mm256_loadu_ps(v + i);
    __m256 e = exp8(_mm256_sub_ps(_mm256_setzero_ps(), x));
    _mm256_storeu_ps(v + i, _mm256_div_ps(x, _mm256_add_ps(one, e)));
  }
  for (; i < n; ++i) v[i] = v[i] / (1.0f + fast_exp(-v[i]));
}
#endif

// accumulate d(x * sigmoid(x))/dx * g into ga
template <typename T>
inline void swish_grad_accum(const T* x, const T* g, T* ga, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    T s = T(1) / (T(1) + fast_exp(-x[i]));
    ga[i] += g[i] * (s + x[i] * s * (T(1) - s));
  }
}

#if defined(__AVX2__) && defined(__FMA__)
inline void swish_grad_accum(const float* x, const float* g, float* ga, std::int64_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 xv = _mm256_loadu_ps(x + i);
    __m256 e = exp8(_mm256_sub_ps(_mm256_setzero_ps(), xv));
    __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, e));
    __m256 d = _mm256_fmadd_ps(_mm256_mul_ps(xv, s), _mm256_sub_ps(one, s), s);
    _mm256_storeu_ps(ga + i, _mm256_fmadd_ps(_mm256_loadu_ps(g + i), d,
                                             _mm256_loadu_ps(ga + i)));
  }
  for (; i < n; ++i) {
    float s = 1.0f / (1.0f + fast_exp(-x[i]));
    ga[i] += g[i] * (s + x[i] * s * (1.0f - s));
  }
}
#endif

// softmax with max-subtraction; all-equal inputs give the exact uniform
// distribution
template <typename T>
inline void softmax_row(T* v, int n, T inv_beta) {
  T mx = v[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  for (int i = 0; i < n; ++i) v[i] = (v[i] - mx) * inv_beta;
  exp_inplace(v, n);
  T sum = 0;
  for (int i = 0; i < n; ++i) sum += v[i];
  T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) v[i] *= inv;
}

template <typename T>
inline void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int ho, int wo,
                   T* col) {
  int owo = ho * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * owo;
        const T* src = x + static_cast<std::int64_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const T* row = src + (oy * stride + ky) * w + kx;
          for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = row[ox * stride];
        }
      }
}

// Whole-batch im2col: column j of sample s lands at col[row][s * ho*wo + j],
// so one GEMM covers the batch.
template <typename T>
inline void im2col_batch(const T* x, int n, int c, int h, int w, int kh, int kw, int stride,
                         int ho, int wo, T* col) {
  std::int64_t owo = static_cast<std::int64_t>(ho) * wo;
  std::int64_t total = static_cast<std::int64_t>(n) * owo;
  for (int s = 0; s < n; ++s) {
    const T* xs = x + static_cast<std::int64_t>(s) * c * h * w;
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          T* dst = col + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * total +
                   static_cast<std::int64_t>(s) * owo;
          const T* src = xs + static_cast<std::int64_t>(ci) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            const T* row = src + (oy * stride + ky) * w + kx;
            T* drow = dst + static_cast<std::int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) drow[ox] = row[ox * stride];
          }
        }
  }
}

template <typename T>
inline void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride, int ho, int wo,
                   T* x) {
  int owo = ho * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * owo;
        T* dst = x + static_cast<std::int64_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          T* row = dst + (oy * stride + ky) * w + kx;
          for (int ox = 0; ox < wo; ++ox) row[ox * stride] += src[oy * wo + ox];
        }
      }
}

// scatter-add the batch-level column matrix back into input gradients
template <typename T>
inline void col2im_batch(const T* col, int n, int c, int h, int w, int kh, int kw, int stride,
                         int ho, int wo, T* x) {
  std::int64_t owo = static_cast<std::int64_t>(ho) * wo;
  std::int64_t total = static_cast<std::int64_t>(n) * owo;
  for (int s = 0; s < n; ++s) {
    T* xs = x + static_cast<std::int64_t>(s) * c * h * w;
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* src = col + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * total +
                         static_cast<std::int64_t>(s) * owo;
          T* dst = xs + static_cast<std::int64_t>(ci) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            T* row = dst + (oy * stride + ky) * w + kx;
            const T* srow = src + static_cast<std::int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) row[ox * stride] += srow[ox];
          }
        }
  }
}

// Batched separable coordinate forward: maps [N, K, H, W] -> xs, ys [N, K].
// Mean-pools each channel to 1-d profiles, then softmax and grid expectation.
template <typename T>
inline void separable_coords(const Tensor<T>& maps, T beta, Tensor<T>& xs, Tensor<T>& ys,
                             std::vector<T>& prof_x, std::vector<T>& prof_y) {
  int h = maps.dim(2), w = maps.dim(3);
  std::int64_t channels = maps.numel() / (static_cast<std::int64_t>(h) * w);
  xs = Tensor<T>({maps.dim(0), maps.dim(1)});
  ys = Tensor<T>({maps.dim(0), maps.dim(1)});
  prof_x.assign(static_cast<std::size_t>(w), T(0));
  prof_y.assign(static_cast<std::size_t>(h), T(0));
  T inv_beta = T(1) / beta;
  T gx0 = T(-1), gy0 = T(-1);
  T gx_step = w > 1 ? T(2) / (w - 1) : T(0);
  T gy_step = h > 1 ? T(2) / (h - 1) : T(0);
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const T* base = &maps[ch * h * w];
    for (int x = 0; x < w; ++x) prof_x[static_cast<std::size_t>(x)] = T(0);
    for (int y = 0; y < h; ++y) {
      const T* row = base + static_cast<std::int64_t>(y) * w;
      T rs = 0;
      for (int x = 0; x < w; ++x) {
        prof_x[static_cast<std::size_t>(x)] += row[x];
        rs += row[x];
      }
      prof_y[static_cast<std::size_t>(y)] = rs / static_cast<T>(w);
    }
    for (int x = 0; x < w; ++x) prof_x[static_cast<std::size_t>(x)] /= static_cast<T>(h);
    softmax_row(prof_x.data(), w, inv_beta);
    softmax_row(prof_y.data(), h, inv_beta);
    T ex = 0, ey = 0;
    for (int x = 0; x < w; ++x) ex += prof_x[static_cast<std::size_t>(x)] * (gx0 + gx_step * x);
    for (int y = 0; y < h; ++y) ey += prof_y[static_cast<std::size_t>(y)] * (gy0 + gy_step * y);
    xs[ch] = ex;
    ys[ch] = ey;
  }
}

// Batched full-2d coordinate forward: joint spatial softmax per channel, then
// 2-d grid expectations. prob is scratch of the maps' shape.
template <typename T>
inline void full2d_coords(const Tensor<T>& maps, T beta, Tensor<T>& prob, Tensor<T>& xs,
                          Tensor<T>& ys) {
  int h = maps.dim(2), w = maps.dim(3);
  std::int64_t channels = maps.numel() / (static_cast<std::int64_t>(h) * w);
  if (!prob.same_shape(maps)) prob = maps;
  else prob.data = maps.data;
  xs = Tensor<T>({maps.dim(0), maps.dim(1)});
  ys = Tensor<T>({maps.dim(0), maps.dim(1)});
  T inv_beta = T(1) / beta;
  T gx0 = T(-1), gy0 = T(-1);
  T gx_step = w > 1 ? T(2) / (w - 1) : T(0);
  T gy_step = h > 1 ? T(2) / (h - 1) : T(0);
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    T* p = &prob[ch * h * w];
    softmax_row(p, h * w, inv_beta);
    T ex = 0, ey = 0;
    for (int y = 0; y < h; ++y) {
      const T* row = p + static_cast<std::int64_t>(y) * w;
      T rs = 0;
      for (int x = 0; x < w; ++x) {
        ex += row[x] * (gx0 + gx_step * x);
        rs += row[x];
      }
      ey += rs * (gy0 + gy_step * y);
    }
    xs[ch] = ex;
    ys[ch] = ey;
  }
}

}  // namespace fpac::kernels

#endif  // FPAC_KERNELS_HPP
