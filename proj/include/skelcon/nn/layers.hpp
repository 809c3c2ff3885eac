#pragma once

// Layers with explicit forward/backward passes over raw buffers. Backward
// functions accumulate (+=) into parameter gradients and input gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "skelcon/nn/params.hpp"

namespace skelcon::nn {

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
inline void relu_inplace(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

/// dx *= 1[y > 0], where y is the post-activation output.
template <class T>
inline void relu_backward_inplace(const std::vector<T>& y, std::vector<T>& dy) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(y[i] > T(0))) dy[i] = T(0);
}

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

/// y = W x + b with W stored [out][in].
template <class T>
struct Dense {
  std::size_t w = 0, b = 0;
  int in = 0, out = 0;

  static Dense make(ParamSet<T>& p, const std::string& name, int in, int out) {
    Dense d;
    d.in = in;
    d.out = out;
    d.w = p.add(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
    d.b = p.add(name + ".bias", {static_cast<std::size_t>(out)});
    return d;
  }

  void init(ParamSet<T>& p, Rng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(p, w, static_cast<std::size_t>(in) * out, bound, rng);
    fill_uniform(p, b, static_cast<std::size_t>(out), bound, rng);
  }

  std::size_t parameter_count() const { return static_cast<std::size_t>(in) * out + out; }

  void forward(const T* params, const T* x, T* y) const {
    const T* W = params + w;
    const T* B = params + b;
    for (int o = 0; o < out; ++o) y[o] = B[o] + dot(W + static_cast<std::size_t>(o) * in, x, in);
  }

  void backward(const T* params, const T* x, const T* dy, T* grad, T* dx) const {
    const T* W = params + w;
    T* gW = grad + w;
    T* gB = grad + b;
    for (int o = 0; o < out; ++o) {
      const T d = dy[o];
      if (d == T(0)) continue;
      gB[o] += d;
      axpy(d, x, gW + static_cast<std::size_t>(o) * in, in);
      if (dx) axpy(d, W + static_cast<std::size_t>(o) * in, dx, in);
    }
  }
};

/// Convolution along the frame axis of a [frames][groups][channels] tensor,
/// shared across groups, zero padded to preserve length. Weights [out][k][in].
/// With kernel 1 and one group this is a per-frame dense layer.
template <class T>
struct TemporalConv {
  std::size_t w = 0, b = 0;
  int in = 0, out = 0, kernel = 1;

  static TemporalConv make(ParamSet<T>& p, const std::string& name, int in, int out, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ContractError("temporal kernel must be odd");
    TemporalConv c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.w = p.add(name + ".weight",
                {static_cast<std::size_t>(out), static_cast<std::size_t>(kernel), static_cast<std::size_t>(in)});
    c.b = p.add(name + ".bias", {static_cast<std::size_t>(out)});
    return c;
  }

  void init(ParamSet<T>& p, Rng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in) * kernel);
    fill_uniform(p, w, static_cast<std::size_t>(out) * kernel * in, bound, rng);
    fill_uniform(p, b, static_cast<std::size_t>(out), bound, rng);
  }

  std::size_t parameter_count() const { return static_cast<std::size_t>(out) * kernel * in + out; }

  void forward(const T* params, const T* x, int frames, int groups, T* y) const {
    const T* W = params + w;
    const T* B = params + b;
    const int pad = kernel / 2;
    const std::size_t in_row = static_cast<std::size_t>(groups) * in;
    // [k][in][out] copy so the inner loop is a contiguous axpy over outputs.
    std::vector<T> wt(static_cast<std::size_t>(kernel) * in * out);
    for (int o = 0; o < out; ++o)
      for (int k = 0; k < kernel; ++k)
        for (int i = 0; i < in; ++i)
          wt[(static_cast<std::size_t>(k) * in + i) * out + o] = W[(static_cast<std::size_t>(o) * kernel + k) * in + i];
    for (int t = 0; t < frames; ++t)
      for (int g = 0; g < groups; ++g) {
        T* yo = y + (static_cast<std::size_t>(t) * groups + g) * out;
        for (int o = 0; o < out; ++o) yo[o] = B[o];
        for (int k = 0; k < kernel; ++k) {
          const int ts = t + k - pad;
          if (ts < 0 || ts >= frames) continue;
          const T* xi = x + ts * in_row + static_cast<std::size_t>(g) * in;
          const T* wk = wt.data() + static_cast<std::size_t>(k) * in * out;
          for (int i = 0; i < in; ++i) axpy(xi[i], wk + static_cast<std::size_t>(i) * out, yo, out);
        }
      }
  }

  void backward(const T* params, const T* x, const T* dy, int frames, int groups, T* grad, T* dx) const {
    const T* W = params + w;
    T* gW = grad + w;
    T* gB = grad + b;
    const int pad = kernel / 2;
    const std::size_t in_row = static_cast<std::size_t>(groups) * in;
    for (int t = 0; t < frames; ++t)
      for (int g = 0; g < groups; ++g) {
        const T* dyo = dy + (static_cast<std::size_t>(t) * groups + g) * out;
        for (int o = 0; o < out; ++o) gB[o] += dyo[o];
        for (int k = 0; k < kernel; ++k) {
          const int ts = t + k - pad;
          if (ts < 0 || ts >= frames) continue;
          const std::size_t xo = ts * in_row + static_cast<std::size_t>(g) * in;
          const T* xi = x + xo;
          for (int o = 0; o < out; ++o) {
            const T d = dyo[o];
            if (d == T(0)) continue;
            const std::size_t wo = (static_cast<std::size_t>(o) * kernel + k) * in;
            axpy(d, xi, gW + wo, in);
            if (dx) axpy(d, W + wo, dx + xo, in);
          }
        }
      }
  }
};

/// One direction of a gated recurrent layer (gate order r, z, n):
///   r = s(Wir x + bir + Whr h + bhr), z = s(Wiz x + biz + Whz h + bhz)
///   n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) n + z h
template <class T>
struct GruDirection {
  std::size_t w_ih = 0, w_hh = 0, b_ih = 0, b_hh = 0;
  int in = 0, hidden = 0;
  bool reverse = false;

  struct Cache {
    int frames = 0;
    std::vector<T> xi;  // [t][3H] input projections incl. bias
    std::vector<T> r, z, n, hn;  // [t][H]; hn = Whn h_prev + bhn
    std::vector<T> h;  // [t][H] outputs
  };

  static GruDirection make(ParamSet<T>& p, const std::string& name, int in, int hidden, bool reverse) {
    GruDirection d;
    d.in = in;
    d.hidden = hidden;
    d.reverse = reverse;
    const auto H3 = static_cast<std::size_t>(3 * hidden);
    d.w_ih = p.add(name + ".w_ih", {H3, static_cast<std::size_t>(in)});
    d.w_hh = p.add(name + ".w_hh", {H3, static_cast<std::size_t>(hidden)});
    d.b_ih = p.add(name + ".b_ih", {H3});
    d.b_hh = p.add(name + ".b_hh", {H3});
    return d;
  }

  void init(ParamSet<T>& p, Rng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    const auto H3 = static_cast<std::size_t>(3 * hidden);
    fill_uniform(p, w_ih, H3 * in, bound, rng);
    fill_uniform(p, w_hh, H3 * hidden, bound, rng);
    fill_uniform(p, b_ih, H3, bound, rng);
    fill_uniform(p, b_hh, H3, bound, rng);
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(3 * hidden) * (in + hidden + 2);
  }

  /// x: [frames][x_stride] with this layer's input at column 0.
  /// Writes h_t into out[t * out_stride + out_offset ...].
  void forward(const T* params, const T* x, std::size_t x_stride, int frames, T* out, std::size_t out_stride,
               std::size_t out_offset, Cache& c) const {
    const int H = hidden;
    const std::size_t H3 = 3 * static_cast<std::size_t>(H);
    c.frames = frames;
    c.xi.assign(frames * H3, T(0));
    c.r.assign(static_cast<std::size_t>(frames) * H, T(0));
    c.z = c.r;
    c.n = c.r;
    c.hn = c.r;
    c.h = c.r;
    const T* Wi = params + w_ih;
    const T* Wh = params + w_hh;
    const T* Bi = params + b_ih;
    const T* Bh = params + b_hh;
    for (int t = 0; t < frames; ++t) {
      const T* xt = x + t * x_stride;
      T* xi = c.xi.data() + t * H3;
      for (std::size_t g = 0; g < H3; ++g) xi[g] = Bi[g] + dot(Wi + g * in, xt, in);
    }
    std::vector<T> zeros(H, T(0)), hh(H3);
    for (int s = 0; s < frames; ++s) {
      const int t = reverse ? frames - 1 - s : s;
      const T* hprev = s == 0 ? zeros.data() : c.h.data() + static_cast<std::size_t>(reverse ? t + 1 : t - 1) * H;
      for (std::size_t g = 0; g < H3; ++g) hh[g] = Bh[g] + dot(Wh + g * H, hprev, H);
      const T* xi = c.xi.data() + t * H3;
      const std::size_t o = static_cast<std::size_t>(t) * H;
      for (int k = 0; k < H; ++k) {
        const T r = sigmoid(xi[k] + hh[k]);
        const T z = sigmoid(xi[H + k] + hh[H + k]);
        const T hn = hh[2 * H + k];
        const T n = std::tanh(xi[2 * H + k] + r * hn);
        c.r[o + k] = r;
        c.z[o + k] = z;
        c.n[o + k] = n;
        c.hn[o + k] = hn;
        c.h[o + k] = (T(1) - z) * n + z * hprev[k];
      }
      std::copy(c.h.begin() + o, c.h.begin() + o + H, out + t * out_stride + out_offset);
    }
  }

  /// dh: [frames][dh_stride] gradient w.r.t. this direction's outputs, read at
  /// column dh_offset. Accumulates dx ([frames][x_stride]) when non-null.
  void backward(const T* params, const T* x, std::size_t x_stride, const Cache& c, const T* dh,
                std::size_t dh_stride, std::size_t dh_offset, T* grad, T* dx) const {
    const int H = hidden;
    const int frames = c.frames;
    const std::size_t H3 = 3 * static_cast<std::size_t>(H);
    const T* Wi = params + w_ih;
    const T* Wh = params + w_hh;
    T* gWi = grad + w_ih;
    T* gWh = grad + w_hh;
    T* gBi = grad + b_ih;
    T* gBh = grad + b_hh;
    std::vector<T> dh_next(H, T(0)), dh_prev(H), gi(H3), gh(H3), zeros(H, T(0));
    for (int s = frames - 1; s >= 0; --s) {
      const int t = reverse ? frames - 1 - s : s;
      const T* hprev = s == 0 ? zeros.data() : c.h.data() + static_cast<std::size_t>(reverse ? t + 1 : t - 1) * H;
      const std::size_t o = static_cast<std::size_t>(t) * H;
      const T* dht = dh + t * dh_stride + dh_offset;
      for (int k = 0; k < H; ++k) {
        const T d = dht[k] + dh_next[k];
        const T r = c.r[o + k], z = c.z[o + k], n = c.n[o + k], hn = c.hn[o + k];
        const T dn = d * (T(1) - z);
        const T dz = d * (hprev[k] - n);
        dh_prev[k] = d * z;
        const T dan = dn * (T(1) - n * n);
        const T dr = dan * hn;
        const T daz = dz * z * (T(1) - z);
        const T dar = dr * r * (T(1) - r);
        gi[k] = dar;
        gi[H + k] = daz;
        gi[2 * H + k] = dan;
        gh[k] = dar;
        gh[H + k] = daz;
        gh[2 * H + k] = dan * r;
      }
      const T* xt = x + t * x_stride;
      T* dxt = dx ? dx + t * x_stride : nullptr;
      for (std::size_t g = 0; g < H3; ++g) {
        gBi[g] += gi[g];
        gBh[g] += gh[g];
        if (gi[g] != T(0)) {
          axpy(gi[g], xt, gWi + g * in, in);
          if (dxt) axpy(gi[g], Wi + g * in, dxt, in);
        }
        if (gh[g] != T(0)) {
          axpy(gh[g], hprev, gWh + g * H, H);
          axpy(gh[g], Wh + g * H, dh_prev.data(), H);
        }
      }
      dh_next.swap(dh_prev);
    }
  }
};

/// out[t][a*J + i] = sum_j A_hat[i][j] * x[t][a*J + j] for each actor block.
/// A_hat is symmetric, so the same routine propagates gradients.
template <class T>
void graph_aggregate(const std::vector<std::vector<std::pair<int, double>>>& neighbors, int joints, int actors,
                     const T* x, int frames, int channels, T* out) {
  const std::size_t nodes = static_cast<std::size_t>(joints) * actors;
  std::fill(out, out + frames * nodes * channels, T(0));
  for (int t = 0; t < frames; ++t)
    for (int a = 0; a < actors; ++a)
      for (int i = 0; i < joints; ++i) {
        T* o = out + (t * nodes + static_cast<std::size_t>(a) * joints + i) * channels;
        for (auto [j, w] : neighbors[i])
          axpy(static_cast<T>(w), x + (t * nodes + static_cast<std::size_t>(a) * joints + j) * channels, o,
               static_cast<std::size_t>(channels));
      }
}

}  // namespace skelcon::nn
