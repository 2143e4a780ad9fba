#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "mdan/frame.hpp"
#include "mdan/tensor.hpp"

namespace mdan::test {

inline Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(n, c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.v) v = dist(rng);
  return t;
}

// Values bounded away from zero, for gradient checks through relu kinks.
inline Tensor random_tensor_offzero(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor t(n, c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.v) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Plain nested-loop convolution with bounds-checked zero padding; the
// independent oracle for conv2d. Summation order per output sample is
// input channel, then kernel row, then kernel column.
inline Tensor reference_conv2d(const Tensor& x, const ConvKernel& k) {
  const int ho = (x.h + 2 * k.pad - k.kh()) / k.stride + 1;
  const int wo = (x.w + 2 * k.pad - k.kw()) / k.stride + 1;
  Tensor y(x.n, k.out_channels(), ho, wo);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < k.out_channels(); ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = k.has_bias() ? k.bias[o] : 0.0;
          for (int ci = 0; ci < k.in_channels(); ++ci)
            for (int ky = 0; ky < k.kh(); ++ky)
              for (int kx = 0; kx < k.kw(); ++kx) {
                const int iy = oy * k.stride + ky - k.pad;
                const int ix = ox * k.stride + kx - k.pad;
                if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                  acc += k.w.at(o, ci, ky, kx) * x.at(n, ci, iy, ix);
              }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

inline ConvKernel random_kernel(int out_c, int in_c, int k, int stride, int pad, bool bias,
                                std::uint64_t seed) {
  ConvKernel kk;
  kk.w = random_tensor(out_c, in_c, k, k, seed);
  if (bias) {
    const Tensor b = random_tensor(out_c, 1, 1, 1, seed + 1);
    kk.bias = b.v;
  }
  kk.stride = stride;
  kk.pad = pad;
  return kk;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6);
}

// Central-difference check of an input gradient. loss(x) = sum g_i f(x)_i.
// Returns the max relative error between the analytic gradient and
// (loss(x+h) - loss(x-h)) / 2h per element.
inline double fd_check_input(Tensor x, const std::function<Tensor(const Tensor&)>& f,
                             const Tensor& grad_out, const Tensor& analytic,
                             double h = 1e-5) {
  const auto loss = [&]() {
    const Tensor y = f(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) acc += grad_out.v[i] * y.v[i];
    return acc;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double orig = x.v[i];
    x.v[i] = orig + h;
    const double lp = loss();
    x.v[i] = orig - h;
    const double lm = loss();
    x.v[i] = orig;
    worst = std::max(worst, rel_err(analytic.v[i], (lp - lm) / (2.0 * h)));
  }
  return worst;
}

// Deterministic "natural" test content: gradients, drifting waves and hard
// diagonal edges so the distortion simulator produces blocking and ringing.
// t shifts the pattern between frames of a sequence.
inline PlanarFrame synth_frame(int width, int height, int bit_depth, double t,
                               std::uint64_t seed = 1234) {
  PlanarFrame f = make_frame(width, height, bit_depth);
  const double maxv = static_cast<double>((1 << bit_depth) - 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(0.0, 6.283);
  const double p1 = ph(rng), p2 = ph(rng), p3 = ph(rng);
  const double tau = 6.283185307179586;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int stripe = static_cast<int>(std::floor((x + y + 6.0 * t) / 14.0));
      double v = 0.5 + 0.16 * std::sin(tau * (x + 4.0 * t) / 17.3 + p1) +
                 0.14 * std::sin(tau * (y - 3.0 * t) / 23.7 + p2) +
                 0.07 * std::sin(tau * (x + y) / 7.9 + p3) +
                 0.12 * (stripe % 2 == 0 ? 1.0 : -1.0) +
                 0.15 * (static_cast<double>(x) / width - 0.5);
      f.y.at(y, x) =
          static_cast<std::uint16_t>(std::clamp(std::round(v * maxv), 0.0, maxv));
    }
  }
  for (int y = 0; y < height / 2; ++y) {
    for (int x = 0; x < width / 2; ++x) {
      const double u = 0.5 + 0.1 * std::sin(tau * (x + 2.0 * t) / 19.0 + p2);
      const double v = 0.5 + 0.1 * std::cos(tau * (y + 2.0 * t) / 13.0 + p3);
      f.u.at(y, x) =
          static_cast<std::uint16_t>(std::clamp(std::round(u * maxv), 0.0, maxv));
      f.v.at(y, x) =
          static_cast<std::uint16_t>(std::clamp(std::round(v * maxv), 0.0, maxv));
    }
  }
  return f;
}

inline std::vector<PlanarFrame> synth_sequence(int width, int height, int bit_depth,
                                               int frames, std::uint64_t seed = 1234) {
  std::vector<PlanarFrame> seq;
  seq.reserve(frames);
  for (int i = 0; i < frames; ++i)
    seq.push_back(synth_frame(width, height, bit_depth, static_cast<double>(i), seed));
  return seq;
}

}  // namespace mdan::test
