#include "mdan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

std::string dims4(int n, int c, int h, int w) {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw InputError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

// Zero-padded copy of one batch item, contiguous (c, h+2p, w+2p).
void pad_image(const Tensor& x, int n, int pad, std::vector<double>& out) {
  const int hp = x.h + 2 * pad;
  const int wp = x.w + 2 * pad;
  out.assign(static_cast<std::size_t>(x.c) * hp * wp, 0.0);
  for (int ci = 0; ci < x.c; ++ci) {
    for (int y = 0; y < x.h; ++y) {
      const double* src = &x.v[x.idx(n, ci, y, 0)];
      double* dst = &out[(static_cast<std::size_t>(ci) * hp + y + pad) * wp + pad];
      std::copy(src, src + x.w, dst);
    }
  }
}

}  // namespace

Tensor::Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
  require(n_ >= 1 && c_ >= 1 && h_ >= 1 && w_ >= 1,
          "tensor dims must be >= 1, got " + dims4(n_, c_, h_, w_));
  v.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0);
}

std::string Tensor::shape_str() const { return dims4(n, c, h, w); }

void Tensor::fill(double value) { std::fill(v.begin(), v.end(), value); }

bool Tensor::all_finite() const {
  for (double s : v) {
    if (!std::isfinite(s)) return false;
  }
  return true;
}

Tensor conv2d(const Tensor& x, const ConvKernel& k) {
  require(k.stride >= 1, "conv2d: stride must be positive");
  require(k.pad >= 0, "conv2d: padding must be non-negative");
  if (x.c != k.in_channels()) {
    throw InputError("conv2d: input channels " + x.shape_str() +
                     " do not match kernel " + k.w.shape_str());
  }
  if (k.has_bias() && static_cast<int>(k.bias.size()) != k.out_channels()) {
    throw InputError("conv2d: bias length " + std::to_string(k.bias.size()) +
                     " does not match out channels " + std::to_string(k.out_channels()));
  }
  const int ho = (x.h + 2 * k.pad - k.kh()) / k.stride + 1;
  const int wo = (x.w + 2 * k.pad - k.kw()) / k.stride + 1;
  require(x.h + 2 * k.pad >= k.kh() && x.w + 2 * k.pad >= k.kw() && ho >= 1 && wo >= 1,
          "conv2d: kernel " + k.w.shape_str() + " does not fit input " + x.shape_str() +
          " with pad " + std::to_string(k.pad));

  Tensor y(x.n, k.out_channels(), ho, wo);
  const int hp = x.h + 2 * k.pad;
  const int wp = x.w + 2 * k.pad;
  std::vector<double> xpad;
  for (int n = 0; n < x.n; ++n) {
    pad_image(x, n, k.pad, xpad);
    for (int co = 0; co < k.out_channels(); ++co) {
      double* yb = &y.v[y.idx(n, co, 0, 0)];
      const double b = k.has_bias() ? k.bias[co] : 0.0;
      std::fill(yb, yb + static_cast<std::size_t>(ho) * wo, b);
      // Per output sample the additions run in (ci, kh, kw) order.
      for (int ci = 0; ci < k.in_channels(); ++ci) {
        const double* xc = &xpad[static_cast<std::size_t>(ci) * hp * wp];
        for (int ky = 0; ky < k.kh(); ++ky) {
          for (int kx = 0; kx < k.kw(); ++kx) {
            const double wv = k.w.at(co, ci, ky, kx);
            if (k.stride == 1) {
              for (int oy = 0; oy < ho; ++oy) {
                const double* src = xc + static_cast<std::size_t>(oy + ky) * wp + kx;
                double* dst = yb + static_cast<std::size_t>(oy) * wo;
                for (int ox = 0; ox < wo; ++ox) dst[ox] += wv * src[ox];
              }
            } else {
              for (int oy = 0; oy < ho; ++oy) {
                const double* src = xc + static_cast<std::size_t>(oy * k.stride + ky) * wp + kx;
                double* dst = yb + static_cast<std::size_t>(oy) * wo;
                for (int ox = 0; ox < wo; ++ox) dst[ox] += wv * src[ox * k.stride];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvKernel& k, const Tensor& grad_out) {
  const int ho = (x.h + 2 * k.pad - k.kh()) / k.stride + 1;
  const int wo = (x.w + 2 * k.pad - k.kw()) / k.stride + 1;
  if (grad_out.n != x.n || grad_out.c != k.out_channels() || grad_out.h != ho ||
      grad_out.w != wo) {
    throw InputError("conv2d_backward: grad shape " + grad_out.shape_str() +
                     " does not match conv output " + dims4(x.n, k.out_channels(), ho, wo));
  }

  ConvGrads g;
  g.x = Tensor(x.n, x.c, x.h, x.w);
  g.w = Tensor(k.w.n, k.w.c, k.w.h, k.w.w);
  if (k.has_bias()) g.bias.assign(k.bias.size(), 0.0);

  const int hp = x.h + 2 * k.pad;
  const int wp = x.w + 2 * k.pad;
  std::vector<double> xpad;
  std::vector<double> dxpad(static_cast<std::size_t>(x.c) * hp * wp);

  for (int n = 0; n < x.n; ++n) {
    pad_image(x, n, k.pad, xpad);
    std::fill(dxpad.begin(), dxpad.end(), 0.0);
    for (int co = 0; co < k.out_channels(); ++co) {
      const double* gb = &grad_out.v[grad_out.idx(n, co, 0, 0)];
      if (k.has_bias()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) acc += gb[i];
        g.bias[co] += acc;
      }
      for (int ci = 0; ci < k.in_channels(); ++ci) {
        const double* xc = &xpad[static_cast<std::size_t>(ci) * hp * wp];
        double* dxc = &dxpad[static_cast<std::size_t>(ci) * hp * wp];
        for (int ky = 0; ky < k.kh(); ++ky) {
          for (int kx = 0; kx < k.kw(); ++kx) {
            const double wv = k.w.at(co, ci, ky, kx);
            double wacc = 0.0;
            for (int oy = 0; oy < ho; ++oy) {
              const double* grow = gb + static_cast<std::size_t>(oy) * wo;
              const std::size_t base = static_cast<std::size_t>(oy * k.stride + ky) * wp + kx;
              const double* srow = xc + base;
              double* drow = dxc + base;
              if (k.stride == 1) {
                for (int ox = 0; ox < wo; ++ox) {
                  wacc += grow[ox] * srow[ox];
                  drow[ox] += wv * grow[ox];
                }
              } else {
                for (int ox = 0; ox < wo; ++ox) {
                  wacc += grow[ox] * srow[ox * k.stride];
                  drow[ox * k.stride] += wv * grow[ox];
                }
              }
            }
            g.w.at(co, ci, ky, kx) += wacc;
          }
        }
      }
    }
    for (int ci = 0; ci < x.c; ++ci) {
      for (int y = 0; y < x.h; ++y) {
        const double* src = &dxpad[(static_cast<std::size_t>(ci) * hp + y + k.pad) * wp + k.pad];
        double* dst = &g.x.v[g.x.idx(n, ci, y, 0)];
        std::copy(src, src + x.w, dst);
      }
    }
  }
  return g;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  require(r >= 1, "pixel_shuffle: factor must be >= 1");
  if (x.c % (r * r) != 0) {
    throw InputError("pixel_shuffle: channels " + std::to_string(x.c) +
                     " not divisible by r^2=" + std::to_string(r * r));
  }
  Tensor y(x.n, x.c / (r * r), x.h * r, x.w * r);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < y.c; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx)
          for (int iy = 0; iy < x.h; ++iy)
            for (int ix = 0; ix < x.w; ++ix)
              y.at(n, c, iy * r + dy, ix * r + dx) =
                  x.at(n, c * r * r + dy * r + dx, iy, ix);
  return y;
}

Tensor space_to_depth(const Tensor& x, int r) {
  require(r >= 1, "space_to_depth: factor must be >= 1");
  if (x.h % r != 0 || x.w % r != 0) {
    throw InputError("space_to_depth: dims " + x.shape_str() +
                     " not divisible by r=" + std::to_string(r));
  }
  Tensor y(x.n, x.c * r * r, x.h / r, x.w / r);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx)
          for (int iy = 0; iy < y.h; ++iy)
            for (int ix = 0; ix < y.w; ++ix)
              y.at(n, c * r * r + dy * r + dx, iy, ix) =
                  x.at(n, c, iy * r + dy, ix * r + dx);
  return y;
}

Tensor max_pool2d(const Tensor& x, int k, int stride) {
  require(k >= 1 && stride >= 1, "max_pool2d: window and stride must be positive");
  require(x.h >= k && x.w >= k,
          "max_pool2d: window " + std::to_string(k) + " larger than input " + x.shape_str());
  if ((x.h - k) % stride != 0 || (x.w - k) % stride != 0) {
    throw InputError("max_pool2d: input " + x.shape_str() +
                     " is not tiled exactly by window " + std::to_string(k) +
                     " stride " + std::to_string(stride));
  }
  const int ho = (x.h - k) / stride + 1;
  const int wo = (x.w - k) / stride + 1;
  Tensor y(x.n, x.c, ho, wo);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double m = -std::numeric_limits<double>::infinity();
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              m = std::max(m, x.at(n, c, oy * stride + ky, ox * stride + kx));
          y.at(n, c, oy, ox) = m;
        }
  return y;
}

Tensor max_pool2d_backward(const Tensor& x, int k, int stride, const Tensor& grad_out) {
  const int ho = (x.h - k) / stride + 1;
  const int wo = (x.w - k) / stride + 1;
  if (grad_out.n != x.n || grad_out.c != x.c || grad_out.h != ho || grad_out.w != wo) {
    throw InputError("max_pool2d_backward: grad shape " + grad_out.shape_str() +
                     " does not match pooled output " + dims4(x.n, x.c, ho, wo));
  }
  Tensor g(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          // Route to the first maximum in window scan order (ties resolved
          // deterministically).
          int by = 0, bx = 0;
          double m = -std::numeric_limits<double>::infinity();
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const double s = x.at(n, c, oy * stride + ky, ox * stride + kx);
              if (s > m) {
                m = s;
                by = ky;
                bx = kx;
              }
            }
          g.at(n, c, oy * stride + by, ox * stride + bx) += grad_out.at(n, c, oy, ox);
        }
  return g;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor y(x.n, x.c, 1, 1);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const double* p = &x.v[x.idx(n, c, 0, 0)];
      double acc = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) acc += p[i];
      y.at(n, c, 0, 0) = acc * inv;
    }
  return y;
}

Tensor global_max_pool(const Tensor& x) {
  Tensor y(x.n, x.c, 1, 1);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const double* p = &x.v[x.idx(n, c, 0, 0)];
      double m = p[0];
      for (std::size_t i = 1; i < static_cast<std::size_t>(x.h) * x.w; ++i)
        m = std::max(m, p[i]);
      y.at(n, c, 0, 0) = m;
    }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& x, const Tensor& grad_out) {
  if (grad_out.n != x.n || grad_out.c != x.c || grad_out.h != 1 || grad_out.w != 1) {
    throw InputError("global_avg_pool_backward: grad shape " + grad_out.shape_str() +
                     " does not match " + dims4(x.n, x.c, 1, 1));
  }
  Tensor g(x.n, x.c, x.h, x.w);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const double gv = grad_out.at(n, c, 0, 0) * inv;
      double* p = &g.v[g.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) p[i] = gv;
    }
  return g;
}

Tensor global_max_pool_backward(const Tensor& x, const Tensor& grad_out) {
  if (grad_out.n != x.n || grad_out.c != x.c || grad_out.h != 1 || grad_out.w != 1) {
    throw InputError("global_max_pool_backward: grad shape " + grad_out.shape_str() +
                     " does not match " + dims4(x.n, x.c, 1, 1));
  }
  Tensor g(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const double* p = &x.v[x.idx(n, c, 0, 0)];
      std::size_t best = 0;
      for (std::size_t i = 1; i < static_cast<std::size_t>(x.h) * x.w; ++i)
        if (p[i] > p[best]) best = i;
      g.v[g.idx(n, c, 0, 0) + best] += grad_out.at(n, c, 0, 0);
    }
  return g;
}

Tensor channel_mean(const Tensor& x) {
  Tensor y(x.n, 1, x.h, x.w);
  const double inv = 1.0 / x.c;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const double* p = &x.v[x.idx(n, c, 0, 0)];
      double* q = &y.v[y.idx(n, 0, 0, 0)];
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) q[i] += p[i];
    }
  for (int n = 0; n < x.n; ++n) {
    double* q = &y.v[y.idx(n, 0, 0, 0)];
    for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) q[i] *= inv;
  }
  return y;
}

Tensor channel_max(const Tensor& x) {
  Tensor y(x.n, 1, x.h, x.w);
  for (int n = 0; n < x.n; ++n) {
    double* q = &y.v[y.idx(n, 0, 0, 0)];
    const double* p0 = &x.v[x.idx(n, 0, 0, 0)];
    std::copy(p0, p0 + static_cast<std::size_t>(x.h) * x.w, q);
    for (int c = 1; c < x.c; ++c) {
      const double* p = &x.v[x.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i)
        q[i] = std::max(q[i], p[i]);
    }
  }
  return y;
}

Tensor channel_mean_backward(const Tensor& x, const Tensor& grad_out) {
  if (grad_out.n != x.n || grad_out.c != 1 || grad_out.h != x.h || grad_out.w != x.w) {
    throw InputError("channel_mean_backward: grad shape " + grad_out.shape_str() +
                     " does not match " + dims4(x.n, 1, x.h, x.w));
  }
  Tensor g(x.n, x.c, x.h, x.w);
  const double inv = 1.0 / x.c;
  for (int n = 0; n < x.n; ++n) {
    const double* q = &grad_out.v[grad_out.idx(n, 0, 0, 0)];
    for (int c = 0; c < x.c; ++c) {
      double* p = &g.v[g.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) p[i] = q[i] * inv;
    }
  }
  return g;
}

Tensor channel_max_backward(const Tensor& x, const Tensor& grad_out) {
  if (grad_out.n != x.n || grad_out.c != 1 || grad_out.h != x.h || grad_out.w != x.w) {
    throw InputError("channel_max_backward: grad shape " + grad_out.shape_str() +
                     " does not match " + dims4(x.n, 1, x.h, x.w));
  }
  Tensor g(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) {
        int best = 0;
        for (int c = 1; c < x.c; ++c)
          if (x.at(n, c, y, xx) > x.at(n, best, y, xx)) best = c;
        g.at(n, best, y, xx) += grad_out.at(n, 0, y, xx);
      }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) {
    throw InputError("concat_channels: shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
  for (int n = 0; n < a.n; ++n) {
    for (int c = 0; c < a.c; ++c)
      std::copy(&a.v[a.idx(n, c, 0, 0)], &a.v[a.idx(n, c, 0, 0)] + plane,
                &y.v[y.idx(n, c, 0, 0)]);
    for (int c = 0; c < b.c; ++c)
      std::copy(&b.v[b.idx(n, c, 0, 0)], &b.v[b.idx(n, c, 0, 0)] + plane,
                &y.v[y.idx(n, a.c + c, 0, 0)]);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_first) {
  require(c_first >= 1 && c_first < g.c, "split_channels: bad split point");
  Tensor a(g.n, c_first, g.h, g.w);
  Tensor b(g.n, g.c - c_first, g.h, g.w);
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < a.c; ++c)
      std::copy(&g.v[g.idx(n, c, 0, 0)], &g.v[g.idx(n, c, 0, 0)] + plane,
                &a.v[a.idx(n, c, 0, 0)]);
    for (int c = 0; c < b.c; ++c)
      std::copy(&g.v[g.idx(n, c_first + c, 0, 0)], &g.v[g.idx(n, c_first + c, 0, 0)] + plane,
                &b.v[b.idx(n, c, 0, 0)]);
  }
  return {std::move(a), std::move(b)};
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& s : y.v) s = 1.0 / (1.0 + std::exp(-s));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] *= y.v[i] * (1.0 - y.v[i]);
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& s : y.v) s = s > 0.0 ? s : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.v.size(); ++i)
    if (x.v[i] <= 0.0) g.v[i] = 0.0;
  return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] *= b.v[i];
  return y;
}

Tensor broadcast_mul(const Tensor& features, const Tensor& mask) {
  if (mask.c != 1 || mask.n != features.n || mask.h != features.h || mask.w != features.w) {
    throw InputError("broadcast_mul: mask " + mask.shape_str() +
                     " does not broadcast over " + features.shape_str());
  }
  Tensor y = features;
  const std::size_t plane = static_cast<std::size_t>(features.h) * features.w;
  for (int n = 0; n < features.n; ++n) {
    const double* m = &mask.v[mask.idx(n, 0, 0, 0)];
    for (int c = 0; c < features.c; ++c) {
      double* p = &y.v[y.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < plane; ++i) p[i] *= m[i];
    }
  }
  return y;
}

void broadcast_mul_backward(const Tensor& features, const Tensor& mask,
                            const Tensor& grad_out, Tensor& grad_features,
                            Tensor& grad_mask) {
  require_same_shape(features, grad_out, "broadcast_mul_backward");
  grad_features = Tensor(features.n, features.c, features.h, features.w);
  grad_mask = Tensor(mask.n, 1, mask.h, mask.w);
  const std::size_t plane = static_cast<std::size_t>(features.h) * features.w;
  for (int n = 0; n < features.n; ++n) {
    const double* m = &mask.v[mask.idx(n, 0, 0, 0)];
    double* gm = &grad_mask.v[grad_mask.idx(n, 0, 0, 0)];
    for (int c = 0; c < features.c; ++c) {
      const double* f = &features.v[features.idx(n, c, 0, 0)];
      const double* g = &grad_out.v[grad_out.idx(n, c, 0, 0)];
      double* gf = &grad_features.v[grad_features.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < plane; ++i) {
        gf[i] = g[i] * m[i];
        gm[i] += g[i] * f[i];
      }
    }
  }
}

Tensor channel_scale(const Tensor& features, const Tensor& gains) {
  if (gains.n != features.n || gains.c != features.c || gains.h != 1 || gains.w != 1) {
    throw InputError("channel_scale: gains " + gains.shape_str() +
                     " do not broadcast over " + features.shape_str());
  }
  Tensor y = features;
  const std::size_t plane = static_cast<std::size_t>(features.h) * features.w;
  for (int n = 0; n < features.n; ++n)
    for (int c = 0; c < features.c; ++c) {
      const double s = gains.at(n, c, 0, 0);
      double* p = &y.v[y.idx(n, c, 0, 0)];
      for (std::size_t i = 0; i < plane; ++i) p[i] *= s;
    }
  return y;
}

void channel_scale_backward(const Tensor& features, const Tensor& gains,
                            const Tensor& grad_out, Tensor& grad_features,
                            Tensor& grad_gains) {
  require_same_shape(features, grad_out, "channel_scale_backward");
  grad_features = Tensor(features.n, features.c, features.h, features.w);
  grad_gains = Tensor(gains.n, gains.c, 1, 1);
  const std::size_t plane = static_cast<std::size_t>(features.h) * features.w;
  for (int n = 0; n < features.n; ++n)
    for (int c = 0; c < features.c; ++c) {
      const double s = gains.at(n, c, 0, 0);
      const double* f = &features.v[features.idx(n, c, 0, 0)];
      const double* g = &grad_out.v[grad_out.idx(n, c, 0, 0)];
      double* gf = &grad_features.v[grad_features.idx(n, c, 0, 0)];
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        gf[i] = g[i] * s;
        acc += g[i] * f[i];
      }
      grad_gains.at(n, c, 0, 0) = acc;
    }
}

std::pair<Tensor, Tensor> softmax_pair(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "softmax_pair");
  Tensor s1 = a, s2 = b;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double m = std::max(a.v[i], b.v[i]);
    const double ea = std::exp(a.v[i] - m);
    const double eb = std::exp(b.v[i] - m);
    const double inv = 1.0 / (ea + eb);
    s1.v[i] = ea * inv;
    s2.v[i] = eb * inv;
  }
  return {std::move(s1), std::move(s2)};
}

std::pair<Tensor, Tensor> softmax_pair_backward(const Tensor& s1, const Tensor& s2,
                                                const Tensor& g1, const Tensor& g2) {
  require_same_shape(s1, g1, "softmax_pair_backward");
  require_same_shape(s2, g2, "softmax_pair_backward");
  Tensor ga = s1, gb = s2;
  for (std::size_t i = 0; i < s1.v.size(); ++i) {
    const double j = s1.v[i] * s2.v[i];  // d s1 / d a == -d s1 / d b
    ga.v[i] = j * (g1.v[i] - g2.v[i]);
    gb.v[i] = j * (g2.v[i] - g1.v[i]);
  }
  return {std::move(ga), std::move(gb)};
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += alpha * x.v[i];
}

}  // namespace mdan
