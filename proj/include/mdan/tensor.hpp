#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mdan/common.hpp"

namespace mdan {

/// Dense (n, c, h, w) tensor, row-major, 64-bit samples. The single carrier
/// for features, masks and gradients everywhere in the network.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_);

  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const;

  std::size_t idx(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  double& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
  double at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

  void fill(double value);
  bool all_finite() const;
};

/// 2-D convolution parameters: weights (out_channels, in_channels, kh, kw),
/// optional bias, stride and symmetric zero padding.
struct ConvKernel {
  Tensor w;
  std::vector<double> bias;  // empty for bias-free layers
  int stride = 1;
  int pad = 0;

  int out_channels() const { return w.n; }
  int in_channels() const { return w.c; }
  int kh() const { return w.h; }
  int kw() const { return w.w; }
  bool has_bias() const { return !bias.empty(); }
};

struct ConvGrads {
  Tensor x;
  Tensor w;
  std::vector<double> bias;  // empty when the kernel has no bias
};

/// y[n,o,i] = bias[o] + sum over (c, kernel window) of weights * padded input.
/// Summation order per output sample is fixed: input channel, kernel row,
/// kernel column. Output dims floor((d + 2*pad - k)/stride) + 1; rejects
/// kernels that do not fit.
Tensor conv2d(const Tensor& x, const ConvKernel& k);
ConvGrads conv2d_backward(const Tensor& x, const ConvKernel& k, const Tensor& grad_out);

/// (n, c, h, w) -> (n, c/r^2, h*r, w*r);
/// out[n, c, y*r+dy, x*r+dx] = in[n, c*r^2 + dy*r + dx, y, x].
Tensor pixel_shuffle(const Tensor& x, int r);
/// Exact inverse of pixel_shuffle.
Tensor space_to_depth(const Tensor& x, int r);

/// Max over k x k windows, stride-aligned; rejects shapes the window grid
/// does not tile exactly.
Tensor max_pool2d(const Tensor& x, int k = 2, int stride = 2);
Tensor max_pool2d_backward(const Tensor& x, int k, int stride, const Tensor& grad_out);

/// Per-channel mean / max over all spatial positions -> (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& x);
Tensor global_max_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& x, const Tensor& grad_out);
Tensor global_max_pool_backward(const Tensor& x, const Tensor& grad_out);

/// Per-position mean / max across channels -> (n, 1, h, w).
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x);
Tensor channel_mean_backward(const Tensor& x, const Tensor& grad_out);
Tensor channel_max_backward(const Tensor& x, const Tensor& grad_out);

/// Concatenate along the channel axis; shapes must agree elsewhere.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Backward of concat_channels: splits grad into the two channel groups.
std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_first);

Tensor sigmoid(const Tensor& x);
/// d(sigmoid)/dx expressed through the forward output y = sigmoid(x).
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// features (n,c,h,w) * mask (n,1,h,w), mask broadcast across channels.
Tensor broadcast_mul(const Tensor& features, const Tensor& mask);
void broadcast_mul_backward(const Tensor& features, const Tensor& mask,
                            const Tensor& grad_out, Tensor& grad_features,
                            Tensor& grad_mask);

/// features (n,c,h,w) * gains (n,c,1,1), gains broadcast across positions.
Tensor channel_scale(const Tensor& features, const Tensor& gains);
void channel_scale_backward(const Tensor& features, const Tensor& gains,
                            const Tensor& grad_out, Tensor& grad_features,
                            Tensor& grad_gains);

/// Per (n,c): s1 = e^a/(e^a+e^b), s2 = e^b/(e^a+e^b), computed in the
/// max-subtracted form. Inputs and outputs are (n,c,1,1).
std::pair<Tensor, Tensor> softmax_pair(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> softmax_pair_backward(const Tensor& s1, const Tensor& s2,
                                                const Tensor& g1, const Tensor& g2);

/// y += alpha * x (shapes must match).
void axpy(double alpha, const Tensor& x, Tensor& y);

}  // namespace mdan
