#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdan/tensor.hpp"

namespace mdan {

/// Network hyper-parameters. Defaults follow the reference configuration:
/// 64 channels, 8 MDSA blocks, p=2 residual blocks between MDSA blocks,
/// q=1 residual blocks at the attention bottleneck, fusion reduction C/8.
struct MdanConfig {
  int channels = 64;
  int mdsa_blocks = 8;
  int p = 2;
  int q = 1;
  int in_planes = 1;

  int fusion_reduction() const { return channels / 8; }
  int half_branch_depth() const { return q + 2; }
  int full_branch_depth() const { return q + 4; }
  void validate() const;
  bool operator==(const MdanConfig&) const = default;
};

/// Two 3x3 convolutions with a shortcut: y = x + conv2(relu(conv1(x))).
/// No normalization layers.
struct ResidualBlockParams {
  ConvKernel conv1;
  ConvKernel conv2;
};

/// Bottom-up top-down branch producing the half- and full-resolution masks.
/// Operates on one channel throughout after the entry convolution.
struct AttentionBranchParams {
  ConvKernel entry;                             // 2 -> 1, 3x3
  ResidualBlockParams down_res1;                // after first max-pool
  ResidualBlockParams down_res2;                // after second max-pool
  std::vector<ResidualBlockParams> bottleneck;  // q blocks
  ConvKernel up1;                               // 1 -> 4, 3x3, feeds pixel-shuffle
  ResidualBlockParams up2_res;
  ConvKernel up2;                               // 1 -> 4, 3x3, feeds pixel-shuffle
};

/// Channel-mutual fusion: all 1x1 convolutions, bias-free.
struct FusionParams {
  ConvKernel down;  // C -> r
  ConvKernel up_a;  // r -> C
  ConvKernel up_b;  // r -> C
  ConvKernel out;   // C -> C
};

struct MdsaParams {
  std::vector<ResidualBlockParams> full;      // q+4 blocks, full resolution
  ConvKernel half_down;                       // C -> C, 3x3, stride 2
  std::vector<ResidualBlockParams> half_res;  // q+2 blocks, half resolution
  ConvKernel half_up;                         // C -> 4C, 3x3, feeds pixel-shuffle
  AttentionBranchParams attn;
  FusionParams fuse;
};

struct MdanParams {
  MdanConfig cfg;
  std::uint32_t qp_band = 0;
  std::uint64_t seed = 0;

  ConvKernel head;  // in_planes -> C, 3x3
  ResidualBlockParams head_block;
  struct Stage {
    MdsaParams mdsa;
    std::vector<ResidualBlockParams> post;  // p blocks
  };
  std::vector<Stage> body;
  ConvKernel tail;  // C -> in_planes, 3x3
};

/// All-zero parameters of the right shapes; the network is then the
/// identity map on any valid plane.
MdanParams zero_params(const MdanConfig& cfg);

/// Deterministic fan-in-scaled normal init, zero biases. Weights are
/// quantized through 32-bit floats so checkpoints round-trip losslessly.
MdanParams init_params(const MdanConfig& cfg, std::uint64_t seed);

/// Visits every convolution kernel in canonical checkpoint order.
/// Fn signature: void(const std::string& name, ConvKernel&).
template <typename Params, typename Fn>
void for_each_kernel(Params& mp, Fn&& fn) {
  fn("head.conv", mp.head);
  fn("head.block.conv1", mp.head_block.conv1);
  fn("head.block.conv2", mp.head_block.conv2);
  for (std::size_t bi = 0; bi < mp.body.size(); ++bi) {
    auto& st = mp.body[bi];
    const std::string b = "body." + std::to_string(bi) + ".";
    for (std::size_t i = 0; i < st.mdsa.full.size(); ++i) {
      const std::string r = b + "mdsa.full." + std::to_string(i) + ".";
      fn(r + "conv1", st.mdsa.full[i].conv1);
      fn(r + "conv2", st.mdsa.full[i].conv2);
    }
    fn(b + "mdsa.half.down", st.mdsa.half_down);
    for (std::size_t i = 0; i < st.mdsa.half_res.size(); ++i) {
      const std::string r = b + "mdsa.half.res." + std::to_string(i) + ".";
      fn(r + "conv1", st.mdsa.half_res[i].conv1);
      fn(r + "conv2", st.mdsa.half_res[i].conv2);
    }
    fn(b + "mdsa.half.up", st.mdsa.half_up);
    fn(b + "mdsa.attn.entry", st.mdsa.attn.entry);
    fn(b + "mdsa.attn.down1.conv1", st.mdsa.attn.down_res1.conv1);
    fn(b + "mdsa.attn.down1.conv2", st.mdsa.attn.down_res1.conv2);
    fn(b + "mdsa.attn.down2.conv1", st.mdsa.attn.down_res2.conv1);
    fn(b + "mdsa.attn.down2.conv2", st.mdsa.attn.down_res2.conv2);
    for (std::size_t i = 0; i < st.mdsa.attn.bottleneck.size(); ++i) {
      const std::string r = b + "mdsa.attn.mid." + std::to_string(i) + ".";
      fn(r + "conv1", st.mdsa.attn.bottleneck[i].conv1);
      fn(r + "conv2", st.mdsa.attn.bottleneck[i].conv2);
    }
    fn(b + "mdsa.attn.up1", st.mdsa.attn.up1);
    fn(b + "mdsa.attn.up2.res.conv1", st.mdsa.attn.up2_res.conv1);
    fn(b + "mdsa.attn.up2.res.conv2", st.mdsa.attn.up2_res.conv2);
    fn(b + "mdsa.attn.up2.conv", st.mdsa.attn.up2);
    fn(b + "mdsa.fuse.down", st.mdsa.fuse.down);
    fn(b + "mdsa.fuse.up_a", st.mdsa.fuse.up_a);
    fn(b + "mdsa.fuse.up_b", st.mdsa.fuse.up_b);
    fn(b + "mdsa.fuse.out", st.mdsa.fuse.out);
    for (std::size_t i = 0; i < st.post.size(); ++i) {
      const std::string r = b + "post." + std::to_string(i) + ".";
      fn(r + "conv1", st.post[i].conv1);
      fn(r + "conv2", st.post[i].conv2);
    }
  }
  fn("tail.conv", mp.tail);
}

// ---- forward / backward -------------------------------------------------
// Every forward takes an optional cache. With a cache, the matching
// backward can be called; it accumulates parameter gradients into a
// zero-initialized MdanParams-shaped tree and returns the input gradient.

struct ResidualBlockCache {
  Tensor x, t1, r1;
};
Tensor residual_block(const Tensor& x, const ResidualBlockParams& p,
                      ResidualBlockCache* cache = nullptr);
Tensor residual_block_backward(const ResidualBlockCache& c, const ResidualBlockParams& p,
                               const Tensor& grad_out, ResidualBlockParams& grads);

struct AttentionCache {
  Tensor x, cat, f1, p1, d1, p2, d2;
  ResidualBlockCache down1, down2;
  std::vector<ResidualBlockCache> bottleneck;
  Tensor bq;  // bottleneck output (input of up1)
  Tensor m;
  ResidualBlockCache up2_res;
  Tensor r2;  // up2 residual-block output (input of up2 conv)
  Tensor m_hat;
};
/// Returns (m, m_hat): the half- and full-resolution masks in (0,1).
std::pair<Tensor, Tensor> attention_branch(const Tensor& x, const AttentionBranchParams& p,
                                           AttentionCache* cache = nullptr);
Tensor attention_branch_backward(const AttentionCache& c, const AttentionBranchParams& p,
                                 const Tensor& grad_m, const Tensor& grad_m_hat,
                                 AttentionBranchParams& grads);

struct FusionCache {
  Tensor u_full, u_half_up, s, z, s1, s2, pre;
};
Tensor fusion(const Tensor& u_full, const Tensor& u_half_up, const FusionParams& p,
              FusionCache* cache = nullptr);
std::pair<Tensor, Tensor> fusion_backward(const FusionCache& c, const FusionParams& p,
                                          const Tensor& grad_out, FusionParams& grads);

struct MdsaCache {
  Tensor x;
  AttentionCache attn;
  Tensor m, m_hat;
  std::vector<ResidualBlockCache> full;
  Tensor full_out;
  Tensor half_in;  // output of the stride-2 conv
  std::vector<ResidualBlockCache> half_res;
  Tensor half_out;   // masked half-resolution features (input of half_up)
  Tensor half_feat;  // unmasked half-branch features
  FusionCache fuse;
};
Tensor mdsa_block(const Tensor& x, const MdsaParams& p, MdsaCache* cache = nullptr);
Tensor mdsa_block_backward(const MdsaCache& c, const MdsaParams& p, const Tensor& grad_out,
                           MdsaParams& grads);

struct MdanCache {
  Tensor plane, h0;
  ResidualBlockCache head_block;
  struct StageCache {
    MdsaCache mdsa;
    std::vector<ResidualBlockCache> post;
  };
  std::vector<StageCache> body;
  Tensor trunk;  // input of the tail convolution
};
/// Full network: plane + tail(body(head_block(head(plane)))).
/// H and W must be divisible by 4.
Tensor mdan_forward(const Tensor& plane, const MdanParams& p, MdanCache* cache = nullptr);
Tensor mdan_backward(const MdanCache& c, const MdanParams& p, const Tensor& grad_out,
                     MdanParams& grads);

// ---- parameter accounting ------------------------------------------------

struct ParamCountRow {
  std::string name;
  long long weights = 0;
  long long biases = 0;
};
struct ParamCount {
  std::vector<ParamCountRow> rows;  // one row per kernel, canonical order
  long long weights = 0;
  long long biases = 0;
  long long total() const { return weights + biases; }
};
ParamCount param_count(const MdanParams& p);
/// Sum of weights over kernels whose name starts with the prefix.
long long weights_with_prefix(const ParamCount& pc, const std::string& prefix);
/// Weight count of one fusion module (biases are structurally absent).
long long fusion_weight_count(const FusionParams& p);

/// Gradient tree of the same shapes as the parameters, all zeros.
MdanParams zero_grads_like(const MdanParams& p);
/// dst += scale * src over every weight and bias.
void add_scaled_params(const MdanParams& src, double scale, MdanParams& dst);

}  // namespace mdan
