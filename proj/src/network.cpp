#include "mdan/network.hpp"

#include <cmath>
#include <random>

namespace mdan {

namespace {

ConvKernel make_kernel(int out_c, int in_c, int k, int stride, int pad, bool bias) {
  ConvKernel kk;
  kk.w = Tensor(out_c, in_c, k, k);
  if (bias) kk.bias.assign(out_c, 0.0);
  kk.stride = stride;
  kk.pad = pad;
  return kk;
}

ResidualBlockParams make_resblock(int c) {
  ResidualBlockParams rb;
  rb.conv1 = make_kernel(c, c, 3, 1, 1, true);
  rb.conv2 = make_kernel(c, c, 3, 1, 1, true);
  return rb;
}

void accum(ConvKernel& dst, const ConvGrads& g) {
  axpy(1.0, g.w, dst.w);
  for (std::size_t i = 0; i < g.bias.size(); ++i) dst.bias[i] += g.bias[i];
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void require_divisible4(const Tensor& x, const char* op) {
  if (x.h % 4 != 0 || x.w % 4 != 0) {
    throw InputError(std::string(op) + ": spatial dims of " + x.shape_str() +
                     " must be divisible by 4");
  }
}

}  // namespace

void MdanConfig::validate() const {
  if (channels < 8 || channels % 8 != 0)
    throw InputError("config: channels must be a positive multiple of 8, got " +
                     std::to_string(channels));
  if (mdsa_blocks < 1) throw InputError("config: mdsa_blocks must be >= 1");
  if (p < 0 || q < 0) throw InputError("config: p and q must be >= 0");
  if (in_planes != 1) throw InputError("config: in_planes must be 1");
}

MdanParams zero_params(const MdanConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  const int r = cfg.fusion_reduction();
  MdanParams mp;
  mp.cfg = cfg;
  mp.head = make_kernel(c, cfg.in_planes, 3, 1, 1, true);
  mp.head_block = make_resblock(c);
  mp.body.resize(cfg.mdsa_blocks);
  for (auto& st : mp.body) {
    auto& d = st.mdsa;
    d.full.assign(cfg.full_branch_depth(), make_resblock(c));
    d.half_down = make_kernel(c, c, 3, 2, 1, true);
    d.half_res.assign(cfg.half_branch_depth(), make_resblock(c));
    d.half_up = make_kernel(4 * c, c, 3, 1, 1, true);
    d.attn.entry = make_kernel(1, 2, 3, 1, 1, true);
    d.attn.down_res1 = make_resblock(1);
    d.attn.down_res2 = make_resblock(1);
    d.attn.bottleneck.assign(cfg.q, make_resblock(1));
    d.attn.up1 = make_kernel(4, 1, 3, 1, 1, true);
    d.attn.up2_res = make_resblock(1);
    d.attn.up2 = make_kernel(4, 1, 3, 1, 1, true);
    d.fuse.down = make_kernel(r, c, 1, 1, 0, false);
    d.fuse.up_a = make_kernel(c, r, 1, 1, 0, false);
    d.fuse.up_b = make_kernel(c, r, 1, 1, 0, false);
    d.fuse.out = make_kernel(c, c, 1, 1, 0, false);
    st.post.assign(cfg.p, make_resblock(c));
  }
  mp.tail = make_kernel(cfg.in_planes, c, 3, 1, 1, true);
  return mp;
}

MdanParams init_params(const MdanConfig& cfg, std::uint64_t seed) {
  MdanParams mp = zero_params(cfg);
  mp.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for_each_kernel(mp, [&](const std::string& name, ConvKernel& k) {
    double scale = std::sqrt(2.0 / (static_cast<double>(k.in_channels()) * k.kh() * k.kw()));
    // The mixing convolutions start at 1/10 scale; a freshly seeded network
    // then stays close to the identity mapping.
    if (ends_with(name, "conv2") || name == "tail.conv" || ends_with(name, "fuse.out"))
      scale *= 0.1;
    for (double& wv : k.w.v)
      wv = static_cast<double>(static_cast<float>(dist(rng) * scale));
  });
  return mp;
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& p,
                      ResidualBlockCache* cache) {
  if (x.c != p.conv1.in_channels()) {
    throw InputError("residual_block: input " + x.shape_str() + " does not match conv1 " +
                     p.conv1.w.shape_str());
  }
  Tensor t1 = conv2d(x, p.conv1);
  Tensor r1 = relu(t1);
  Tensor t2 = conv2d(r1, p.conv2);
  Tensor y = add(x, t2);
  if (cache) {
    cache->x = x;
    cache->t1 = std::move(t1);
    cache->r1 = std::move(r1);
  }
  return y;
}

Tensor residual_block_backward(const ResidualBlockCache& c, const ResidualBlockParams& p,
                               const Tensor& grad_out, ResidualBlockParams& grads) {
  ConvGrads g2 = conv2d_backward(c.r1, p.conv2, grad_out);
  accum(grads.conv2, g2);
  Tensor gt1 = relu_backward(c.t1, g2.x);
  ConvGrads g1 = conv2d_backward(c.x, p.conv1, gt1);
  accum(grads.conv1, g1);
  Tensor gx = std::move(g1.x);
  axpy(1.0, grad_out, gx);  // shortcut
  return gx;
}

std::pair<Tensor, Tensor> attention_branch(const Tensor& x, const AttentionBranchParams& p,
                                           AttentionCache* cache) {
  require_divisible4(x, "attention_branch");
  // Per-position reductions across channels, not spatial poolings.
  Tensor cat = concat_channels(channel_mean(x), channel_max(x));
  Tensor f1 = conv2d(cat, p.entry);
  Tensor p1 = max_pool2d(f1);
  Tensor d1 = residual_block(p1, p.down_res1, cache ? &cache->down1 : nullptr);
  Tensor p2 = max_pool2d(d1);
  Tensor d2 = residual_block(p2, p.down_res2, cache ? &cache->down2 : nullptr);
  Tensor bq = d2;
  if (cache) cache->bottleneck.resize(p.bottleneck.size());
  for (std::size_t i = 0; i < p.bottleneck.size(); ++i)
    bq = residual_block(bq, p.bottleneck[i], cache ? &cache->bottleneck[i] : nullptr);
  Tensor m = sigmoid(pixel_shuffle(conv2d(bq, p.up1), 2));
  Tensor r2 = residual_block(m, p.up2_res, cache ? &cache->up2_res : nullptr);
  Tensor m_hat = sigmoid(pixel_shuffle(conv2d(r2, p.up2), 2));
  if (cache) {
    cache->x = x;
    cache->cat = std::move(cat);
    cache->f1 = std::move(f1);
    cache->p1 = std::move(p1);
    cache->d1 = std::move(d1);
    cache->p2 = std::move(p2);
    cache->d2 = std::move(d2);
    cache->bq = std::move(bq);
    cache->m = m;
    cache->r2 = std::move(r2);
    cache->m_hat = m_hat;
  }
  return {std::move(m), std::move(m_hat)};
}

Tensor attention_branch_backward(const AttentionCache& c, const AttentionBranchParams& p,
                                 const Tensor& grad_m, const Tensor& grad_m_hat,
                                 AttentionBranchParams& grads) {
  ConvGrads cg2 = conv2d_backward(c.r2, p.up2, space_to_depth(sigmoid_backward(c.m_hat, grad_m_hat), 2));
  accum(grads.up2, cg2);
  Tensor g_m = residual_block_backward(c.up2_res, p.up2_res, cg2.x, grads.up2_res);
  axpy(1.0, grad_m, g_m);  // m also feeds the half branch directly
  ConvGrads cg1 = conv2d_backward(c.bq, p.up1, space_to_depth(sigmoid_backward(c.m, g_m), 2));
  accum(grads.up1, cg1);
  Tensor g = std::move(cg1.x);
  for (std::size_t i = p.bottleneck.size(); i-- > 0;)
    g = residual_block_backward(c.bottleneck[i], p.bottleneck[i], g, grads.bottleneck[i]);
  g = residual_block_backward(c.down2, p.down_res2, g, grads.down_res2);
  g = max_pool2d_backward(c.d1, 2, 2, g);
  g = residual_block_backward(c.down1, p.down_res1, g, grads.down_res1);
  g = max_pool2d_backward(c.f1, 2, 2, g);
  ConvGrads cge = conv2d_backward(c.cat, p.entry, g);
  accum(grads.entry, cge);
  auto [g_mean, g_max] = split_channels(cge.x, 1);
  Tensor gx = channel_mean_backward(c.x, g_mean);
  axpy(1.0, channel_max_backward(c.x, g_max), gx);
  return gx;
}

Tensor fusion(const Tensor& u_full, const Tensor& u_half_up, const FusionParams& p,
              FusionCache* cache) {
  if (!u_full.same_shape(u_half_up)) {
    throw InputError("fusion: branch shapes differ, " + u_full.shape_str() + " vs " +
                     u_half_up.shape_str());
  }
  Tensor s = global_avg_pool(add(u_full, u_half_up));
  Tensor z = conv2d(s, p.down);
  auto [s1, s2] = softmax_pair(conv2d(z, p.up_a), conv2d(z, p.up_b));
  Tensor pre = add(channel_scale(u_full, s1), channel_scale(u_half_up, s2));
  Tensor out = conv2d(pre, p.out);
  if (cache) {
    cache->u_full = u_full;
    cache->u_half_up = u_half_up;
    cache->s = std::move(s);
    cache->z = std::move(z);
    cache->s1 = std::move(s1);
    cache->s2 = std::move(s2);
    cache->pre = std::move(pre);
  }
  return out;
}

std::pair<Tensor, Tensor> fusion_backward(const FusionCache& c, const FusionParams& p,
                                          const Tensor& grad_out, FusionParams& grads) {
  ConvGrads go = conv2d_backward(c.pre, p.out, grad_out);
  accum(grads.out, go);
  Tensor gf, gs1, gh, gs2;
  channel_scale_backward(c.u_full, c.s1, go.x, gf, gs1);
  channel_scale_backward(c.u_half_up, c.s2, go.x, gh, gs2);
  auto [ga, gb] = softmax_pair_backward(c.s1, c.s2, gs1, gs2);
  ConvGrads gua = conv2d_backward(c.z, p.up_a, ga);
  accum(grads.up_a, gua);
  ConvGrads gub = conv2d_backward(c.z, p.up_b, gb);
  accum(grads.up_b, gub);
  Tensor gz = std::move(gua.x);
  axpy(1.0, gub.x, gz);
  ConvGrads gd = conv2d_backward(c.s, p.down, gz);
  accum(grads.down, gd);
  // The pooled input has u_full's shape; the backward only reads dims.
  Tensor gsum = global_avg_pool_backward(c.u_full, gd.x);
  axpy(1.0, gsum, gf);
  axpy(1.0, gsum, gh);
  return {std::move(gf), std::move(gh)};
}

Tensor mdsa_block(const Tensor& x, const MdsaParams& p, MdsaCache* cache) {
  require_divisible4(x, "mdsa_block");
  auto [m, m_hat] = attention_branch(x, p.attn, cache ? &cache->attn : nullptr);
  Tensor f = x;
  if (cache) cache->full.resize(p.full.size());
  for (std::size_t i = 0; i < p.full.size(); ++i)
    f = residual_block(f, p.full[i], cache ? &cache->full[i] : nullptr);
  Tensor u_full = broadcast_mul(f, m_hat);
  Tensor hd = conv2d(x, p.half_down);
  Tensor hf = hd;
  if (cache) cache->half_res.resize(p.half_res.size());
  for (std::size_t i = 0; i < p.half_res.size(); ++i)
    hf = residual_block(hf, p.half_res[i], cache ? &cache->half_res[i] : nullptr);
  Tensor u_half = broadcast_mul(hf, m);
  Tensor u_half_up = pixel_shuffle(conv2d(u_half, p.half_up), 2);
  Tensor fused = fusion(u_full, u_half_up, p.fuse, cache ? &cache->fuse : nullptr);
  Tensor y = add(x, fused);
  if (cache) {
    cache->x = x;
    cache->m = std::move(m);
    cache->m_hat = std::move(m_hat);
    cache->full_out = std::move(f);
    cache->half_in = std::move(hd);
    cache->half_feat = std::move(hf);
    cache->half_out = std::move(u_half);
  }
  return y;
}

Tensor mdsa_block_backward(const MdsaCache& c, const MdsaParams& p, const Tensor& grad_out,
                           MdsaParams& grads) {
  auto [g_u_full, g_u_half_up] = fusion_backward(c.fuse, p.fuse, grad_out, grads.fuse);
  Tensor g_f, g_m_hat;
  broadcast_mul_backward(c.full_out, c.m_hat, g_u_full, g_f, g_m_hat);
  for (std::size_t i = p.full.size(); i-- > 0;)
    g_f = residual_block_backward(c.full[i], p.full[i], g_f, grads.full[i]);
  ConvGrads gcu = conv2d_backward(c.half_out, p.half_up, space_to_depth(g_u_half_up, 2));
  accum(grads.half_up, gcu);
  Tensor g_hf, g_m;
  broadcast_mul_backward(c.half_feat, c.m, gcu.x, g_hf, g_m);
  for (std::size_t i = p.half_res.size(); i-- > 0;)
    g_hf = residual_block_backward(c.half_res[i], p.half_res[i], g_hf, grads.half_res[i]);
  ConvGrads gcd = conv2d_backward(c.x, p.half_down, g_hf);
  accum(grads.half_down, gcd);
  Tensor g_x_attn = attention_branch_backward(c.attn, p.attn, g_m, g_m_hat, grads.attn);
  Tensor gx = grad_out;  // block shortcut
  axpy(1.0, g_f, gx);
  axpy(1.0, gcd.x, gx);
  axpy(1.0, g_x_attn, gx);
  return gx;
}

Tensor mdan_forward(const Tensor& plane, const MdanParams& p, MdanCache* cache) {
  if (plane.c != p.cfg.in_planes) {
    throw InputError("mdan_forward: expected " + std::to_string(p.cfg.in_planes) +
                     " input plane(s), got " + plane.shape_str());
  }
  require_divisible4(plane, "mdan_forward");
  Tensor h0 = conv2d(plane, p.head);
  Tensor t = residual_block(h0, p.head_block, cache ? &cache->head_block : nullptr);
  if (cache) cache->body.resize(p.body.size());
  for (std::size_t bi = 0; bi < p.body.size(); ++bi) {
    t = mdsa_block(t, p.body[bi].mdsa, cache ? &cache->body[bi].mdsa : nullptr);
    if (cache) cache->body[bi].post.resize(p.body[bi].post.size());
    for (std::size_t i = 0; i < p.body[bi].post.size(); ++i)
      t = residual_block(t, p.body[bi].post[i],
                         cache ? &cache->body[bi].post[i] : nullptr);
  }
  Tensor y = add(plane, conv2d(t, p.tail));
  if (cache) {
    cache->plane = plane;
    cache->h0 = std::move(h0);
    cache->trunk = std::move(t);
  }
  return y;
}

Tensor mdan_backward(const MdanCache& c, const MdanParams& p, const Tensor& grad_out,
                     MdanParams& grads) {
  ConvGrads gt = conv2d_backward(c.trunk, p.tail, grad_out);
  accum(grads.tail, gt);
  Tensor g = std::move(gt.x);
  for (std::size_t bi = p.body.size(); bi-- > 0;) {
    for (std::size_t i = p.body[bi].post.size(); i-- > 0;)
      g = residual_block_backward(c.body[bi].post[i], p.body[bi].post[i], g,
                                  grads.body[bi].post[i]);
    g = mdsa_block_backward(c.body[bi].mdsa, p.body[bi].mdsa, g, grads.body[bi].mdsa);
  }
  g = residual_block_backward(c.head_block, p.head_block, g, grads.head_block);
  ConvGrads gh = conv2d_backward(c.plane, p.head, g);
  accum(grads.head, gh);
  Tensor gplane = std::move(gh.x);
  axpy(1.0, grad_out, gplane);  // global residual
  return gplane;
}

ParamCount param_count(const MdanParams& p) {
  ParamCount pc;
  for_each_kernel(p, [&](const std::string& name, const ConvKernel& k) {
    ParamCountRow row;
    row.name = name;
    row.weights = static_cast<long long>(k.w.size());
    row.biases = static_cast<long long>(k.bias.size());
    pc.weights += row.weights;
    pc.biases += row.biases;
    pc.rows.push_back(std::move(row));
  });
  return pc;
}

long long weights_with_prefix(const ParamCount& pc, const std::string& prefix) {
  long long total = 0;
  for (const auto& row : pc.rows)
    if (row.name.compare(0, prefix.size(), prefix) == 0) total += row.weights;
  return total;
}

long long fusion_weight_count(const FusionParams& p) {
  return static_cast<long long>(p.down.w.size() + p.up_a.w.size() + p.up_b.w.size() +
                                p.out.w.size());
}

MdanParams zero_grads_like(const MdanParams& p) {
  MdanParams g = p;
  for_each_kernel(g, [](const std::string&, ConvKernel& k) {
    k.w.fill(0.0);
    std::fill(k.bias.begin(), k.bias.end(), 0.0);
  });
  return g;
}

void add_scaled_params(const MdanParams& src, double scale, MdanParams& dst) {
  std::vector<const ConvKernel*> sk;
  for_each_kernel(src, [&](const std::string&, const ConvKernel& k) { sk.push_back(&k); });
  std::size_t i = 0;
  for_each_kernel(dst, [&](const std::string&, ConvKernel& k) {
    const ConvKernel& s = *sk.at(i++);
    axpy(scale, s.w, k.w);
    for (std::size_t j = 0; j < k.bias.size(); ++j) k.bias[j] += scale * s.bias[j];
  });
}

}  // namespace mdan
