#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mdan/common.hpp"

namespace mdan {

enum class PlaneId : std::uint8_t { Y = 0, U = 1, V = 2 };

/// Regression accumulators over one frame region, 64-bit, raster order.
/// With d_nn = p_nn - p_rec and d_org = p_org - p_rec:
///   self_multi   = sum d_nn^2
///   cross_multi  = sum d_nn * d_org
///   sum_org_resi = sum d_org
///   sum_nn_resi  = sum d_nn
struct ScalingStats {
  double self_multi = 0.0;
  double cross_multi = 0.0;
  double sum_org_resi = 0.0;
  double sum_nn_resi = 0.0;
  std::uint64_t n = 0;
};

constexpr int kAlphaFractionBits = 11;
constexpr double kAlphaOne = 2048.0;  // 1.0 in s16 Q11

/// Per-frame, per-plane scaling factor. alpha_q is the signed Q11
/// fixed-point value carried in the bitstream sidecar; both sides apply
/// alpha_q / 2048 exactly.
struct ScalingFactor {
  double alpha_real = 1.0;
  std::int16_t alpha_q = 2048;
  PlaneId plane = PlaneId::Y;
  bool degenerate = false;

  double dequant() const { return static_cast<double>(alpha_q) / kAlphaOne; }
};

ScalingStats accumulate_stats(std::span<const std::uint16_t> p_nn,
                              std::span<const std::uint16_t> p_rec,
                              std::span<const std::uint16_t> p_org);

/// Least-squares alpha from the accumulated statistics:
///   alpha = (n*cross - sum_org*sum_nn) / (n*self - sum_nn^2)
/// Near-zero denominators (constant NN residual) set degenerate and fall
/// back to alpha = 1. Requires n >= 2.
ScalingFactor derive_alpha(const ScalingStats& stats, PlaneId plane = PlaneId::Y);

std::int16_t quantize_alpha(double alpha_real);

/// out = clip(round(alpha * (p_nn - p_rec) + p_rec), 0, 2^bit_depth - 1),
/// rounding half away from zero; identical on encoder and decoder since it
/// only depends on alpha_q.
std::vector<std::uint16_t> apply_scaling(std::span<const std::uint16_t> p_nn,
                                         std::span<const std::uint16_t> p_rec,
                                         const ScalingFactor& factor, int bit_depth);

/// 3-byte record: {plane id | degenerate flag in bit 7, alpha_q LE}.
std::array<std::uint8_t, 3> encode_factor(const ScalingFactor& factor);
ScalingFactor decode_factor(std::span<const std::uint8_t> bytes);

}  // namespace mdan
