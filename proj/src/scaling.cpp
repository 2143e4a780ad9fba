#include "mdan/scaling.hpp"

#include <algorithm>
#include <cmath>

namespace mdan {

ScalingStats accumulate_stats(std::span<const std::uint16_t> p_nn,
                              std::span<const std::uint16_t> p_rec,
                              std::span<const std::uint16_t> p_org) {
  if (p_nn.size() != p_rec.size() || p_nn.size() != p_org.size()) {
    throw InputError("accumulate_stats: plane sizes differ: nn=" +
                     std::to_string(p_nn.size()) + " rec=" + std::to_string(p_rec.size()) +
                     " org=" + std::to_string(p_org.size()));
  }
  ScalingStats s;
  for (std::size_t i = 0; i < p_nn.size(); ++i) {
    const double dn = static_cast<double>(p_nn[i]) - static_cast<double>(p_rec[i]);
    const double dorg = static_cast<double>(p_org[i]) - static_cast<double>(p_rec[i]);
    s.self_multi += dn * dn;
    s.cross_multi += dn * dorg;
    s.sum_org_resi += dorg;
    s.sum_nn_resi += dn;
  }
  s.n = p_nn.size();
  return s;
}

ScalingFactor derive_alpha(const ScalingStats& stats, PlaneId plane) {
  if (stats.n < 2)
    throw InputError("derive_alpha: need at least 2 samples, got " + std::to_string(stats.n));
  ScalingFactor f;
  f.plane = plane;
  const double n = static_cast<double>(stats.n);
  const double den = n * stats.self_multi - stats.sum_nn_resi * stats.sum_nn_resi;
  const double eps = 1e-12 * n * std::max(1.0, stats.self_multi);
  if (std::abs(den) <= eps) {
    f.degenerate = true;
    f.alpha_real = 1.0;
  } else {
    f.alpha_real = (n * stats.cross_multi - stats.sum_org_resi * stats.sum_nn_resi) / den;
  }
  f.alpha_q = quantize_alpha(f.alpha_real);
  return f;
}

std::int16_t quantize_alpha(double alpha_real) {
  const double hi = 16.0 - 1.0 / kAlphaOne;
  const double clamped = std::clamp(alpha_real, -16.0, hi);
  return static_cast<std::int16_t>(std::llround(clamped * kAlphaOne));
}

std::vector<std::uint16_t> apply_scaling(std::span<const std::uint16_t> p_nn,
                                         std::span<const std::uint16_t> p_rec,
                                         const ScalingFactor& factor, int bit_depth) {
  if (p_nn.size() != p_rec.size()) {
    throw InputError("apply_scaling: plane sizes differ: nn=" + std::to_string(p_nn.size()) +
                     " rec=" + std::to_string(p_rec.size()));
  }
  const double alpha = factor.dequant();
  const double maxval = static_cast<double>((1 << bit_depth) - 1);
  std::vector<std::uint16_t> out(p_nn.size());
  for (std::size_t i = 0; i < p_nn.size(); ++i) {
    const double rec = static_cast<double>(p_rec[i]);
    const double scaled =
        std::round(alpha * (static_cast<double>(p_nn[i]) - rec) + rec);
    out[i] = static_cast<std::uint16_t>(std::clamp(scaled, 0.0, maxval));
  }
  return out;
}

std::array<std::uint8_t, 3> encode_factor(const ScalingFactor& factor) {
  std::array<std::uint8_t, 3> b{};
  b[0] = static_cast<std::uint8_t>(factor.plane) |
         (factor.degenerate ? std::uint8_t{0x80} : std::uint8_t{0});
  const std::uint16_t q = static_cast<std::uint16_t>(factor.alpha_q);
  b[1] = static_cast<std::uint8_t>(q & 0xff);
  b[2] = static_cast<std::uint8_t>(q >> 8);
  return b;
}

ScalingFactor decode_factor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != 3) {
    throw InputError("decode_factor: need 3 bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint8_t plane_bits = bytes[0] & 0x7f;
  if (plane_bits > 2)
    throw InputError("decode_factor: invalid plane id " + std::to_string(plane_bits));
  ScalingFactor f;
  f.plane = static_cast<PlaneId>(plane_bits);
  f.degenerate = (bytes[0] & 0x80) != 0;
  f.alpha_q = static_cast<std::int16_t>(
      static_cast<std::uint16_t>(bytes[1]) | (static_cast<std::uint16_t>(bytes[2]) << 8));
  f.alpha_real = f.dequant();
  return f;
}

}  // namespace mdan
