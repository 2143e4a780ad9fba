#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdan/common.hpp"

namespace mdan {

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<std::uint16_t> v;

  Plane() = default;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0) {}

  std::uint16_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint16_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }
};

/// One YUV420 picture: full-resolution luma, half-resolution chroma.
struct PlanarFrame {
  Plane y, u, v;
  int bit_depth = 8;

  int width() const { return y.w; }
  int height() const { return y.h; }
  int max_value() const { return (1 << bit_depth) - 1; }
};

/// Empty frame with validated geometry: even luma dims, chroma at half
/// resolution, bit depth 8 or 10.
PlanarFrame make_frame(int width, int height, int bit_depth);

/// Raw planar YUV420, 8-bit or 10-bit little-endian. The file must hold a
/// whole number of frames; 10-bit samples above the bit depth are rejected
/// with the offending frame index.
std::vector<PlanarFrame> read_yuv420(const std::string& path, int width, int height,
                                     int bit_depth);
void write_yuv420(const std::vector<PlanarFrame>& frames, const std::string& path);

/// Desk-scale stand-in for codec reconstruction distortion: per plane,
/// 8x8 float DCT-II, uniform quantization with step 2^((qp-4)/6),
/// dequantize, inverse transform, round, clip. Deterministic.
PlanarFrame simulate_compression(const PlanarFrame& frame, int qp);
Plane simulate_compression_plane(const Plane& plane, int qp, int bit_depth);

}  // namespace mdan
