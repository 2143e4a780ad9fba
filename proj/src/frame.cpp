#include "mdan/frame.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace mdan {

namespace {

constexpr int kBlock = 8;

void validate_geometry(int width, int height, int bit_depth) {
  if (width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0) {
    throw InputError("frame: luma dims must be positive and even, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  if (bit_depth != 8 && bit_depth != 10)
    throw InputError("frame: bit depth must be 8 or 10, got " + std::to_string(bit_depth));
}

// Orthonormal DCT-II basis, T[u][x] = c(u) cos((2x+1) u pi / 16).
const std::array<std::array<double, kBlock>, kBlock>& dct_basis() {
  static const auto t = [] {
    std::array<std::array<double, kBlock>, kBlock> m{};
    const double pi = std::acos(-1.0);
    for (int u = 0; u < kBlock; ++u) {
      const double cu = u == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (int x = 0; x < kBlock; ++x)
        m[u][x] = cu * std::cos((2 * x + 1) * u * pi / (2 * kBlock));
    }
    return m;
  }();
  return t;
}

using Block = std::array<std::array<double, kBlock>, kBlock>;

Block dct2(const Block& x) {
  const auto& t = dct_basis();
  Block tmp{}, y{};
  for (int u = 0; u < kBlock; ++u)
    for (int j = 0; j < kBlock; ++j) {
      double acc = 0.0;
      for (int i = 0; i < kBlock; ++i) acc += t[u][i] * x[i][j];
      tmp[u][j] = acc;
    }
  for (int u = 0; u < kBlock; ++u)
    for (int vv = 0; vv < kBlock; ++vv) {
      double acc = 0.0;
      for (int j = 0; j < kBlock; ++j) acc += tmp[u][j] * t[vv][j];
      y[u][vv] = acc;
    }
  return y;
}

Block idct2(const Block& c) {
  const auto& t = dct_basis();
  Block tmp{}, x{};
  for (int i = 0; i < kBlock; ++i)
    for (int vv = 0; vv < kBlock; ++vv) {
      double acc = 0.0;
      for (int u = 0; u < kBlock; ++u) acc += t[u][i] * c[u][vv];
      tmp[i][vv] = acc;
    }
  for (int i = 0; i < kBlock; ++i)
    for (int j = 0; j < kBlock; ++j) {
      double acc = 0.0;
      for (int vv = 0; vv < kBlock; ++vv) acc += tmp[i][vv] * t[vv][j];
      x[i][j] = acc;
    }
  return x;
}

}  // namespace

PlanarFrame make_frame(int width, int height, int bit_depth) {
  validate_geometry(width, height, bit_depth);
  PlanarFrame f;
  f.y = Plane(width, height);
  f.u = Plane(width / 2, height / 2);
  f.v = Plane(width / 2, height / 2);
  f.bit_depth = bit_depth;
  return f;
}

std::vector<PlanarFrame> read_yuv420(const std::string& path, int width, int height,
                                     int bit_depth) {
  validate_geometry(width, height, bit_depth);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw InputError("read_yuv420: cannot open '" + path + "'");
  const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  const std::size_t samples_per_frame =
      static_cast<std::size_t>(width) * height * 3 / 2;
  const int bytes_per_sample = bit_depth > 8 ? 2 : 1;
  const std::uint64_t frame_bytes =
      static_cast<std::uint64_t>(samples_per_frame) * bytes_per_sample;
  if (file_size == 0 || file_size % frame_bytes != 0) {
    throw InputError("read_yuv420: '" + path + "' size " + std::to_string(file_size) +
                     " is not a multiple of the frame size " + std::to_string(frame_bytes) +
                     " (" + std::to_string(width) + "x" + std::to_string(height) + ", " +
                     std::to_string(bit_depth) + "-bit)");
  }

  const std::size_t frame_count = static_cast<std::size_t>(file_size / frame_bytes);
  std::vector<PlanarFrame> frames;
  frames.reserve(frame_count);
  std::vector<unsigned char> buf(frame_bytes);
  const int maxval = (1 << bit_depth) - 1;
  for (std::size_t fi = 0; fi < frame_count; ++fi) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(frame_bytes)))
      throw InputError("read_yuv420: short read at frame " + std::to_string(fi));
    PlanarFrame f = make_frame(width, height, bit_depth);
    std::size_t pos = 0;
    for (Plane* pl : {&f.y, &f.u, &f.v}) {
      for (auto& sample : pl->v) {
        std::uint16_t s;
        if (bytes_per_sample == 1) {
          s = buf[pos++];
        } else {
          s = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
          pos += 2;
        }
        if (s > maxval) {
          throw InputError("read_yuv420: sample " + std::to_string(s) + " in frame " +
                           std::to_string(fi) + " exceeds " + std::to_string(bit_depth) +
                           "-bit range");
        }
        sample = s;
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_yuv420(const std::vector<PlanarFrame>& frames, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("write_yuv420: cannot open '" + path + "' for writing");
  for (const PlanarFrame& f : frames) {
    const int bytes_per_sample = f.bit_depth > 8 ? 2 : 1;
    for (const Plane* pl : {&f.y, &f.u, &f.v}) {
      for (std::uint16_t s : pl->v) {
        if (bytes_per_sample == 1) {
          const unsigned char b = static_cast<unsigned char>(s);
          out.write(reinterpret_cast<const char*>(&b), 1);
        } else {
          const unsigned char b[2] = {static_cast<unsigned char>(s & 0xff),
                                      static_cast<unsigned char>(s >> 8)};
          out.write(reinterpret_cast<const char*>(b), 2);
        }
      }
    }
  }
  if (!out) throw InputError("write_yuv420: write failed for '" + path + "'");
}

Plane simulate_compression_plane(const Plane& plane, int qp, int bit_depth) {
  if (qp < 0 || qp > 51)
    throw InputError("simulate_compression: qp must be in [0, 51], got " + std::to_string(qp));
  const double step = std::pow(2.0, (qp - 4) / 6.0);
  const double maxval = static_cast<double>((1 << bit_depth) - 1);
  Plane out(plane.w, plane.h);
  Block blk;
  for (int by = 0; by < plane.h; by += kBlock) {
    for (int bx = 0; bx < plane.w; bx += kBlock) {
      // Edge blocks replicate the last row/column into the transform buffer.
      for (int i = 0; i < kBlock; ++i) {
        const int sy = std::min(by + i, plane.h - 1);
        for (int j = 0; j < kBlock; ++j) {
          const int sx = std::min(bx + j, plane.w - 1);
          blk[i][j] = static_cast<double>(plane.at(sy, sx));
        }
      }
      Block coef = dct2(blk);
      for (auto& row : coef)
        for (double& c : row) c = std::round(c / step) * step;
      Block rec = idct2(coef);
      for (int i = 0; i < kBlock && by + i < plane.h; ++i)
        for (int j = 0; j < kBlock && bx + j < plane.w; ++j)
          out.at(by + i, bx + j) =
              static_cast<std::uint16_t>(std::clamp(std::round(rec[i][j]), 0.0, maxval));
    }
  }
  return out;
}

PlanarFrame simulate_compression(const PlanarFrame& frame, int qp) {
  PlanarFrame out;
  out.bit_depth = frame.bit_depth;
  out.y = simulate_compression_plane(frame.y, qp, frame.bit_depth);
  out.u = simulate_compression_plane(frame.u, qp, frame.bit_depth);
  out.v = simulate_compression_plane(frame.v, qp, frame.bit_depth);
  return out;
}

}  // namespace mdan
