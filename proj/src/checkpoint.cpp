#include "mdan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace mdan {

namespace {

constexpr char kMagic[] = "MDAN1";
constexpr std::size_t kMagicLen = 5;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(std::istream& in, const std::string& origin) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw InputError("checkpoint " + origin + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& origin) {
  const std::uint64_t lo = get_u32(in, origin);
  const std::uint64_t hi = get_u32(in, origin);
  return lo | (hi << 32);
}

float get_f32(std::istream& in, const std::string& origin) {
  const std::uint32_t bits = get_u32(in, origin);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void write_tensor_record(std::ostream& out, const std::string& name, int d0, int d1, int d2,
                         int d3, const double* data, std::size_t count) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(d0));
  put_u32(out, static_cast<std::uint32_t>(d1));
  put_u32(out, static_cast<std::uint32_t>(d2));
  put_u32(out, static_cast<std::uint32_t>(d3));
  for (std::size_t i = 0; i < count; ++i) put_f32(out, static_cast<float>(data[i]));
}

void read_tensor_record(std::istream& in, const std::string& origin,
                        const std::string& expect_name, int d0, int d1, int d2, int d3,
                        double* data, std::size_t count) {
  const std::uint32_t name_len = get_u32(in, origin);
  std::string name(name_len, '\0');
  if (!in.read(name.data(), name_len))
    throw InputError("checkpoint " + origin + ": truncated name");
  if (name != expect_name)
    throw InputError("checkpoint " + origin + ": expected record '" + expect_name +
                     "', found '" + name + "'");
  const std::uint32_t r0 = get_u32(in, origin), r1 = get_u32(in, origin),
                      r2 = get_u32(in, origin), r3 = get_u32(in, origin);
  if (r0 != static_cast<std::uint32_t>(d0) || r1 != static_cast<std::uint32_t>(d1) ||
      r2 != static_cast<std::uint32_t>(d2) || r3 != static_cast<std::uint32_t>(d3)) {
    std::ostringstream msg;
    msg << "checkpoint " << origin << ": record '" << name << "' has dims (" << r0 << ","
        << r1 << "," << r2 << "," << r3 << "), expected (" << d0 << "," << d1 << "," << d2
        << "," << d3 << ")";
    throw InputError(msg.str());
  }
  for (std::size_t i = 0; i < count; ++i)
    data[i] = static_cast<double>(get_f32(in, origin));
}

}  // namespace

void save_checkpoint(const MdanParams& params, std::ostream& out) {
  out.write(kMagic, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(params.cfg.channels));
  put_u32(out, static_cast<std::uint32_t>(params.cfg.mdsa_blocks));
  put_u32(out, static_cast<std::uint32_t>(params.cfg.p));
  put_u32(out, static_cast<std::uint32_t>(params.cfg.q));
  put_u32(out, static_cast<std::uint32_t>(params.cfg.in_planes));
  put_u32(out, params.qp_band);
  put_u64(out, params.seed);
  for_each_kernel(params, [&](const std::string& name, const ConvKernel& k) {
    write_tensor_record(out, name + ".w", k.w.n, k.w.c, k.w.h, k.w.w, k.w.v.data(),
                        k.w.size());
    if (k.has_bias())
      write_tensor_record(out, name + ".b", static_cast<int>(k.bias.size()), 1, 1, 1,
                          k.bias.data(), k.bias.size());
  });
  if (!out) throw InputError("checkpoint: write failed");
}

void save_checkpoint(const MdanParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(params, out);
}

MdanParams load_checkpoint(std::istream& in, const std::string& origin) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw InputError("checkpoint " + origin + ": bad magic, not an MDAN1 file");
  MdanConfig cfg;
  cfg.channels = static_cast<int>(get_u32(in, origin));
  cfg.mdsa_blocks = static_cast<int>(get_u32(in, origin));
  cfg.p = static_cast<int>(get_u32(in, origin));
  cfg.q = static_cast<int>(get_u32(in, origin));
  cfg.in_planes = static_cast<int>(get_u32(in, origin));
  const std::uint32_t qp_band = get_u32(in, origin);
  const std::uint64_t seed = get_u64(in, origin);
  cfg.validate();

  MdanParams params = zero_params(cfg);
  params.qp_band = qp_band;
  params.seed = seed;
  for_each_kernel(params, [&](const std::string& name, ConvKernel& k) {
    read_tensor_record(in, origin, name + ".w", k.w.n, k.w.c, k.w.h, k.w.w, k.w.v.data(),
                       k.w.size());
    if (k.has_bias())
      read_tensor_record(in, origin, name + ".b", static_cast<int>(k.bias.size()), 1, 1, 1,
                         k.bias.data(), k.bias.size());
  });
  if (in.peek() != std::char_traits<char>::eof())
    throw InputError("checkpoint " + origin + ": trailing data after last record");
  return params;
}

MdanParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(in, path);
}

}  // namespace mdan
