#pragma once

#include <iosfwd>
#include <string>

#include "mdan/network.hpp"

namespace mdan {

/// Checkpoint layout, all little-endian:
///   magic "MDAN1"
///   u32 channels, u32 mdsa_blocks, u32 p, u32 q, u32 in_planes, u32 qp_band
///   u64 seed
///   per parameter tensor, in canonical order:
///     u32 name length, name bytes, 4 x u32 dims, dims-product f32 samples
/// Weight records are "<kernel>.w"; bias records "<kernel>.b" with dims
/// (out_channels, 1, 1, 1), present only for kernels that carry a bias.
void save_checkpoint(const MdanParams& params, std::ostream& out);
void save_checkpoint(const MdanParams& params, const std::string& path);

MdanParams load_checkpoint(std::istream& in, const std::string& origin = "<stream>");
MdanParams load_checkpoint(const std::string& path);

}  // namespace mdan
