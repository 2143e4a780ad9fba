#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mdan/frame.hpp"
#include "mdan/network.hpp"
#include "mdan/scaling.hpp"

namespace mdan {

enum class PlaneClass { Luma, Chroma };

struct TilingPlan {
  int tile_size = 128;  // multiple of 4
  int overlap = 8;      // multiple of 4, < tile_size
};

/// Maps QP bands {22, 27, 32, 37, 42} (or any subset) to checkpoints per
/// plane class. Selection picks the band minimizing |qp - band|, ties going
/// to the lower band. A band with a single checkpoint shares it across
/// plane classes. Checkpoints load lazily and are cached.
class QpBandRegistry {
 public:
  /// Line format: "<band> <luma|chroma|both> <path>"; '#' starts a comment.
  static QpBandRegistry load(const std::string& path);

  void add(int band, PlaneClass cls, const std::string& ckpt_path);
  void add_shared(int band, const std::string& ckpt_path);

  int resolve_band(int qp) const;
  const MdanParams& resolve(int qp, PlaneClass cls) const;
  bool empty() const { return bands_.empty(); }

 private:
  struct Entry {
    std::string luma, chroma;
  };
  std::map<int, Entry> bands_;
  mutable std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  mutable std::map<std::string, std::shared_ptr<const MdanParams>> cache_;
  const MdanParams& fetch(const std::string& path) const;
};

/// Integer plane -> [0,1] tensor; the round trip through denormalize_plane
/// is exact for every representable sample.
Tensor normalize_plane(const Plane& p, int bit_depth);
Plane denormalize_plane(const Tensor& t, int bit_depth);

/// Normalize, reflect-pad to multiples of 4, run the network tile by tile
/// with linear-ramp blending over the overlaps, crop, denormalize.
Plane filter_plane_with_model(const Plane& rec, int bit_depth, const MdanParams& model,
                              const TilingPlan& tiling = {});
Plane filter_plane(const Plane& rec, int bit_depth, int qp, const QpBandRegistry& registry,
                   PlaneClass cls, const TilingPlan& tiling = {});

struct FilterReportRow {
  int frame = 0;
  char plane = 'Y';
  double psnr_rec = 0.0;
  double psnr_filtered = 0.0;
  double alpha = 1.0;
  bool degenerate = false;
};

struct FilterResult {
  std::vector<FilterReportRow> rows;  // present only when an original is given
  std::vector<std::array<ScalingFactor, 3>> factors;  // per frame: Y, U, V
};

struct SequenceJob {
  std::string rec_path;
  std::string org_path;     // empty when no original is available
  std::string out_path;
  std::string sidecar_path;
  std::string report_path;  // empty to skip the report file
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  int qp = 32;
  bool enable_scaling = false;
};

/// Encoder side: filter every frame, optionally derive and apply per-frame
/// per-plane scaling factors, write the output sequence plus the sidecar.
FilterResult filter_sequence(const SequenceJob& job, const QpBandRegistry& registry);

/// Decoder side: reproduces the encoder output bit-exactly from the
/// reconstruction and the sidecar alone.
void apply_sequence(const std::string& rec_path, const std::string& sidecar_path,
                    const std::string& out_path, int width, int height, int bit_depth,
                    int qp, const QpBandRegistry& registry);

/// Sidecar: magic "MDSF", u32 frame count, then three 3-byte factor records
/// (Y, U, V) per frame. Bit-exact interface.
void write_sidecar(const std::vector<std::array<ScalingFactor, 3>>& factors,
                   const std::string& path);
std::vector<std::array<ScalingFactor, 3>> read_sidecar(const std::string& path);

void write_report(const std::vector<FilterReportRow>& rows, const std::string& path);

}  // namespace mdan
