#include "mdan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdan/checkpoint.hpp"
#include "mdan/metrics.hpp"

namespace mdan {

namespace {

constexpr char kSidecarMagic[] = "MDSF";

int round_up4(int x) { return (x + 3) / 4 * 4; }

// Mirror index with edge inclusion: valid while pad <= size.
int reflect_index(int i, int size) { return i < size ? i : 2 * size - 1 - i; }

std::vector<int> tile_starts(int length, int tile, int overlap) {
  if (length <= tile) return {0};
  std::vector<int> starts;
  const int step = tile - overlap;
  for (int x = 0;; x += step) {
    if (x + tile >= length) {
      starts.push_back(length - tile);
      break;
    }
    starts.push_back(x);
  }
  return starts;
}

// Linear ramp up to full weight over the overlap width; never zero, so the
// weight sum is positive everywhere.
double tile_weight(int t, int size, int overlap) {
  const int cap = overlap + 1;
  return static_cast<double>(std::min({t + 1, size - t, cap}));
}

}  // namespace

QpBandRegistry QpBandRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("registry: cannot open '" + path + "'");
  QpBandRegistry reg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int band;
    std::string cls, ckpt;
    if (!(ls >> band)) continue;  // blank line
    if (!(ls >> cls >> ckpt)) {
      throw InputError("registry " + path + ":" + std::to_string(lineno) +
                       ": expected '<band> <luma|chroma|both> <path>'");
    }
    if (band < 0 || band > 51) {
      throw InputError("registry " + path + ":" + std::to_string(lineno) +
                       ": band must be in [0, 51]");
    }
    if (cls == "luma") {
      reg.add(band, PlaneClass::Luma, ckpt);
    } else if (cls == "chroma") {
      reg.add(band, PlaneClass::Chroma, ckpt);
    } else if (cls == "both") {
      reg.add_shared(band, ckpt);
    } else {
      throw InputError("registry " + path + ":" + std::to_string(lineno) +
                       ": unknown plane class '" + cls + "'");
    }
  }
  if (reg.empty()) throw InputError("registry '" + path + "' defines no models");
  return reg;
}

void QpBandRegistry::add(int band, PlaneClass cls, const std::string& ckpt_path) {
  Entry& e = bands_[band];
  (cls == PlaneClass::Luma ? e.luma : e.chroma) = ckpt_path;
}

void QpBandRegistry::add_shared(int band, const std::string& ckpt_path) {
  Entry& e = bands_[band];
  e.luma = ckpt_path;
  e.chroma = ckpt_path;
}

int QpBandRegistry::resolve_band(int qp) const {
  if (bands_.empty()) throw InputError("registry: no QP bands configured");
  int best = -1;
  int best_dist = -1;
  for (const auto& [band, entry] : bands_) {
    const int d = std::abs(qp - band);
    if (best < 0 || d < best_dist) {  // ascending order keeps ties on the lower band
      best = band;
      best_dist = d;
    }
  }
  return best;
}

const MdanParams& QpBandRegistry::resolve(int qp, PlaneClass cls) const {
  const Entry& e = bands_.at(resolve_band(qp));
  const std::string& primary = cls == PlaneClass::Luma ? e.luma : e.chroma;
  const std::string& fallback = cls == PlaneClass::Luma ? e.chroma : e.luma;
  const std::string& path = primary.empty() ? fallback : primary;
  if (path.empty()) throw InputError("registry: band has no checkpoint");
  return fetch(path);
}

const MdanParams& QpBandRegistry::fetch(const std::string& path) const {
  std::lock_guard lock(*mu_);
  auto it = cache_.find(path);
  if (it == cache_.end()) {
    auto params = std::make_shared<const MdanParams>(load_checkpoint(path));
    it = cache_.emplace(path, std::move(params)).first;
  }
  return *it->second;
}

Tensor normalize_plane(const Plane& p, int bit_depth) {
  Tensor t(1, 1, p.h, p.w);
  const double inv = 1.0 / static_cast<double>((1 << bit_depth) - 1);
  for (std::size_t i = 0; i < p.v.size(); ++i) t.v[i] = p.v[i] * inv;
  return t;
}

Plane denormalize_plane(const Tensor& t, int bit_depth) {
  if (t.n != 1 || t.c != 1)
    throw InputError("denormalize_plane: expected a single plane, got " + t.shape_str());
  const double maxval = static_cast<double>((1 << bit_depth) - 1);
  Plane p(t.w, t.h);
  for (std::size_t i = 0; i < t.v.size(); ++i)
    p.v[i] = static_cast<std::uint16_t>(std::clamp(std::round(t.v[i] * maxval), 0.0, maxval));
  return p;
}

Plane filter_plane_with_model(const Plane& rec, int bit_depth, const MdanParams& model,
                              const TilingPlan& tiling) {
  if (tiling.tile_size < 8 || tiling.tile_size % 4 != 0)
    throw InputError("tiling: tile size must be a multiple of 4 and >= 8");
  if (tiling.overlap < 0 || tiling.overlap % 4 != 0 || tiling.overlap >= tiling.tile_size)
    throw InputError("tiling: overlap must be a multiple of 4 in [0, tile_size)");

  const int hp = round_up4(rec.h);
  const int wp = round_up4(rec.w);
  Tensor padded(1, 1, hp, wp);
  {
    const Tensor norm = normalize_plane(rec, bit_depth);
    for (int y = 0; y < hp; ++y) {
      const int sy = reflect_index(y, rec.h);
      for (int x = 0; x < wp; ++x)
        padded.at(0, 0, y, x) = norm.at(0, 0, sy, reflect_index(x, rec.w));
    }
  }

  Tensor merged(1, 1, hp, wp);
  if (hp <= tiling.tile_size && wp <= tiling.tile_size) {
    merged = mdan_forward(padded, model);
  } else {
    const int tile = tiling.tile_size;
    // Each tile runs the network with a ring of real-content context so the
    // blended seams stay clean; the context is cropped before blending.
    const int margin = round_up4(2 * tiling.overlap);
    const auto ys = tile_starts(hp, tile, tiling.overlap);
    const auto xs = tile_starts(wp, tile, tiling.overlap);
    std::vector<double> wsum(static_cast<std::size_t>(hp) * wp, 0.0);
    const int th = std::min(tile, hp);
    const int tw = std::min(tile, wp);
    for (int y0 : ys) {
      for (int x0 : xs) {
        const int top = std::min(margin, y0);
        const int left = std::min(margin, x0);
        const int bottom = std::min(margin, hp - (y0 + th));
        const int right = std::min(margin, wp - (x0 + tw));
        Tensor t(1, 1, th + top + bottom, tw + left + right);
        for (int y = 0; y < t.h; ++y)
          for (int x = 0; x < t.w; ++x)
            t.at(0, 0, y, x) = padded.at(0, 0, y0 - top + y, x0 - left + x);
        const Tensor out = mdan_forward(t, model);
        for (int y = 0; y < th; ++y) {
          const double wy = tile_weight(y, th, tiling.overlap);
          for (int x = 0; x < tw; ++x) {
            const double wgt = wy * tile_weight(x, tw, tiling.overlap);
            merged.at(0, 0, y0 + y, x0 + x) += wgt * out.at(0, 0, top + y, left + x);
            wsum[static_cast<std::size_t>(y0 + y) * wp + x0 + x] += wgt;
          }
        }
      }
    }
    for (std::size_t i = 0; i < merged.v.size(); ++i) merged.v[i] /= wsum[i];
  }

  Tensor cropped(1, 1, rec.h, rec.w);
  for (int y = 0; y < rec.h; ++y)
    for (int x = 0; x < rec.w; ++x) cropped.at(0, 0, y, x) = merged.at(0, 0, y, x);
  return denormalize_plane(cropped, bit_depth);
}

Plane filter_plane(const Plane& rec, int bit_depth, int qp, const QpBandRegistry& registry,
                   PlaneClass cls, const TilingPlan& tiling) {
  return filter_plane_with_model(rec, bit_depth, registry.resolve(qp, cls), tiling);
}

FilterResult filter_sequence(const SequenceJob& job, const QpBandRegistry& registry) {
  if (job.enable_scaling && job.org_path.empty())
    throw InputError("filter_sequence: scaling requires the original sequence");
  const auto rec = read_yuv420(job.rec_path, job.width, job.height, job.bit_depth);
  std::vector<PlanarFrame> org;
  if (!job.org_path.empty()) {
    org = read_yuv420(job.org_path, job.width, job.height, job.bit_depth);
    if (org.size() != rec.size()) {
      throw InputError("filter_sequence: original has " + std::to_string(org.size()) +
                       " frames but reconstruction has " + std::to_string(rec.size()));
    }
  }

  FilterResult result;
  std::vector<PlanarFrame> out;
  out.reserve(rec.size());
  for (std::size_t fi = 0; fi < rec.size(); ++fi) {
    PlanarFrame of = make_frame(job.width, job.height, job.bit_depth);
    std::array<ScalingFactor, 3> factors{};
    const std::array<const Plane*, 3> rec_planes = {&rec[fi].y, &rec[fi].u, &rec[fi].v};
    const std::array<Plane*, 3> out_planes = {&of.y, &of.u, &of.v};
    const char names[3] = {'Y', 'U', 'V'};
    for (int pi = 0; pi < 3; ++pi) {
      const PlaneClass cls = pi == 0 ? PlaneClass::Luma : PlaneClass::Chroma;
      Plane nn = filter_plane(*rec_planes[pi], job.bit_depth, job.qp, registry, cls);
      ScalingFactor f;
      f.plane = static_cast<PlaneId>(pi);
      if (job.enable_scaling) {
        const Plane& orgp = pi == 0 ? org[fi].y : (pi == 1 ? org[fi].u : org[fi].v);
        const ScalingStats stats = accumulate_stats(nn.v, rec_planes[pi]->v, orgp.v);
        f = derive_alpha(stats, static_cast<PlaneId>(pi));
        out_planes[pi]->v = apply_scaling(nn.v, rec_planes[pi]->v, f, job.bit_depth);
        out_planes[pi]->w = nn.w;
        out_planes[pi]->h = nn.h;
      } else {
        *out_planes[pi] = std::move(nn);
      }
      factors[pi] = f;
      if (!org.empty()) {
        const Plane& orgp = pi == 0 ? org[fi].y : (pi == 1 ? org[fi].u : org[fi].v);
        FilterReportRow row;
        row.frame = static_cast<int>(fi);
        row.plane = names[pi];
        row.psnr_rec = psnr(*rec_planes[pi], orgp, job.bit_depth);
        row.psnr_filtered = psnr(*out_planes[pi], orgp, job.bit_depth);
        row.alpha = f.dequant();
        row.degenerate = f.degenerate;
        result.rows.push_back(row);
      }
    }
    result.factors.push_back(factors);
    out.push_back(std::move(of));
  }

  write_yuv420(out, job.out_path);
  if (!job.sidecar_path.empty()) write_sidecar(result.factors, job.sidecar_path);
  if (!job.report_path.empty()) write_report(result.rows, job.report_path);
  return result;
}

void apply_sequence(const std::string& rec_path, const std::string& sidecar_path,
                    const std::string& out_path, int width, int height, int bit_depth,
                    int qp, const QpBandRegistry& registry) {
  const auto rec = read_yuv420(rec_path, width, height, bit_depth);
  const auto factors = read_sidecar(sidecar_path);
  if (factors.size() != rec.size()) {
    throw InputError("apply_sequence: sidecar holds " + std::to_string(factors.size()) +
                     " frames but reconstruction has " + std::to_string(rec.size()));
  }
  std::vector<PlanarFrame> out;
  out.reserve(rec.size());
  for (std::size_t fi = 0; fi < rec.size(); ++fi) {
    PlanarFrame of = make_frame(width, height, bit_depth);
    const std::array<const Plane*, 3> rec_planes = {&rec[fi].y, &rec[fi].u, &rec[fi].v};
    const std::array<Plane*, 3> out_planes = {&of.y, &of.u, &of.v};
    for (int pi = 0; pi < 3; ++pi) {
      const PlaneClass cls = pi == 0 ? PlaneClass::Luma : PlaneClass::Chroma;
      const Plane nn = filter_plane(*rec_planes[pi], bit_depth, qp, registry, cls);
      out_planes[pi]->w = nn.w;
      out_planes[pi]->h = nn.h;
      out_planes[pi]->v = apply_scaling(nn.v, rec_planes[pi]->v, factors[fi][pi], bit_depth);
    }
    out.push_back(std::move(of));
  }
  write_yuv420(out, out_path);
}

void write_sidecar(const std::vector<std::array<ScalingFactor, 3>>& factors,
                   const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("sidecar: cannot open '" + path + "' for writing");
  out.write(kSidecarMagic, 4);
  const std::uint32_t count = static_cast<std::uint32_t>(factors.size());
  const unsigned char cb[4] = {
      static_cast<unsigned char>(count), static_cast<unsigned char>(count >> 8),
      static_cast<unsigned char>(count >> 16), static_cast<unsigned char>(count >> 24)};
  out.write(reinterpret_cast<const char*>(cb), 4);
  for (const auto& frame : factors) {
    for (const ScalingFactor& f : frame) {
      const auto bytes = encode_factor(f);
      out.write(reinterpret_cast<const char*>(bytes.data()), 3);
    }
  }
  if (!out) throw InputError("sidecar: write failed for '" + path + "'");
}

std::vector<std::array<ScalingFactor, 3>> read_sidecar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("sidecar: cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kSidecarMagic, 4) != 0)
    throw InputError("sidecar '" + path + "': bad magic, not an MDSF file");
  unsigned char cb[4];
  if (!in.read(reinterpret_cast<char*>(cb), 4))
    throw InputError("sidecar '" + path + "': truncated frame count");
  const std::uint32_t count = static_cast<std::uint32_t>(cb[0]) | (cb[1] << 8) |
                              (cb[2] << 16) | (static_cast<std::uint32_t>(cb[3]) << 24);
  std::vector<std::array<ScalingFactor, 3>> factors(count);
  for (std::uint32_t fi = 0; fi < count; ++fi) {
    for (int pi = 0; pi < 3; ++pi) {
      std::uint8_t bytes[3];
      if (!in.read(reinterpret_cast<char*>(bytes), 3)) {
        throw InputError("sidecar '" + path + "': truncated at frame " + std::to_string(fi));
      }
      factors[fi][pi] = decode_factor(bytes);
      if (static_cast<int>(factors[fi][pi].plane) != pi) {
        throw InputError("sidecar '" + path + "': plane order violated at frame " +
                         std::to_string(fi));
      }
    }
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw InputError("sidecar '" + path + "': trailing data");
  return factors;
}

void write_report(const std::vector<FilterReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("report: cannot open '" + path + "' for writing");
  out << "# frame plane psnr_rec psnr_filtered alpha\n";
  char buf[160];
  for (const FilterReportRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d %c %.6f %.6f %.6f%s\n", r.frame, r.plane, r.psnr_rec,
                  r.psnr_filtered, r.alpha, r.degenerate ? " degenerate" : "");
    out << buf;
  }
  if (!out) throw InputError("report: write failed for '" + path + "'");
}

}  // namespace mdan
