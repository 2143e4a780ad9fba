#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "mdan/checkpoint.hpp"
#include "mdan/metrics.hpp"
#include "mdan/pipeline.hpp"
#include "mdan/train.hpp"
#include "test_util.hpp"

using namespace mdan;
using namespace mdan::test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mdan_pipeline_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

MdanConfig toy_config() {
  MdanConfig cfg;
  cfg.channels = 8;
  cfg.mdsa_blocks = 1;
  cfg.p = 1;
  return cfg;
}

std::string write_ckpt(const TempDir& tmp, const std::string& name, const MdanParams& p) {
  const std::string path = tmp.file(name);
  save_checkpoint(p, path);
  return path;
}

bool files_equal(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !sa.empty() && sa == sb;
}

}  // namespace

TEST_CASE("normalization round trip is exact at both bit depths") {
  for (int depth : {8, 10}) {
    const int maxval = (1 << depth) - 1;
    Plane p(maxval + 1, 1);
    for (int x = 0; x <= maxval; ++x) p.at(0, x) = static_cast<std::uint16_t>(x);
    const Plane back = denormalize_plane(normalize_plane(p, depth), depth);
    CHECK(back.v == p.v);
  }
}

TEST_CASE("zero checkpoint filters to the identity, any plane size") {
  const MdanParams zero = zero_params(toy_config());
  for (auto [w, h] : {std::pair{64, 48}, std::pair{30, 22}, std::pair{128, 128}}) {
    const PlanarFrame f = synth_frame(w + (w % 2), h + (h % 2), 8, 0.0);
    const Plane got = filter_plane_with_model(f.y, 8, zero);
    CHECK(got.v == f.y.v);
  }
}

TEST_CASE("single tile equals the untiled path bit-exactly") {
  const MdanParams model = init_params(toy_config(), 9);
  const PlanarFrame f = synth_frame(128, 128, 8, 0.0);
  TilingPlan tiled;  // 128 with overlap 8: one tile covers the plane
  TilingPlan untiled;
  untiled.tile_size = 256;
  const Plane a = filter_plane_with_model(f.y, 8, model, tiled);
  const Plane b = filter_plane_with_model(f.y, 8, model, untiled);
  CHECK(a.v == b.v);
}

TEST_CASE("tiled and untiled outputs agree within one level, differences near seams") {
  const MdanParams model = init_params(toy_config(), 10);
  const PlanarFrame f = synth_frame(200, 200, 8, 0.0);
  TilingPlan tiled;  // tiles start at 0 and 72 in each axis
  TilingPlan untiled;
  untiled.tile_size = 200;
  const Plane a = filter_plane_with_model(f.y, 8, model, tiled);
  const Plane b = filter_plane_with_model(f.y, 8, model, untiled);

  // The fusion module's global pooling couples every output sample to the
  // whole input, so a tile computes slightly different channel gains than
  // the full plane; isolated one-level rounding flips can therefore land
  // outside the seam region too. The seam itself must stay within one level
  // and flips elsewhere must be rare.
  int max_diff = 0;
  int outside_flips = 0;
  const auto in_band = [](int t) { return t >= 72 && t < 128; };
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 200; ++x) {
      const int d = std::abs(int(a.at(y, x)) - int(b.at(y, x)));
      max_diff = std::max(max_diff, d);
      if (!in_band(y) && !in_band(x) && d > 0) ++outside_flips;
    }
  MESSAGE("max diff: " << max_diff << ", flips outside overlap bands: " << outside_flips);
  CHECK(max_diff <= 1);
  CHECK(outside_flips <= 200 * 200 / 100);
}

TEST_CASE("registry selection and fallback") {
  TempDir tmp;
  MdanParams a = init_params(toy_config(), 1);
  MdanParams b = init_params(toy_config(), 2);
  a.qp_band = 22;
  b.qp_band = 32;
  QpBandRegistry reg;
  reg.add_shared(22, write_ckpt(tmp, "a.ckpt", a));
  reg.add(32, PlaneClass::Luma, write_ckpt(tmp, "b.ckpt", b));

  CHECK(reg.resolve_band(22) == 22);
  CHECK(reg.resolve_band(24) == 22);
  CHECK(reg.resolve_band(27) == 22);  // tie goes to the lower band
  CHECK(reg.resolve_band(28) == 32);
  CHECK(reg.resolve_band(51) == 32);

  CHECK(reg.resolve(30, PlaneClass::Luma).qp_band == 32);
  // Band 32 has no chroma checkpoint: shares the luma one.
  CHECK(reg.resolve(32, PlaneClass::Chroma).qp_band == 32);
  CHECK(reg.resolve(22, PlaneClass::Chroma).qp_band == 22);

  QpBandRegistry empty;
  CHECK_THROWS_AS(empty.resolve_band(30), InputError);
}

TEST_CASE("registry config parsing") {
  TempDir tmp;
  MdanParams m = init_params(toy_config(), 3);
  const std::string ckpt = write_ckpt(tmp, "m.ckpt", m);
  {
    std::ofstream cfg(tmp.file("reg.cfg"));
    cfg << "# models\n37 both " << ckpt << "\n\n22 luma " << ckpt << "\n";
  }
  const QpBandRegistry reg = QpBandRegistry::load(tmp.file("reg.cfg"));
  CHECK(reg.resolve_band(40) == 37);

  {
    std::ofstream cfg(tmp.file("bad.cfg"));
    cfg << "37 sideways " << ckpt << "\n";
  }
  CHECK_THROWS_AS(QpBandRegistry::load(tmp.file("bad.cfg")), InputError);
  CHECK_THROWS_AS(QpBandRegistry::load(tmp.file("missing.cfg")), InputError);
}

TEST_CASE("sidecar round trip and validation") {
  TempDir tmp;
  std::vector<std::array<ScalingFactor, 3>> factors(2);
  for (int fi = 0; fi < 2; ++fi)
    for (int pi = 0; pi < 3; ++pi) {
      factors[fi][pi].plane = static_cast<PlaneId>(pi);
      factors[fi][pi].alpha_q = static_cast<std::int16_t>(1000 + 100 * fi + pi);
    }
  const std::string path = tmp.file("f.mdsf");
  write_sidecar(factors, path);
  const auto back = read_sidecar(path);
  REQUIRE(back.size() == 2);
  for (int fi = 0; fi < 2; ++fi)
    for (int pi = 0; pi < 3; ++pi) CHECK(back[fi][pi].alpha_q == factors[fi][pi].alpha_q);

  {
    std::ofstream bad(tmp.file("bad.mdsf"), std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS(read_sidecar(tmp.file("bad.mdsf")), InputError);
  {
    std::ofstream trunc(tmp.file("trunc.mdsf"), std::ios::binary);
    trunc << "MDSF";
    const unsigned char cb[4] = {2, 0, 0, 0};
    trunc.write(reinterpret_cast<const char*>(cb), 4);
    trunc << "\x00\x00\x08";  // only one record instead of six
  }
  CHECK_THROWS_AS(read_sidecar(tmp.file("trunc.mdsf")), InputError);
}

TEST_CASE("filter without scaling writes identity factors") {
  TempDir tmp;
  const auto org = synth_sequence(64, 48, 8, 2);
  write_yuv420(org, tmp.file("org.yuv"));
  std::vector<PlanarFrame> rec;
  for (const auto& f : org) rec.push_back(simulate_compression(f, 32));
  write_yuv420(rec, tmp.file("rec.yuv"));

  QpBandRegistry reg;
  reg.add_shared(32, write_ckpt(tmp, "m.ckpt", init_params(toy_config(), 5)));

  SequenceJob job;
  job.rec_path = tmp.file("rec.yuv");
  job.org_path = tmp.file("org.yuv");
  job.out_path = tmp.file("out.yuv");
  job.sidecar_path = tmp.file("out.mdsf");
  job.report_path = tmp.file("report.txt");
  job.width = 64;
  job.height = 48;
  job.bit_depth = 8;
  job.qp = 32;
  job.enable_scaling = false;
  const FilterResult res = filter_sequence(job, reg);

  for (const auto& frame : read_sidecar(tmp.file("out.mdsf")))
    for (const auto& f : frame) CHECK(f.alpha_q == 2048);

  // Output equals the per-plane filter results.
  const auto out = read_yuv420(tmp.file("out.yuv"), 64, 48, 8);
  const Plane direct = filter_plane(rec[0].y, 8, 32, reg, PlaneClass::Luma);
  CHECK(out[0].y.v == direct.v);
  CHECK(res.rows.size() == 6);

  // Report file exists with one line per frame and plane.
  std::ifstream rep(tmp.file("report.txt"));
  std::string line;
  int lines = 0;
  while (std::getline(rep, line))
    if (!line.empty() && line[0] != '#') ++lines;
  CHECK(lines == 6);
}

TEST_CASE("scaling raises per-plane PSNR above both baselines") {
  TempDir tmp;
  const auto org = synth_sequence(64, 48, 8, 3);
  write_yuv420(org, tmp.file("org.yuv"));
  std::vector<PlanarFrame> rec;
  for (const auto& f : org) rec.push_back(simulate_compression(f, 37));
  write_yuv420(rec, tmp.file("rec.yuv"));

  // A briefly trained toy model; its residual has no systematic offset, the
  // regime the per-plane PSNR guarantee is stated for.
  std::vector<Tensor> rec_planes, org_planes;
  for (std::size_t i = 0; i < org.size(); ++i) {
    rec_planes.push_back(normalize_plane(rec[i].y, 8));
    org_planes.push_back(normalize_plane(org[i].y, 8));
  }
  TrainConfig tc;
  tc.patch_size = 32;
  tc.batch_size = 1;
  tc.learning_rate = 1e-3;
  tc.steps = 120;
  tc.seed = 6;
  const TrainResult trained = train(toy_config(), tc, rec_planes, org_planes);

  QpBandRegistry reg;
  reg.add_shared(37, write_ckpt(tmp, "m.ckpt", trained.params));

  SequenceJob base;
  base.rec_path = tmp.file("rec.yuv");
  base.org_path = tmp.file("org.yuv");
  base.out_path = tmp.file("plain.yuv");
  base.sidecar_path = tmp.file("plain.mdsf");
  base.width = 64;
  base.height = 48;
  base.bit_depth = 8;
  base.qp = 37;
  base.enable_scaling = false;
  const FilterResult plain = filter_sequence(base, reg);

  SequenceJob scaled = base;
  scaled.out_path = tmp.file("scaled.yuv");
  scaled.sidecar_path = tmp.file("scaled.mdsf");
  scaled.enable_scaling = true;
  const FilterResult with = filter_sequence(scaled, reg);

  REQUIRE(plain.rows.size() == with.rows.size());
  // The guarantee is stated for the luma plane (chroma shares the luma
  // model here and the slope fit has no offset term).
  for (std::size_t i = 0; i < with.rows.size(); ++i) {
    if (with.rows[i].plane != 'Y') continue;
    const double floor_db = std::max(plain.rows[i].psnr_filtered, plain.rows[i].psnr_rec);
    CHECK(with.rows[i].psnr_filtered >= floor_db - 0.005);
  }
}

TEST_CASE("encode/apply round trip is bit-identical") {
  TempDir tmp;
  const auto org = synth_sequence(64, 48, 8, 4);
  write_yuv420(org, tmp.file("org.yuv"));
  std::vector<PlanarFrame> rec;
  for (const auto& f : org) rec.push_back(simulate_compression(f, 27));
  write_yuv420(rec, tmp.file("rec.yuv"));

  QpBandRegistry reg;
  reg.add_shared(27, write_ckpt(tmp, "m.ckpt", init_params(toy_config(), 7)));

  SequenceJob job;
  job.rec_path = tmp.file("rec.yuv");
  job.org_path = tmp.file("org.yuv");
  job.out_path = tmp.file("enc.yuv");
  job.sidecar_path = tmp.file("enc.mdsf");
  job.width = 64;
  job.height = 48;
  job.bit_depth = 8;
  job.qp = 27;
  job.enable_scaling = true;
  filter_sequence(job, reg);

  apply_sequence(tmp.file("rec.yuv"), tmp.file("enc.mdsf"), tmp.file("dec.yuv"), 64, 48, 8,
                 27, reg);
  CHECK(files_equal(tmp.file("enc.yuv"), tmp.file("dec.yuv")));

  // Decode is deterministic across repeated runs.
  apply_sequence(tmp.file("rec.yuv"), tmp.file("enc.mdsf"), tmp.file("dec2.yuv"), 64, 48, 8,
                 27, reg);
  CHECK(files_equal(tmp.file("dec.yuv"), tmp.file("dec2.yuv")));
}

TEST_CASE("sequence error paths") {
  TempDir tmp;
  const auto org = synth_sequence(64, 48, 8, 8);
  write_yuv420(org, tmp.file("org.yuv"));
  write_yuv420({org[0]}, tmp.file("one.yuv"));

  QpBandRegistry reg;
  reg.add_shared(32, write_ckpt(tmp, "m.ckpt", init_params(toy_config(), 8)));

  SequenceJob job;
  job.rec_path = tmp.file("org.yuv");
  job.out_path = tmp.file("out.yuv");
  job.sidecar_path = tmp.file("out.mdsf");
  job.width = 64;
  job.height = 48;
  job.bit_depth = 8;
  job.qp = 32;
  job.enable_scaling = true;  // no original given
  CHECK_THROWS_AS(filter_sequence(job, reg), InputError);

  job.enable_scaling = false;
  filter_sequence(job, reg);
  // Sidecar frame count does not match the reconstruction.
  CHECK_THROWS_AS(apply_sequence(tmp.file("one.yuv"), tmp.file("out.mdsf"),
                                 tmp.file("dec.yuv"), 64, 48, 8, 32, reg),
                  InputError);
}
