#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mdan/frame.hpp"
#include "mdan/metrics.hpp"
#include "test_util.hpp"

using namespace mdan;
using namespace mdan::test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mdan_frame_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

PlanarFrame random_frame(int w, int h, int depth, std::uint64_t seed) {
  PlanarFrame f = make_frame(w, h, depth);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(0, f.max_value());
  for (Plane* p : {&f.y, &f.u, &f.v})
    for (auto& s : p->v) s = static_cast<std::uint16_t>(dist(rng));
  return f;
}

// Mean absolute step across 8-aligned column boundaries minus the mean
// absolute step across interior columns.
double blockiness(const Plane& p) {
  double boundary = 0.0, interior = 0.0;
  std::size_t nb = 0, ni = 0;
  for (int y = 0; y < p.h; ++y) {
    for (int x = 1; x < p.w; ++x) {
      const double d = std::abs(static_cast<double>(p.at(y, x)) - p.at(y, x - 1));
      if (x % 8 == 0) {
        boundary += d;
        ++nb;
      } else {
        interior += d;
        ++ni;
      }
    }
  }
  return boundary / nb - interior / ni;
}

}  // namespace

TEST_CASE("yuv420 write/read round trip, 8-bit") {
  TempDir tmp;
  std::vector<PlanarFrame> seq = {random_frame(64, 48, 8, 1), random_frame(64, 48, 8, 2)};
  const std::string path = tmp.file("rt8.yuv");
  write_yuv420(seq, path);
  const auto back = read_yuv420(path, 64, 48, 8);
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[i].y.v == seq[i].y.v);
    CHECK(back[i].u.v == seq[i].u.v);
    CHECK(back[i].v.v == seq[i].v.v);
  }
}

TEST_CASE("yuv420 10-bit boundary values survive, out-of-range rejected") {
  TempDir tmp;
  PlanarFrame f = make_frame(8, 8, 10);
  f.y.at(0, 0) = 1023;
  const std::string path = tmp.file("rt10.yuv");
  write_yuv420({f}, path);
  const auto back = read_yuv420(path, 8, 8, 10);
  CHECK(back[0].y.at(0, 0) == 1023);

  // Patch the first sample to 1024 directly in the file.
  std::fstream raw(path, std::ios::binary | std::ios::in | std::ios::out);
  const unsigned char bad[2] = {0x00, 0x04};
  raw.write(reinterpret_cast<const char*>(bad), 2);
  raw.close();
  CHECK_THROWS_WITH_AS(read_yuv420(path, 8, 8, 10), doctest::Contains("frame 0"), InputError);
}

TEST_CASE("yuv420 rejects files with partial frames") {
  TempDir tmp;
  const std::string path = tmp.file("partial.yuv");
  {
    std::ofstream out(path, std::ios::binary);
    std::vector<char> bytes(64 * 48 * 3 / 2 * 3 / 2, 7);  // 1.5 frames
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(read_yuv420(path, 64, 48, 8), doctest::Contains("4608"), InputError);
}

TEST_CASE("frame geometry validation") {
  CHECK_THROWS_AS(make_frame(63, 48, 8), InputError);
  CHECK_THROWS_AS(make_frame(64, 47, 8), InputError);
  CHECK_THROWS_AS(make_frame(64, 48, 9), InputError);
  const PlanarFrame f = make_frame(64, 48, 8);
  CHECK(f.u.w == 32);
  CHECK(f.u.h == 24);
}

TEST_CASE("compression simulator is lossless on constant frames at step 1") {
  PlanarFrame f = make_frame(32, 32, 8);
  for (Plane* p : {&f.y, &f.u, &f.v})
    for (auto& s : p->v) s = 133;
  const PlanarFrame rec = simulate_compression(f, 4);  // step 2^0 = 1
  CHECK(rec.y.v == f.y.v);
  CHECK(rec.u.v == f.u.v);
  CHECK(rec.v.v == f.v.v);
}

TEST_CASE("distortion grows monotonically with qp") {
  const PlanarFrame f = synth_frame(176, 144, 8, 0.0);
  double prev = std::numeric_limits<double>::infinity();
  for (int qp : {22, 27, 32, 37, 42}) {
    const PlanarFrame rec = simulate_compression(f, qp);
    const double p = psnr(rec.y, f.y, 8);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("simulation introduces blockiness at qp 37") {
  const PlanarFrame f = synth_frame(176, 144, 8, 0.0);
  const PlanarFrame rec = simulate_compression(f, 37);
  CHECK(blockiness(rec.y) > blockiness(f.y));
}

TEST_CASE("simulator handles non-multiple-of-8 planes and validates qp") {
  const PlanarFrame f = synth_frame(52, 36, 8, 0.0);
  const PlanarFrame rec = simulate_compression(f, 30);
  CHECK(rec.y.w == 52);
  CHECK(rec.y.h == 36);
  for (auto s : rec.y.v) CHECK(s <= 255);
  CHECK_THROWS_AS(simulate_compression(f, 52), InputError);
  CHECK_THROWS_AS(simulate_compression(f, -1), InputError);
}
