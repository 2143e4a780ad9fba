#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "mdan/train.hpp"
#include "test_util.hpp"

using namespace mdan;
using namespace mdan::test;
namespace fs = std::filesystem;

namespace {

MdanConfig tiny_config() {
  MdanConfig cfg;
  cfg.channels = 8;
  cfg.mdsa_blocks = 1;
  cfg.p = 1;
  cfg.q = 1;
  return cfg;
}

std::vector<Tensor> planes_from(const Tensor& t, int copies) {
  return std::vector<Tensor>(copies, t);
}

bool params_equal(const MdanParams& a, const MdanParams& b) {
  std::vector<const ConvKernel*> ka, kb;
  for_each_kernel(a, [&](const std::string&, const ConvKernel& k) { ka.push_back(&k); });
  for_each_kernel(b, [&](const std::string&, const ConvKernel& k) { kb.push_back(&k); });
  for (std::size_t i = 0; i < ka.size(); ++i) {
    if (ka[i]->w.v != kb[i]->w.v || ka[i]->bias != kb[i]->bias) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mse loss values and gradient") {
  const Tensor a = random_tensor(1, 1, 4, 4, 1);
  CHECK(mse_loss(a, a).value == 0.0);

  Tensor b = a;
  for (double& v : b.v) v += 0.25;
  CHECK(mse_loss(b, a).value == doctest::Approx(0.0625).epsilon(1e-15));

  const Tensor target = random_tensor(1, 1, 4, 4, 2);
  const MseLoss l = mse_loss(a, target);
  // loss(x) = mse(x, target); check dl/dx by central differences.
  Tensor x = a;
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double orig = x.v[i];
    x.v[i] = orig + h;
    const double lp = mse_loss(x, target).value;
    x.v[i] = orig - h;
    const double lm = mse_loss(x, target).value;
    x.v[i] = orig;
    worst = std::max(worst, std::abs(l.grad.v[i] - (lp - lm) / (2 * h)));
  }
  CHECK(worst < 1e-7);
  CHECK_THROWS_AS(mse_loss(a, random_tensor(1, 1, 4, 5, 3)), InputError);
}

TEST_CASE("patch sampler is deterministic and respects bounds") {
  const Tensor plane = random_tensor(1, 1, 48, 64, 5, 0.0, 1.0);
  const auto rec = planes_from(plane, 3);
  const auto org = planes_from(plane, 3);

  PatchSampler s1(rec, org, 16, 42);
  PatchSampler s2(rec, org, 16, 42);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const PatchPair a = s1.get(i);
    const PatchPair b = s2.get(i);
    CHECK(a.frame == b.frame);
    CHECK(a.y0 == b.y0);
    CHECK(a.x0 == b.x0);
    CHECK(a.rec.v == b.rec.v);
    CHECK(a.y0 >= 0);
    CHECK(a.y0 <= 48 - 16);
    CHECK(a.x0 <= 64 - 16);
  }

  // Patch exactly the plane size: offset is always (0, 0).
  const Tensor small = random_tensor(1, 1, 16, 16, 6, 0.0, 1.0);
  PatchSampler exact(planes_from(small, 1), planes_from(small, 1), 16, 1);
  for (std::uint64_t i = 0; i < 5; ++i) {
    CHECK(exact.get(i).y0 == 0);
    CHECK(exact.get(i).x0 == 0);
  }

  CHECK_THROWS_AS(PatchSampler(planes_from(small, 1), planes_from(small, 1), 32, 1),
                  InputError);
}

TEST_CASE("patch offsets are uniform within 3 sigma") {
  const Tensor plane = random_tensor(1, 1, 20, 20, 7, 0.0, 1.0);
  const auto rec = planes_from(plane, 1);
  PatchSampler s(rec, rec, 16, 99);
  const int bins = 5;  // offsets 0..4
  const int draws = 10000;
  int county[bins] = {0}, countx[bins] = {0};
  for (int i = 0; i < draws; ++i) {
    const PatchPair pp = s.get(static_cast<std::uint64_t>(i));
    ++county[pp.y0];
    ++countx[pp.x0];
  }
  const double expected = static_cast<double>(draws) / bins;
  const double sigma = std::sqrt(draws * (1.0 / bins) * (1.0 - 1.0 / bins));
  for (int b = 0; b < bins; ++b) {
    CHECK(std::abs(county[b] - expected) <= 3.0 * sigma);
    CHECK(std::abs(countx[b] - expected) <= 3.0 * sigma);
  }
}

TEST_CASE("training descends on a repeated patch pair") {
  const Tensor rec = random_tensor(1, 1, 16, 16, 11, 0.2, 0.8);
  Tensor org = rec;
  for (std::size_t i = 0; i < org.v.size(); ++i) org.v[i] += 0.05 * std::sin(double(i));

  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-4;
  cfg.steps = 200;
  cfg.seed = 3;
  const TrainResult r =
      train(tiny_config(), cfg, planes_from(rec, 1), planes_from(org, 1));
  REQUIRE(r.loss_history.size() == 200);
  // The very first update already lowers the loss on the repeated pair,
  // and the run as a whole descends.
  CHECK(r.loss_history[1] < r.loss_history[0]);
  CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Tensor rec = random_tensor(1, 1, 16, 16, 13, 0.0, 1.0);
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.0;
  cfg.steps = 5;
  cfg.seed = 4;
  const TrainResult r = train(tiny_config(), cfg, planes_from(rec, 1), planes_from(rec, 1));
  MdanParams fresh = init_params(tiny_config(), cfg.seed);
  CHECK(params_equal(r.params, fresh));
}

TEST_CASE("resumed training reproduces the uninterrupted trajectory") {
  const Tensor rec = random_tensor(1, 1, 24, 24, 17, 0.1, 0.9);
  Tensor org = rec;
  for (std::size_t i = 0; i < org.v.size(); ++i) org.v[i] += 0.03 * std::cos(double(i) / 3);
  const auto recs = planes_from(rec, 2);
  const auto orgs = planes_from(org, 2);

  TrainConfig full;
  full.patch_size = 16;
  full.batch_size = 2;
  full.learning_rate = 3e-4;
  full.steps = 30;
  full.seed = 5;
  const TrainResult uninterrupted = train(tiny_config(), full, recs, orgs);

  TrainConfig half = full;
  half.steps = 15;
  AdamState state;
  const TrainResult part1 = train(tiny_config(), half, recs, orgs, nullptr, nullptr, nullptr,
                                  &state);

  // Round-trip the optimizer state through its file format.
  const fs::path tmp =
      fs::temp_directory_path() / ("mdan_train_state_" + std::to_string(::getpid()));
  save_train_state(state, tmp.string());
  const AdamState loaded = load_train_state(tmp.string(), tiny_config());
  fs::remove(tmp);
  CHECK(loaded.step == 15);
  CHECK(params_equal(loaded.m, state.m));

  const TrainResult part2 =
      train(tiny_config(), full, recs, orgs, nullptr, &part1.params, &loaded);
  REQUIRE(part2.loss_history.size() == 15);
  for (int i = 0; i < 15; ++i)
    CHECK(part2.loss_history[i] == uninterrupted.loss_history[15 + i]);
  CHECK(params_equal(part2.params, uninterrupted.params));
}

TEST_CASE("checkpoint bytes are a pure function of seed, config and data") {
  const Tensor rec = random_tensor(1, 1, 16, 16, 19, 0.0, 1.0);
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-4;
  cfg.steps = 10;
  cfg.seed = 21;
  cfg.qp_band = 37;
  const TrainResult a = train(tiny_config(), cfg, planes_from(rec, 1), planes_from(rec, 1));
  const TrainResult b = train(tiny_config(), cfg, planes_from(rec, 1), planes_from(rec, 1));
  CHECK(params_equal(a.params, b.params));
  CHECK(a.params.qp_band == 37);
}

TEST_CASE("divergence aborts with the step index") {
  const Tensor rec = random_tensor(1, 1, 16, 16, 23, 0.0, 1.0);
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e12;
  cfg.steps = 50;
  cfg.seed = 8;
  CHECK_THROWS_AS(train(tiny_config(), cfg, planes_from(rec, 1), planes_from(rec, 1)),
                  NumericError);
}

TEST_CASE("zero model with zero target gap has zero gradients") {
  const MdanConfig cfg = tiny_config();
  MdanParams zero = zero_params(cfg);
  const Tensor x = random_tensor(1, 1, 8, 8, 29, 0.0, 1.0);
  MdanCache cache;
  const Tensor pred = mdan_forward(x, zero, &cache);
  const MseLoss l = mse_loss(pred, x);  // identity network: pred == x
  CHECK(l.value == 0.0);
  MdanParams grads = zero_grads_like(zero);
  mdan_backward(cache, zero, l.grad, grads);
  bool all_zero = true;
  for_each_kernel(grads, [&](const std::string&, const ConvKernel& k) {
    for (double w : k.w.v) all_zero = all_zero && w == 0.0;
    for (double b : k.bias) all_zero = all_zero && b == 0.0;
  });
  CHECK(all_zero);
}

TEST_CASE("gradient check validates the reduced network") {
  MdanConfig cfg = tiny_config();
  cfg.p = 0;  // keep the unit run snappy; acceptance runs the full p=2 config
  const GradCheckReport report = gradient_check(cfg, 1e-4, 7, 8);
  MESSAGE("max rel error " << report.max_rel_error << " at " << report.worst_param << " over "
                           << report.checked << " parameters");
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-4);
  CHECK(!report.worst_param.empty());
  CHECK(report.checked > 10000);

  MdanConfig big;
  big.channels = 64;
  CHECK_THROWS_AS(gradient_check(big, 1e-4, 1, 8), InputError);
}
