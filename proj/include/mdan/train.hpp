#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdan/network.hpp"

namespace mdan {

struct TrainConfig {
  int patch_size = 64;  // multiple of 4
  int batch_size = 8;
  double learning_rate = 1e-4;
  int steps = 1000;
  std::uint64_t seed = 1;
  std::uint32_t qp_band = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct PatchPair {
  Tensor rec, org;  // (1, 1, patch, patch) in [0, 1]
  int frame = 0;
  int y0 = 0;
  int x0 = 0;
};

/// Deterministic patch source over aligned (reconstructed, original) plane
/// sequences. get(k) depends only on (seed, k), so any step of a run can be
/// replayed without consuming the stream.
class PatchSampler {
 public:
  PatchSampler(const std::vector<Tensor>& rec_planes, const std::vector<Tensor>& org_planes,
               int patch_size, std::uint64_t seed);
  PatchPair get(std::uint64_t index) const;

 private:
  std::vector<Tensor> rec_;
  std::vector<Tensor> org_;
  int patch_;
  std::uint64_t seed_;
};

struct MseLoss {
  double value = 0.0;
  Tensor grad;  // 2 (pred - target) / count
};
MseLoss mse_loss(const Tensor& pred, const Tensor& target);

/// Adaptive-moment optimizer state: first/second moment trees shaped like
/// the parameters, plus the completed step count.
struct AdamState {
  MdanParams m, v;
  std::uint64_t step = 0;
};
AdamState make_adam_state(const MdanParams& params);

/// Raw dump of the optimizer state (64-bit moments) so an interrupted run
/// resumes on the uninterrupted trajectory. Pairs with the checkpoint file.
void save_train_state(const AdamState& state, const std::string& path);
AdamState load_train_state(const std::string& path, const MdanConfig& cfg);

struct TrainResult {
  MdanParams params;
  std::vector<double> loss_history;  // one entry per executed step
};

/// Fixed-rate Adam training on random patch pairs. Runs steps
/// [start, cfg.steps) where start comes from the resume state (0 for a
/// fresh run). Parameters are quantized through 32-bit floats after every
/// update, so (seed, config, data) fully determine the checkpoint bytes.
/// Aborts with NumericError if the loss turns non-finite.
TrainResult train(const MdanConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<Tensor>& rec_planes,
                  const std::vector<Tensor>& org_planes, std::ostream* log = nullptr,
                  const MdanParams* resume_params = nullptr,
                  const AdamState* resume_state = nullptr, AdamState* final_state = nullptr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  double tolerance = 1e-4;
  bool passed = false;
};

/// Central-difference verification of every parameter gradient of a reduced
/// network (C <= 8, one MDSA block) against the analytic backward pass.
GradCheckReport gradient_check(const MdanConfig& cfg, double tolerance = 1e-4,
                               std::uint64_t seed = 7, int input_size = 8);

}  // namespace mdan
