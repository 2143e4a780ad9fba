#pragma once

#include <string>
#include <vector>

#include "mdan/frame.hpp"

namespace mdan {

double mse_planes(const Plane& a, const Plane& b);

/// 10 log10(MAX^2 / MSE) with MAX = 2^bit_depth - 1. Identical planes give
/// the +infinity sentinel rather than an error.
double psnr(const Plane& a, const Plane& b, int bit_depth);

struct RDPoint {
  double rate = 0.0;  // any consistent unit (kbps or bpp)
  double psnr = 0.0;  // dB
};

/// One rate-distortion curve: exactly four points, one per QP, kept sorted
/// by strictly increasing rate. Non-monotonic PSNR is reported through the
/// warnings list, never silently fixed.
struct RDCurve {
  std::vector<RDPoint> points;
  static RDCurve from_points(std::vector<RDPoint> pts,
                             std::vector<std::string>* warnings = nullptr);
};

/// Bjontegaard delta rate in percent (negative = test saves bits), classic
/// cubic-polynomial fit of log10(rate) over PSNR, averaged over the
/// overlapping PSNR interval.
double bd_rate(const RDCurve& anchor, const RDCurve& test);

/// Bjontegaard delta PSNR in dB (positive = test gains quality), cubic fit
/// of PSNR over log10(rate), averaged over the overlapping log-rate interval.
double bd_psnr(const RDCurve& anchor, const RDCurve& test);

/// 4:1:1 component weighting: (4y + u + v) / 6.
double yuv_weighted(double y, double u, double v);

}  // namespace mdan
