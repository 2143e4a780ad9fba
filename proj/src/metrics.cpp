#include "mdan/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace mdan {

namespace {

constexpr std::size_t kCurvePoints = 4;

// Interpolating cubic through 4 points, coefficients in ascending powers.
std::array<double, 4> fit_cubic(const std::array<double, 4>& x,
                                const std::array<double, 4>& y) {
  double a[4][5];
  for (int i = 0; i < 4; ++i) {
    double p = 1.0;
    for (int j = 0; j < 4; ++j) {
      a[i][j] = p;
      p *= x[i];
    }
    a[i][4] = y[i];
  }
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12)
      throw NumericError("bd fit: singular system (duplicate x values)");
    if (pivot != col)
      for (int j = 0; j < 5; ++j) std::swap(a[col][j], a[pivot][j]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int j = col; j < 5; ++j) a[r][j] -= f * a[col][j];
    }
  }
  return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]};
}

double integrate_cubic(const std::array<double, 4>& coef, double lo, double hi) {
  double acc = 0.0;
  double plo = 1.0, phi = 1.0;
  for (int k = 0; k < 4; ++k) {
    plo *= lo;
    phi *= hi;
    acc += coef[k] * (phi - plo) / (k + 1);
  }
  return acc;
}

struct FitAxes {
  std::array<double, 4> x, y;
};

FitAxes curve_axes(const RDCurve& c, bool rate_over_psnr) {
  FitAxes a{};
  for (std::size_t i = 0; i < kCurvePoints; ++i) {
    const double lr = std::log10(c.points[i].rate);
    const double ps = c.points[i].psnr;
    if (!std::isfinite(ps))
      throw NumericError("bd fit: non-finite PSNR in curve");
    a.x[i] = rate_over_psnr ? ps : lr;
    a.y[i] = rate_over_psnr ? lr : ps;
  }
  return a;
}

double bd_average_gap(const RDCurve& anchor, const RDCurve& test, bool rate_over_psnr) {
  const FitAxes fa = curve_axes(anchor, rate_over_psnr);
  const FitAxes ft = curve_axes(test, rate_over_psnr);
  const double lo = std::max(*std::min_element(fa.x.begin(), fa.x.end()),
                             *std::min_element(ft.x.begin(), ft.x.end()));
  const double hi = std::min(*std::max_element(fa.x.begin(), fa.x.end()),
                             *std::max_element(ft.x.begin(), ft.x.end()));
  if (!(hi > lo)) {
    std::ostringstream msg;
    msg << "bd fit: curves do not overlap on the "
        << (rate_over_psnr ? "PSNR" : "log10(rate)") << " axis: anchor ["
        << *std::min_element(fa.x.begin(), fa.x.end()) << ", "
        << *std::max_element(fa.x.begin(), fa.x.end()) << "] vs test ["
        << *std::min_element(ft.x.begin(), ft.x.end()) << ", "
        << *std::max_element(ft.x.begin(), ft.x.end()) << "]";
    throw NumericError(msg.str());
  }
  const double ia = integrate_cubic(fit_cubic(fa.x, fa.y), lo, hi);
  const double it = integrate_cubic(fit_cubic(ft.x, ft.y), lo, hi);
  return (it - ia) / (hi - lo);
}

}  // namespace

double mse_planes(const Plane& a, const Plane& b) {
  if (a.w != b.w || a.h != b.h) {
    throw InputError("psnr: plane dims differ, " + std::to_string(a.w) + "x" +
                     std::to_string(a.h) + " vs " + std::to_string(b.w) + "x" +
                     std::to_string(b.h));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.v.size());
}

double psnr(const Plane& a, const Plane& b, int bit_depth) {
  const double m = mse_planes(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  const double maxval = static_cast<double>((1 << bit_depth) - 1);
  return 10.0 * std::log10(maxval * maxval / m);
}

RDCurve RDCurve::from_points(std::vector<RDPoint> pts, std::vector<std::string>* warnings) {
  if (pts.size() != kCurvePoints) {
    throw InputError("rd curve: expected " + std::to_string(kCurvePoints) +
                     " points, got " + std::to_string(pts.size()));
  }
  for (const RDPoint& p : pts) {
    if (!(p.rate > 0.0))
      throw InputError("rd curve: rates must be positive, got " + std::to_string(p.rate));
  }
  std::sort(pts.begin(), pts.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.rate < b.rate; });
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (!(pts[i].rate > pts[i - 1].rate))
      throw InputError("rd curve: rates must be strictly increasing");
    if (warnings && pts[i].psnr < pts[i - 1].psnr) {
      std::ostringstream msg;
      msg << "rd curve: PSNR drops from " << pts[i - 1].psnr << " to " << pts[i].psnr
          << " while rate increases";
      warnings->push_back(msg.str());
    }
  }
  RDCurve c;
  c.points = std::move(pts);
  return c;
}

double bd_rate(const RDCurve& anchor, const RDCurve& test) {
  const double gap = bd_average_gap(anchor, test, /*rate_over_psnr=*/true);
  return (std::pow(10.0, gap) - 1.0) * 100.0;
}

double bd_psnr(const RDCurve& anchor, const RDCurve& test) {
  return bd_average_gap(anchor, test, /*rate_over_psnr=*/false);
}

double yuv_weighted(double y, double u, double v) { return (4.0 * y + u + v) / 6.0; }

}  // namespace mdan
