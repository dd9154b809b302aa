#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rqpipe {

struct RQPoint {
  double bitrate_kbps = 0.0;
  double quality = 0.0;
};

struct RQCurve {
  std::string label;
  std::string metric_id;
  std::vector<RQPoint> points;
};

enum class Interpolation {
  Pchip,           // monotone piecewise-cubic Hermite (Fritsch-Carlson slopes)
  CubicPolynomial  // least-squares third-order polynomial, the classic variant
};

std::string to_string(Interpolation i);
Interpolation parse_interpolation(std::string_view text);

struct BdResult {
  // Exactly one of these is set, depending on which statistic was computed.
  std::optional<double> delta_quality;       // test minus reference, metric units
  std::optional<double> delta_rate_percent;  // 100 * (10^mean_delta_log_rate - 1)
  // Integration interval: log10(kbps) for quality deltas, quality units for rate deltas.
  double overlap_lo = 0.0;
  double overlap_hi = 0.0;
  Interpolation interpolation = Interpolation::Pchip;
  std::vector<std::string> warnings;
};

// Monotone slopes at each knot. Needs at least 3 strictly increasing xs.
std::vector<double> pchip_slopes(std::span<const double> xs, std::span<const double> ys);

// Value of the piecewise-cubic Hermite interpolant at x (x inside the knot range).
double evaluate_interpolant(std::span<const double> xs, std::span<const double> ys,
                            std::span<const double> slopes, double x);

// Closed-form integral of the Hermite interpolant over [lo, hi].
double integrate_interpolant(std::span<const double> xs, std::span<const double> ys,
                             std::span<const double> slopes, double lo, double hi);

// Least-squares polynomial of the given degree; coefficients in ascending
// powers of (x - center).
struct Polynomial {
  double center = 0.0;
  std::vector<double> coeffs;
  double integrate(double lo, double hi) const;
  double operator()(double x) const;
};
Polynomial fit_polynomial(std::span<const double> xs, std::span<const double> ys, int degree);

// Average quality gap over the overlapping log-rate interval.
BdResult bd_quality(const RQCurve& reference, const RQCurve& test, Interpolation interp = Interpolation::Pchip);

// Average rate difference (percent) over the overlapping quality interval.
BdResult bd_rate(const RQCurve& reference, const RQCurve& test, Interpolation interp = Interpolation::Pchip);

// CSV with header "bitrate_kbps,quality".
RQCurve read_rq_csv(const std::filesystem::path& path, const std::string& metric_id = "quality");

}  // namespace rqpipe
