#include "rqpipe/bd_stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rqpipe/error.hpp"

namespace rqpipe {

std::string to_string(Interpolation i) { return i == Interpolation::Pchip ? "pchip" : "cubic"; }

Interpolation parse_interpolation(std::string_view text) {
  if (text == "pchip") return Interpolation::Pchip;
  if (text == "cubic" || text == "polynomial") return Interpolation::CubicPolynomial;
  throw ParseError("unknown interpolation '" + std::string(text) + "' (expected pchip or cubic)");
}

namespace {

int sign(double v) { return (v > 0.0) - (v < 0.0); }

void require_increasing(std::span<const double> xs) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i] > xs[i - 1])) {
      throw ParseError("knots must be strictly increasing (x[" + std::to_string(i - 1) + "]=" +
                       std::to_string(xs[i - 1]) + ", x[" + std::to_string(i) + "]=" + std::to_string(xs[i]) + ")");
    }
  }
}

// Endpoint slope: one-sided three-point estimate, then clamped so the
// interpolant stays monotone on the end interval.
double end_slope(double h0, double h1, double d0, double d1) {
  double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
  if (sign(m) != sign(d0)) {
    m = 0.0;
  } else if (sign(d0) != sign(d1) && std::abs(m) > std::abs(3.0 * d0)) {
    m = 3.0 * d0;
  }
  return m;
}

}  // namespace

std::vector<double> pchip_slopes(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("xs and ys differ in length");
  if (xs.size() < 3) throw ShapeError("monotone cubic slopes need at least 3 knots");
  require_increasing(xs);

  const std::size_t n = xs.size();
  std::vector<double> h(n - 1), d(n - 1), m(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = xs[k + 1] - xs[k];
    d[k] = (ys[k + 1] - ys[k]) / h[k];
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (d[k - 1] * d[k] <= 0.0) continue;
    const double w1 = 2.0 * h[k] + h[k - 1];
    const double w2 = h[k] + 2.0 * h[k - 1];
    m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
  }
  m[0] = end_slope(h[0], h[1], d[0], d[1]);
  m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  return m;
}

namespace {

std::size_t segment_of(std::span<const double> xs, double x) {
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const auto idx = static_cast<std::size_t>(std::distance(xs.begin(), it));
  return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, xs.size() - 2);
}

// Antiderivative (in t) of the Hermite segment, t in [0, 1].
double hermite_antiderivative(double t, double y0, double y1, double hm0, double hm1) {
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
  return y0 * (t - t3 + 0.5 * t4) + hm0 * (0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2) + y1 * (t3 - 0.5 * t4) +
         hm1 * (0.25 * t4 - t3 / 3.0);
}

}  // namespace

double evaluate_interpolant(std::span<const double> xs, std::span<const double> ys, std::span<const double> slopes,
                            double x) {
  const std::size_t k = segment_of(xs, x);
  const double h = xs[k + 1] - xs[k];
  const double t = (x - xs[k]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * ys[k] + (t3 - 2 * t2 + t) * h * slopes[k] + (-2 * t3 + 3 * t2) * ys[k + 1] +
         (t3 - t2) * h * slopes[k + 1];
}

double integrate_interpolant(std::span<const double> xs, std::span<const double> ys, std::span<const double> slopes,
                             double lo, double hi) {
  if (xs.size() < 2 || xs.size() != ys.size() || xs.size() != slopes.size()) {
    throw ShapeError("interpolant needs matching knots, values and slopes (at least 2)");
  }
  if (lo < xs.front() || hi > xs.back() || lo > hi) {
    throw RangeError("integration bounds [" + std::to_string(lo) + ", " + std::to_string(hi) +
                     "] fall outside knot range [" + std::to_string(xs.front()) + ", " +
                     std::to_string(xs.back()) + "]");
  }
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double a = std::max(lo, xs[k]);
    const double b = std::min(hi, xs[k + 1]);
    if (!(a < b)) continue;
    const double h = xs[k + 1] - xs[k];
    const double ta = (a - xs[k]) / h;
    const double tb = (b - xs[k]) / h;
    const double hm0 = h * slopes[k], hm1 = h * slopes[k + 1];
    total += h * (hermite_antiderivative(tb, ys[k], ys[k + 1], hm0, hm1) -
                  hermite_antiderivative(ta, ys[k], ys[k + 1], hm0, hm1));
  }
  return total;
}

double Polynomial::operator()(double x) const {
  double v = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) v = v * (x - center) + *it;
  return v;
}

double Polynomial::integrate(double lo, double hi) const {
  auto primitive = [&](double x) {
    const double u = x - center;
    double v = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 0;) v = v * u + coeffs[i] / static_cast<double>(i + 1);
    return v * u;
  };
  return primitive(hi) - primitive(lo);
}

Polynomial fit_polynomial(std::span<const double> xs, std::span<const double> ys, int degree) {
  if (xs.size() != ys.size() || xs.size() < static_cast<std::size_t>(degree + 1)) {
    throw ShapeError("polynomial fit of degree " + std::to_string(degree) + " needs " +
                     std::to_string(degree + 1) + " points");
  }
  Polynomial p;
  for (double x : xs) p.center += x;
  p.center /= static_cast<double>(xs.size());

  // Normal equations in the centred variable, solved with partial pivoting.
  const int n = degree + 1;
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const double u = xs[s] - p.center;
    std::vector<double> pw(2 * n, 1.0);
    for (int i = 1; i < 2 * n; ++i) pw[i] = pw[i - 1] * u;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) a[r][c] += pw[r + c];
      a[r][n] += pw[r] * ys[s];
    }
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    if (a[col][col] == 0.0) throw RangeError("singular polynomial fit");
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  p.coeffs.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double v = a[r][n];
    for (int c = r + 1; c < n; ++c) v -= a[r][c] * p.coeffs[c];
    p.coeffs[r] = v / a[r][r];
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

struct Samples {
  std::vector<double> xs;
  std::vector<double> ys;
};

// One fitted curve; integrates over any sub-interval of its knot range.
class CurveFit {
 public:
  CurveFit(Samples s, Interpolation interp, const std::string& label, std::vector<std::string>& warnings)
      : s_(std::move(s)), interp_(interp) {
    const std::size_t n = s_.xs.size();
    if (n < 4) {
      warnings.push_back("curve '" + label + "' has " + std::to_string(n) + " points (4 expected); fit is degraded");
    }
    if (n == 2) {
      warnings.push_back("curve '" + label + "' uses linear interpolation between its 2 points");
      const double slope = (s_.ys[1] - s_.ys[0]) / (s_.xs[1] - s_.xs[0]);
      slopes_ = {slope, slope};
      interp_ = Interpolation::Pchip;
    } else if (interp_ == Interpolation::Pchip) {
      slopes_ = pchip_slopes(s_.xs, s_.ys);
    } else {
      poly_ = fit_polynomial(s_.xs, s_.ys, static_cast<int>(std::min<std::size_t>(3, n - 1)));
    }
  }

  double lo() const { return s_.xs.front(); }
  double hi() const { return s_.xs.back(); }

  double integrate(double a, double b) const {
    if (interp_ == Interpolation::Pchip) return integrate_interpolant(s_.xs, s_.ys, slopes_, a, b);
    return poly_.integrate(a, b);
  }

 private:
  Samples s_;
  Interpolation interp_;
  std::vector<double> slopes_;
  Polynomial poly_;
};

void check_points(const RQCurve& c) {
  if (c.points.size() < 2) {
    throw ShapeError("curve '" + c.label + "' needs at least 2 points, has " + std::to_string(c.points.size()));
  }
  for (const auto& p : c.points) {
    if (!(p.bitrate_kbps > 0.0) || !std::isfinite(p.bitrate_kbps)) {
      throw RangeError("curve '" + c.label + "' has non-positive bitrate " + std::to_string(p.bitrate_kbps));
    }
    if (!std::isfinite(p.quality)) throw RangeError("curve '" + c.label + "' has a non-finite quality value");
  }
}

// x = log10(rate), y = quality, sorted by rate.
Samples rate_axis(const RQCurve& c) {
  check_points(c);
  auto pts = c.points;
  std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.bitrate_kbps < b.bitrate_kbps; });
  Samples s;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0 && pts[i].bitrate_kbps == pts[i - 1].bitrate_kbps) {
      throw RangeError("curve '" + c.label + "' has duplicate bitrate " + std::to_string(pts[i].bitrate_kbps));
    }
    s.xs.push_back(std::log10(pts[i].bitrate_kbps));
    s.ys.push_back(pts[i].quality);
  }
  return s;
}

// x = quality, y = log10(rate), sorted by quality.
Samples quality_axis(const RQCurve& c) {
  check_points(c);
  auto pts = c.points;
  std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.quality < b.quality; });
  Samples s;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0 && pts[i].quality == pts[i - 1].quality) {
      throw RangeError("curve '" + c.label + "' has duplicate quality " + std::to_string(pts[i].quality));
    }
    s.xs.push_back(pts[i].quality);
    s.ys.push_back(std::log10(pts[i].bitrate_kbps));
  }
  return s;
}

void check_metric(const RQCurve& reference, const RQCurve& test) {
  if (reference.metric_id != test.metric_id) {
    throw ConfigError("metric mismatch: reference '" + reference.metric_id + "' vs test '" + test.metric_id + "'");
  }
}

std::string range_text(double lo, double hi) { return "[" + std::to_string(lo) + ", " + std::to_string(hi) + "]"; }

}  // namespace

BdResult bd_quality(const RQCurve& reference, const RQCurve& test, Interpolation interp) {
  check_metric(reference, test);
  BdResult r;
  r.interpolation = interp;
  const CurveFit ref(rate_axis(reference), interp, reference.label, r.warnings);
  const CurveFit tst(rate_axis(test), interp, test.label, r.warnings);
  r.overlap_lo = std::max(ref.lo(), tst.lo());
  r.overlap_hi = std::min(ref.hi(), tst.hi());
  if (!(r.overlap_lo < r.overlap_hi)) {
    throw RangeError("log10-rate ranges do not overlap: reference '" + reference.label + "' " +
                     range_text(ref.lo(), ref.hi()) + ", test '" + test.label + "' " + range_text(tst.lo(), tst.hi()));
  }
  const double width = r.overlap_hi - r.overlap_lo;
  r.delta_quality = (tst.integrate(r.overlap_lo, r.overlap_hi) - ref.integrate(r.overlap_lo, r.overlap_hi)) / width;
  return r;
}

BdResult bd_rate(const RQCurve& reference, const RQCurve& test, Interpolation interp) {
  check_metric(reference, test);
  BdResult r;
  r.interpolation = interp;
  const CurveFit ref(quality_axis(reference), interp, reference.label, r.warnings);
  const CurveFit tst(quality_axis(test), interp, test.label, r.warnings);
  r.overlap_lo = std::max(ref.lo(), tst.lo());
  r.overlap_hi = std::min(ref.hi(), tst.hi());
  if (!(r.overlap_lo < r.overlap_hi)) {
    throw RangeError("quality ranges do not overlap (rate delta would need extrapolation): reference '" +
                     reference.label + "' " + range_text(ref.lo(), ref.hi()) + ", test '" + test.label + "' " +
                     range_text(tst.lo(), tst.hi()));
  }
  const double width = r.overlap_hi - r.overlap_lo;
  if (width < 0.5 * (ref.hi() - ref.lo()) || width < 0.5 * (tst.hi() - tst.lo())) {
    r.warnings.push_back("quality overlap " + range_text(r.overlap_lo, r.overlap_hi) +
                         " covers less than 50% of a curve's span; the rate delta is unreliable");
  }
  const double delta_log = (tst.integrate(r.overlap_lo, r.overlap_hi) - ref.integrate(r.overlap_lo, r.overlap_hi)) / width;
  r.delta_rate_percent = 100.0 * (std::pow(10.0, delta_log) - 1.0);
  return r;
}

RQCurve read_rq_csv(const std::filesystem::path& path, const std::string& metric_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  RQCurve curve;
  curve.label = path.stem().string();
  curve.metric_id = metric_id;

  auto parse = [&](std::string s, std::size_t line_no) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": invalid number '" + s + "'");
    }
    return v;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line_no == 1 && line.find("bitrate") != std::string::npos) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    curve.points.push_back({parse(line.substr(0, comma), line_no), parse(line.substr(comma + 1), line_no)});
  }
  return curve;
}

}  // namespace rqpipe
