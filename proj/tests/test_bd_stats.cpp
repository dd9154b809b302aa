#include <doctest.h>

#include <cmath>
#include <random>

#include "rqpipe/bd_stats.hpp"
#include "rqpipe/error.hpp"
#include "test_util.hpp"

using namespace rqpipe;

namespace {

RQCurve curve(std::string label, std::vector<RQPoint> pts, std::string metric = "psnr_y") {
  return {std::move(label), std::move(metric), std::move(pts)};
}

// Composite trapezoid over n panels, using the library's evaluator.
double trapezoid(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<double>& m, double lo,
                 double hi, int n) {
  const double h = (hi - lo) / n;
  double s = 0.5 * (evaluate_interpolant(xs, ys, m, lo) + evaluate_interpolant(xs, ys, m, hi));
  for (int i = 1; i < n; ++i) s += evaluate_interpolant(xs, ys, m, lo + i * h);
  return s * h;
}

RQCurve random_curve(std::mt19937_64& rng, const std::string& label) {
  std::uniform_real_distribution<double> r0(500, 1500), step(1.4, 2.2), q0(28, 34), dq(1.0, 4.0);
  RQCurve c = curve(label, {});
  double rate = r0(rng), q = q0(rng);
  for (int i = 0; i < 4; ++i) {
    c.points.push_back({rate, q});
    rate *= step(rng);
    q += dq(rng);
  }
  return c;
}

}  // namespace

TEST_CASE("pchip slopes") {
  const std::vector<double> xs{0, 1, 2, 3}, lin{1, 3, 5, 7};
  for (double m : pchip_slopes(xs, lin)) CHECK(m == doctest::Approx(2.0).epsilon(1e-15));

  // Local maximum at the second knot.
  const auto peak = pchip_slopes(xs, std::vector<double>{0, 2, 1, 3});
  CHECK(peak[1] == 0.0);
  CHECK(peak[2] == 0.0);

  // Frozen from scipy.interpolate.PchipInterpolator.
  const auto m3 = pchip_slopes(std::vector<double>{0, 1, 2}, std::vector<double>{0, 1, 4});
  CHECK(m3[0] == doctest::Approx(0.0));
  CHECK(m3[1] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(m3[2] == doctest::Approx(4.0).epsilon(1e-15));

  const std::vector<double> x5{0, 0.7, 1.5, 2.1, 3.0}, y5{1.0, 3.0, 2.5, 4.0, 7.5};
  const auto m5 = pchip_slopes(x5, y5);
  const std::vector<double> scipy5{4.482142857142858, 0.0, 0.0, 3.0, 4.722222222222222};
  for (std::size_t i = 0; i < 5; ++i) CHECK(m5[i] == doctest::Approx(scipy5[i]).epsilon(1e-13));
  CHECK(integrate_interpolant(x5, y5, m5, 0.3, 2.8) == doctest::Approx(8.802329926973728).epsilon(1e-13));

  CHECK_THROWS_AS(pchip_slopes(std::vector<double>{0, 1, 1}, std::vector<double>{0, 1, 2}), ParseError);
  CHECK_THROWS_AS(pchip_slopes(std::vector<double>{0, 1}, std::vector<double>{0, 1}), ShapeError);
}

TEST_CASE("closed-form integral") {
  const std::vector<double> xs{0, 1, 2}, ys{1, 3, 5};
  const auto m = pchip_slopes(xs, ys);
  CHECK(integrate_interpolant(xs, ys, m, 0, 2) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(integrate_interpolant(xs, ys, m, 0.7, 0.7) == 0.0);
  CHECK_THROWS_AS(integrate_interpolant(xs, ys, m, -0.1, 1), RangeError);
  CHECK_THROWS_AS(integrate_interpolant(xs, ys, m, 0, 2.1), RangeError);

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> gap(0.2, 1.5), val(-5, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x{0.0}, y{val(rng)};
    for (int i = 1; i < 5; ++i) {
      x.push_back(x.back() + gap(rng));
      y.push_back(val(rng));
    }
    const auto s = pchip_slopes(x, y);
    const double exact = integrate_interpolant(x, y, s, x.front(), x.back());
    const double numeric = trapezoid(x, y, s, x.front(), x.back(), 100000);
    CHECK(std::abs(exact - numeric) <= 1e-6 * std::max(1.0, std::abs(exact)));
  }
}

TEST_CASE("interpolant passes through knots and never overshoots monotone data") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> gap(0.1, 2.0), rise(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x{0.0}, y{0.0};
    for (int i = 1; i < 6; ++i) {
      x.push_back(x.back() + gap(rng));
      y.push_back(y.back() + rise(rng));
    }
    const auto m = pchip_slopes(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(evaluate_interpolant(x, y, m, x[i]) == doctest::Approx(y[i]).epsilon(1e-14));
    double prev = y.front();
    for (int k = 0; k <= 2000; ++k) {
      const double v = evaluate_interpolant(x, y, m, x.front() + (x.back() - x.front()) * k / 2000.0);
      CHECK(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("bd_quality examples") {
  const auto ref = curve("ref", {{1000, 30}, {2000, 34}});
  const auto tst = curve("test", {{1000, 31}, {2000, 36}});
  const auto r = bd_quality(ref, tst);
  CHECK(*r.delta_quality == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_FALSE(r.warnings.empty());

  const auto four = curve("a", {{1000, 30.1}, {1800, 33.0}, {3300, 35.8}, {6000, 38.2}});
  CHECK(std::abs(*bd_quality(four, four).delta_quality) <= 1e-12);
  CHECK(bd_quality(four, four).warnings.empty());

  auto shifted = four;
  for (auto& p : shifted.points) p.quality += 2.5;
  CHECK(std::abs(*bd_quality(four, shifted).delta_quality - 2.5) <= 1e-9);

  // Frozen from scipy PchipInterpolator integrals.
  const auto other = curve("b", {{1000, 31.0}, {1800, 34.5}, {3300, 37.0}, {6000, 39.1}});
  CHECK(*bd_quality(four, other).delta_quality == doctest::Approx(1.2378268336732847).epsilon(1e-12));
}

TEST_CASE("bd_quality properties") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = random_curve(rng, "a");
    const auto b = random_curve(rng, "b");
    BdResult ab, ba;
    try {
      ab = bd_quality(a, b);
      ba = bd_quality(b, a);
    } catch (const RangeError&) {
      continue;  // disjoint rate ranges
    }
    CHECK(std::abs(*ab.delta_quality + *ba.delta_quality) <= 1e-12);

    auto a2 = a, b2 = b;
    for (auto& p : a2.points) p.bitrate_kbps *= 3.7;
    for (auto& p : b2.points) p.bitrate_kbps *= 3.7;
    CHECK(std::abs(*bd_quality(a2, b2).delta_quality - *ab.delta_quality) <= 1e-12);

    for (double delta : {0.5, 2.5, -3.0}) {
      auto s = a;
      for (auto& p : s.points) p.quality += delta;
      CHECK(std::abs(*bd_quality(a, s).delta_quality - delta) <= 1e-9);
      CHECK(std::abs(*bd_quality(a, s, Interpolation::CubicPolynomial).delta_quality - delta) <= 1e-9);
    }
  }
}

TEST_CASE("bd_quality errors") {
  const auto a = curve("a", {{100, 30}, {200, 32}, {300, 33}, {400, 34}});
  const auto far = curve("far", {{1000, 30}, {2000, 32}, {3000, 33}, {4000, 34}});
  CHECK_THROWS_AS(bd_quality(a, far), RangeError);
  CHECK_THROWS_AS(bd_quality(a, curve("v", a.points, "vmaf")), ConfigError);
  CHECK_THROWS_AS(bd_quality(a, curve("one", {{100, 30}})), ShapeError);
  CHECK_THROWS_AS(bd_quality(a, curve("dup", {{100, 30}, {100, 31}, {300, 33}})), RangeError);
  CHECK_THROWS_AS(bd_quality(a, curve("zero", {{0, 30}, {100, 31}})), RangeError);
}

TEST_CASE("cubic polynomial variant") {
  // Exact cubic data is reproduced exactly by a 4-point cubic fit.
  auto f = [](double x) { return 1.0 + 2.0 * x - 0.5 * x * x + 0.1 * x * x * x; };
  const std::vector<double> xs{0, 1, 2.5, 4};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(f(x));
  const auto p = fit_polynomial(xs, ys, 3);
  CHECK(p(1.7) == doctest::Approx(f(1.7)).epsilon(1e-12));
  // integral of f over [0, 4] = 4 + 16 - 32/3 + 6.4
  CHECK(p.integrate(0, 4) == doctest::Approx(4.0 + 16.0 - 32.0 / 3.0 + 6.4).epsilon(1e-12));
}

TEST_CASE("bd_rate") {
  const auto ref = curve("ref", {{1000, 30}, {1800, 33}, {3300, 35.5}, {6000, 38}});
  CHECK(std::abs(*bd_rate(ref, ref).delta_rate_percent) <= 1e-12);

  auto doubled = ref;
  for (auto& p : doubled.points) p.bitrate_kbps *= 2.0;
  const auto r = bd_rate(ref, doubled);
  CHECK(std::abs(*r.delta_rate_percent - 100.0) <= 1e-9);
  CHECK_FALSE(r.delta_quality.has_value());

  const auto disjoint = curve("hi", {{1000, 40}, {1800, 42}, {3300, 44}, {6000, 46}});
  CHECK_THROWS_AS(bd_rate(ref, disjoint), RangeError);

  const auto partial = curve("p", {{1000, 37}, {1800, 39}, {3300, 41}, {6000, 43}});
  const auto low = bd_rate(ref, partial);
  bool warned = false;
  for (const auto& w : low.warnings) warned |= w.find("50%") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("rq csv") {
  rqpipe::testing::TempDir dir;
  {
    std::ofstream out(dir / "a.csv");
    out << "bitrate_kbps,quality\n1000,30.5\n2000, 33.25\n\n";
  }
  const auto c = read_rq_csv(dir / "a.csv", "vmaf");
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[1].quality == 33.25);
  CHECK(c.metric_id == "vmaf");
  CHECK(c.label == "a");
  {
    std::ofstream out(dir / "b.csv");
    out << "bitrate_kbps,quality\n1000;30\n";
  }
  CHECK_THROWS_AS(read_rq_csv(dir / "b.csv"), ParseError);
}
