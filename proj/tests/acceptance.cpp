// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rqpipe/bd_stats.hpp"
#include "rqpipe/cnn.hpp"
#include "rqpipe/config.hpp"
#include "rqpipe/manifest.hpp"
#include "rqpipe/metrics.hpp"
#include "rqpipe/mock_codec.hpp"
#include "rqpipe/pipeline.hpp"
#include "rqpipe/report.hpp"
#include "rqpipe/resample.hpp"
#include "test_util.hpp"

using namespace rqpipe;
using namespace rqpipe::testing;
namespace fs = std::filesystem;

namespace {

// Collects failures for one criterion; the first few are reported.
struct Check {
  std::vector<std::string> failures;
  int count = 0;

  void operator()(bool ok, const std::string& what) {
    ++count;
    if (!ok) failures.push_back(what);
  }
  void close(double value, double expect, double tol, const std::string& what) {
    std::ostringstream s;
    s.precision(17);
    s << what << ": got " << value << ", expected " << expect << " (tol " << tol << ")";
    (*this)(std::abs(value - expect) <= tol, s.str());
  }
};

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void resampling(Check& check, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto lz = ResampleFilter::lanczos(3);

  double worst_unity = 0.0;
  for (int in : {2, 3, 4, 5, 8, 16, 17, 64, 1920}) {
    for (auto [num, den] : {std::pair{1, 2}, std::pair{2, 1}}) {
      const int out = in * num / den;
      if (out * den != in * num || out == 0) continue;
      for (const auto& t : compute_taps(in, out, lz)) {
        double sum = 0.0;
        for (double w : t.weights) sum += w;
        worst_unity = std::max(worst_unity, std::abs(sum - 1.0));
      }
    }
  }
  check(worst_unity <= 1e-12, "partition of unity off by " + fmt("%.3g", worst_unity));

  for (int depth : {8, 10}) {
    for (int c : {0, 1, 77, (1 << depth) - 1}) {
      const Plane p(16, 16, depth, static_cast<std::uint16_t>(c));
      const Plane d = downsample_plane(p, ScaleFactor(1, 2), lz);
      check(d == Plane(8, 8, depth, static_cast<std::uint16_t>(c)), "constant plane changed by downsampling");
      check(resample_plane(d, ScaleFactor(2, 1), lz) == p, "constant plane changed by lanczos upsampling");
    }
  }

  std::mt19937_64 rng(20);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int depth = i % 2 ? 10 : 8;
    const Plane p = random_plane(rng, 16, 16, depth);
    for (auto [f, ow] : {std::pair{ScaleFactor(1, 2), 8}, std::pair{ScaleFactor(2, 1), 32}}) {
      const Plane got = resample_plane(p, f, lz);
      const auto expect = oracle_direct(p, ow, ow, 3);
      for (std::size_t k = 0; k < expect.size(); ++k) {
        const double e = std::clamp(expect[k], 0.0, static_cast<double>(p.max_value()));
        worst = std::max(worst, std::abs(got.samples[k] - e));
      }
    }
    const Plane up = upsample_plane_nn(p, ScaleFactor(2, 1));
    bool dup = true;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) dup = dup && up.at(x, y) == p.at(x / 2, y / 2);
    }
    check(dup, "nearest-neighbour upsampling is not pure duplication");
  }
  check(worst <= 0.5 + 1e-9, "separable vs direct oracle differs by " + fmt("%.6f", worst) + " LSB");

  const double secs = seconds_since(t0);
  check(secs < 10.0, "took " + fmt("%.2f", secs) + " s");
  detail = "unity err " + fmt("%.2g", worst_unity) + ", oracle max " + fmt("%.4f", worst) + " LSB, " +
           fmt("%.2f", secs) + " s";
}

Frame luma(Plane p) {
  Frame f;
  f.y = std::move(p);
  return f;
}

void psnr(Check& check, std::string& detail) {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int depth = i % 2 ? 10 : 8;
    const Plane a = random_plane(rng, 64, 64, depth), b = random_plane(rng, 64, 64, depth);
    worst = std::max(worst, std::abs(psnr_y(luma(a), luma(b), depth) - naive_psnr(a, b, depth)));
  }
  check(worst <= 1e-9, "oracle deviation " + fmt("%.3g", worst) + " dB");

  const Plane base(64, 64, 8, 100);
  const double mse1 = psnr_y(luma(base), luma(Plane(64, 64, 8, 101)), 8);
  check.close(mse1, 48.1308, 1e-4, "8-bit MSE=1");
  for (int d : {2, 5, 30}) {
    const double expect = 10.0 * std::log10(255.0 * 255.0 / (d * d));
    check.close(psnr_y(luma(base), luma(Plane(64, 64, 8, static_cast<std::uint16_t>(100 + d))), 8), expect, 1e-4,
                "uniform difference " + std::to_string(d));
  }
  check.close(psnr_y(luma(Plane(64, 64, 10, 500)), luma(Plane(64, 64, 10, 501)), 10),
              10.0 * std::log10(1023.0 * 1023.0), 1e-4, "10-bit MSE=1");
  detail = "max oracle dev " + fmt("%.2g", worst) + " dB, MSE=1 gives " + fmt("%.4f", mse1) + " dB";
}

RQCurve curve(std::vector<double> rates, std::vector<double> q, const std::string& label) {
  RQCurve c;
  c.label = label;
  c.metric_id = "psnr_y";
  for (std::size_t i = 0; i < rates.size(); ++i) c.points.push_back({rates[i], q[i]});
  return c;
}

void bd(Check& check, std::string& detail) {
  const std::vector<double> r{800, 1500, 2900, 5600};
  const std::vector<double> q{31.2, 34.0, 36.5, 38.4};
  const auto ref = curve(r, q, "ref");
  // A differently shaped test curve on a partly overlapping rate range.
  const auto test = curve({650, 1300, 2600, 5000}, {31.9, 34.9, 37.2, 38.9}, "test");

  for (auto interp : {Interpolation::Pchip, Interpolation::CubicPolynomial}) {
    const std::string tag = std::string(" (") + to_string(interp) + ")";
    check(std::abs(*bd_quality(ref, ref, interp).delta_quality) <= 1e-12, "identity" + tag);
    check(std::abs(*bd_rate(ref, ref, interp).delta_rate_percent) <= 1e-12, "identity rate" + tag);
    for (double delta : {0.5, 2.5, -3.0}) {
      auto shifted = ref;
      for (auto& p : shifted.points) p.quality += delta;
      check.close(*bd_quality(ref, shifted, interp).delta_quality, delta, 1e-9, "shift" + tag);
    }
    const double fwd = *bd_quality(ref, test, interp).delta_quality;
    const double back = *bd_quality(test, ref, interp).delta_quality;
    check.close(fwd, -back, 1e-12, "antisymmetry" + tag);
    auto ref_s = ref, test_s = test;
    for (auto& p : ref_s.points) p.bitrate_kbps *= 3.7;
    for (auto& p : test_s.points) p.bitrate_kbps *= 3.7;
    check.close(*bd_quality(ref_s, test_s, interp).delta_quality, fwd, 1e-12, "rate scale invariance" + tag);

    auto doubled = ref;
    for (auto& p : doubled.points) p.bitrate_kbps *= 2.0;
    check.close(*bd_rate(ref, doubled, interp).delta_rate_percent, 100.0, 1e-9, "2x rate" + tag);
  }

  // Closed-form Hermite integral against a fine trapezoid rule.
  std::vector<double> xs;
  for (double v : r) xs.push_back(std::log10(v));
  const auto slopes = pchip_slopes(xs, q);
  const double lo = xs.front() + 0.05, hi = xs.back() - 0.02;
  const double exact = integrate_interpolant(xs, q, slopes, lo, hi);
  const int n = 100000;
  const double h = (hi - lo) / n;
  double trap = 0.5 * (evaluate_interpolant(xs, q, slopes, lo) + evaluate_interpolant(xs, q, slopes, hi));
  for (int i = 1; i < n; ++i) trap += evaluate_interpolant(xs, q, slopes, lo + i * h);
  trap *= h;
  const double rel = std::abs(exact - trap) / std::abs(trap);
  check(rel <= 1e-6, "quadrature relative error " + fmt("%.3g", rel));

  detail = "quadrature rel err " + fmt("%.2g", rel) + ", BD-quality of sample curve " +
           fmt("%.4f", *bd_quality(ref, test).delta_quality) + " dB";
}

void mock_codec(Check& check, std::string& detail) {
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const Frame f = luma(random_plane(rng, 32, 32, 8));
    std::uint64_t prev_bits = ~0ull;
    double prev_q = INFINITY;
    // Strictly decreasing on random content.
    for (int qp = 4; qp <= 51; ++qp) {
      const auto out = mock::mock_encode_decode(std::span<const Frame>(&f, 1), qp);
      const double q = psnr_y(f, out.decoded[0], 8);
      if (out.total_bits >= prev_bits || q >= prev_q) ++violations;
      prev_bits = out.total_bits;
      prev_q = q;
    }
    const auto a = mock::mock_encode_decode(std::span<const Frame>(&f, 1), 27);
    const auto b = mock::mock_encode_decode(std::span<const Frame>(&f, 1), 27);
    check(a.total_bits == b.total_bits && a.decoded == b.decoded, "re-run differs for seed " + std::to_string(seed));
  }
  check(violations == 0, std::to_string(violations) + " non-monotone QP steps");
  detail = "20 seeds x QP 4..51, " + std::to_string(violations) + " monotonicity violations, re-runs identical";
}

void cnn_inference(Check& check, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> ch(1, 8), sz(3, 20), kk(0, 2), st(1, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 * kk(rng) + 1, stride = st(rng), pad = std::uniform_int_distribution<int>(0, k / 2)(rng);
    const auto x = random_tensor(rng, ch(rng), std::max(sz(rng), k), std::max(sz(rng), k));
    const auto w = random_conv(rng, ch(rng), x.channels, k);
    const auto y = cnn::conv2d(x, w, stride, pad);
    const auto e = brute_conv(x, w, stride, pad);
    double scale = 1.0;
    for (double v : e) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, std::abs(y.values[i] - e[i]) / scale);
  }
  check(worst <= 1e-5, "conv2d relative error " + fmt("%.3g", worst));

  // Identity: a single 1x1 conv with unit weight; zero residual: a global
  // residual network whose weights are all zero.
  cnn::NetworkSpec id_net;
  id_net.layers.push_back({"c", cnn::Conv2DOp{1, 1, 1, 1, 0}, {"input"}});
  id_net.output_id = "c";
  cnn::WeightSet id_w{{"c", cnn::ConvWeights{1, 1, 1, {1.0f}, {0.0f}}}};
  auto zero_net = cnn::build_mfrnet_style(2, 2, 8, 4);
  auto zero_w = cnn::random_weights(zero_net, 5);
  for (auto& [name, cw] : zero_w) {
    std::fill(cw.weights.begin(), cw.weights.end(), 0.0f);
    std::fill(cw.bias.begin(), cw.bias.end(), 0.0f);
  }
  for (int depth : {8, 10}) {
    const Plane p = random_plane(rng, 37, 29, depth);
    check(cnn::apply_network(id_net, id_w, p) == p, "identity network changed the input");
    check(cnn::apply_network(zero_net, zero_w, p) == p, "zero-residual network changed the input");
  }

  const auto net = cnn::build_mfrnet_style(2, 2, 8, 4);
  const auto weights = cnn::random_weights(net, 9, 0.1f);
  const Plane p = random_plane(rng, 80, 72, 10);
  const Plane whole = cnn::apply_network(net, weights, p);
  const int radius = net.receptive_radius();
  for (int tile : {16, 24, 33}) {
    check(cnn::tiled_apply(net, weights, p, tile, radius) == whole, "tiled output differs at tile " +
                                                                        std::to_string(tile));
  }

  const auto big = cnn::build_mfrnet_style(4, 4, 32, 16);
  bool valid = true;
  try {
    big.validate();
  } catch (const std::exception& e) {
    valid = false;
    check(false, std::string("mfrnet(4) invalid: ") + e.what());
  }
  check(valid && big.block_count() == 4, "mfrnet(4) has " + std::to_string(big.block_count()) + " blocks");

  const double secs = seconds_since(t0);
  check(secs < 60.0, "took " + fmt("%.2f", secs) + " s");
  detail = "conv rel err " + fmt("%.2g", worst) + ", radius " + std::to_string(radius) + ", blocks " +
           std::to_string(big.block_count()) + ", " + fmt("%.2f", secs) + " s";
}

// One shared run feeds the schedule, end-to-end and dogfood criteria.
struct EndToEnd {
  TempDir dir;
  ExperimentConfig cfg;
  RunSummary summary;
  std::vector<JobRecord> manifest;
  ReportBundle report;
  double seconds = 0.0;
  std::string error;

  EndToEnd() {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cfg = parse_experiment(pipeline_fixture(dir.path(), 64, 64, 8), dir.path());
      summary = run_experiment(cfg);
      manifest = latest_records(read_manifest(summary.manifest_path));
      report = assemble_report(manifest, cfg.output_dir / "report", {cfg.anchor, cfg.interpolation});
    } catch (const std::exception& e) {
      error = e.what();
    }
    seconds = seconds_since(t0);
  }
};

EndToEnd& e2e() {
  static EndToEnd run;
  return run;
}

void qp_schedule(Check& check, std::string& detail) {
  auto& run = e2e();
  check(run.error.empty(), run.error);
  std::map<std::string, std::vector<int>> qps;
  for (const auto& r : run.manifest) qps[r.method].push_back(r.qp_texture);
  const std::vector<int> anchor{22, 27, 32, 37}, rescaled{16, 21, 26, 31};
  check(qps["Anchor"] == anchor, "Anchor texture QPs differ");
  check(qps["Re-scaled"] == rescaled, "Re-scaled texture QPs differ");
  check(qps["MFRNet"] == rescaled, "MFRNet texture QPs differ");
  auto show = [](const std::vector<int>& v) {
    std::string s;
    for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return "{" + s + "}";
  };
  detail = "Anchor " + show(qps["Anchor"]) + ", Re-scaled " + show(qps["Re-scaled"]);
}

void end_to_end(Check& check, std::string& detail) {
  auto& run = e2e();
  check(run.error.empty(), run.error);
  check(run.manifest.size() == 12, std::to_string(run.manifest.size()) + " manifest records");
  for (const auto& r : run.manifest) {
    check(r.ok() && std::isfinite(r.scores.at("psnr_y").sequence_value), "job " + r.key() + " incomplete");
  }
  check(run.report.rq_csvs.size() == 1 && fs::exists(run.report.rq_csvs.at(0)), "RQ CSV missing");

  // Total row parsed back from the CSV against the mean of the sequence rows.
  std::ifstream csv(run.report.bd_table_csv);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::size_t from = 0;
    for (std::size_t comma; (comma = line.find(',', from)) != std::string::npos; from = comma + 1) {
      cells.push_back(line.substr(from, comma - from));
    }
    cells.push_back(line.substr(from));
    rows.push_back(cells);
  }
  check(rows.size() >= 2 && rows.back().at(0) == "Total", "no Total row");
  check(!rows.empty() && rows.back().size() == 3, "BD table should have two method columns");
  std::string bd_values;
  for (std::size_t c = 1; !rows.empty() && c < rows.back().size(); ++c) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      if (!rows[i][c].empty()) {
        sum += std::stod(rows[i][c]);
        ++n;
      }
    }
    if (n == 0) {
      check(false, "column " + std::to_string(c) + " has no BD value, so there is no Total to compare");
      continue;
    }
    check.close(std::stod(rows.back()[c]), sum / n, 1e-9, "Total of column " + std::to_string(c));
    bd_values += (bd_values.empty() ? "" : ", ") + rows.back()[c];
  }
  for (const auto& w : run.report.warnings) check(false, w);

  const auto& text = run.report.timing.text;
  for (const std::string needle : {"encode ", "decode ", "decode-side ", "postprocess adds "}) {
    const auto pos = text.find(needle);
    check(pos != std::string::npos && text.find('%', pos) != std::string::npos,
          "timing report lacks a percentage for '" + needle + "'");
  }
  check(run.seconds < 120.0, "took " + fmt("%.1f", run.seconds) + " s");
  detail = std::to_string(run.manifest.size()) + " jobs, " + std::to_string(run.report.rq_csvs.size()) +
           " RQ CSV, BD Total (Re-scaled, MFRNet) [" + bd_values + "] dB, " + fmt("%.2f", run.seconds) + " s";
}

void dogfood(Check& check, std::string& detail) {
  auto& run = e2e();
  check(run.error.empty(), run.error);
  std::map<std::string, std::map<int, double>> kbps;
  for (const auto& r : run.manifest) kbps[r.method][r.qp_index] = r.bitrate_kbps;
  std::string ratios;
  for (int i = 0; i < 4; ++i) {
    const double a = kbps["Anchor"][i], s = kbps["Re-scaled"][i];
    check(s > 0.0 && s < a, "QP index " + std::to_string(i) + ": Re-scaled " + fmt("%.1f", s) + " vs Anchor " +
                                fmt("%.1f", a) + " kbps");
    ratios += (ratios.empty() ? "" : ", ") + fmt("%.2f", a > 0 ? s / a : 0.0);
  }
  detail = "Re-scaled/Anchor bitrate ratio per QP index " + ratios;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&, std::string&)>>> criteria{
      {"resampling", resampling},   {"psnr_y", psnr},           {"bd_statistics", bd},
      {"qp_schedule", qp_schedule}, {"mock_codec", mock_codec}, {"cnn_inference", cnn_inference},
      {"end_to_end", end_to_end},   {"dogfood_rate_shift", dogfood},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Check check;
    std::string detail;
    try {
      fn(check, detail);
    } catch (const std::exception& e) {
      check(false, std::string("exception: ") + e.what());
    }
    const bool pass = check.failures.empty();
    failed += !pass;
    std::printf("%s %-20s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    for (std::size_t i = 0; i < check.failures.size() && i < 5; ++i) {
      std::printf("     - %s\n", check.failures[i].c_str());
    }
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
