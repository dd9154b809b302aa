#include "rqpipe/resample.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rqpipe/error.hpp"
#include "rqpipe/omp_compat.hpp"

namespace rqpipe {

ResampleFilter ResampleFilter::lanczos(int a) {
  if (a < 1) throw ConfigError("Lanczos tap parameter must be >= 1, got " + std::to_string(a));
  return {Kind::Lanczos, a};
}

ResampleFilter ResampleFilter::parse(std::string_view text) {
  if (text == "nn" || text == "nearest") return nearest();
  if (text == "lanczos") return lanczos(3);
  constexpr std::string_view prefix = "lanczos:";
  if (text.starts_with(prefix)) {
    const auto digits = text.substr(prefix.size());
    int a = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), a);
    if (ec == std::errc{} && ptr == digits.data() + digits.size()) return lanczos(a);
  }
  throw ParseError("unknown filter '" + std::string(text) + "' (expected nn or lanczos:<a>)");
}

std::string ResampleFilter::to_string() const {
  return kind == Kind::NearestNeighbor ? "nn" : "lanczos:" + std::to_string(taps);
}

ScaleFactor::ScaleFactor(int numerator, int denominator) {
  if (numerator <= 0 || denominator <= 0) {
    throw ConfigError("scale factor terms must be positive, got " + std::to_string(numerator) + "/" +
                      std::to_string(denominator));
  }
  const int g = std::gcd(numerator, denominator);
  num_ = numerator / g;
  den_ = denominator / g;
}

ScaleFactor ScaleFactor::parse(std::string_view text) {
  auto to_int = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw ParseError("invalid scale factor '" + std::string(text) + "'");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return {to_int(text), 1};
  return {to_int(text.substr(0, slash)), to_int(text.substr(slash + 1))};
}

int ScaleFactor::apply(int length) const {
  const long long scaled = static_cast<long long>(length) * num_;
  if (scaled % den_ != 0) {
    throw DimensionError("length " + std::to_string(length) + " is not divisible under scale " + to_string() +
                         " (no implicit padding)");
  }
  return static_cast<int>(scaled / den_);
}

std::string ScaleFactor::to_string() const { return std::to_string(num_) + "/" + std::to_string(den_); }

double lanczos_weight(double x, int a) {
  const double ax = std::abs(x);
  if (ax == 0.0) return 1.0;
  if (ax >= a) return 0.0;
  if (ax == std::floor(ax)) return 0.0;  // zero crossings of sin(pi x)
  const double px = std::numbers::pi * ax;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

namespace {

double symmetric_sum(const std::vector<double>& w) {
  const std::size_t n = w.size();
  double acc = 0.0;
  for (std::size_t k = 0; k < n / 2; ++k) acc += w[k] + w[n - 1 - k];
  if (n % 2 == 1) acc += w[n / 2];
  return acc;
}

}  // namespace

std::vector<TapSet> compute_taps(int in_len, int out_len, const ResampleFilter& filter) {
  if (in_len <= 0 || out_len <= 0) throw DimensionError("resample lengths must be positive");
  std::vector<TapSet> taps(static_cast<std::size_t>(out_len));

  if (filter.kind == ResampleFilter::Kind::NearestNeighbor) {
    for (int i = 0; i < out_len; ++i) {
      taps[i].first = static_cast<int>(static_cast<long long>(i) * in_len / out_len);
      taps[i].weights = {1.0};
    }
    return taps;
  }

  const int a = filter.taps;
  const double scale = static_cast<double>(out_len) / in_len;
  const double filter_scale = std::min(scale, 1.0);
  const double support = a / filter_scale;

  for (int i = 0; i < out_len; ++i) {
    // (i + 0.5) / scale - 0.5, arranged so half-integer centres are exact.
    const double center = ((2.0 * i + 1.0) * in_len) / (2.0 * out_len) - 0.5;
    const int lo = static_cast<int>(std::ceil(center - support));
    const int hi = static_cast<int>(std::floor(center + support));

    auto raw = [&](int j) { return lanczos_weight((j - center) * filter_scale, a); };

    const int first = std::clamp(lo, 0, in_len - 1);
    const int last = std::clamp(hi, 0, in_len - 1);
    std::vector<double> w(static_cast<std::size_t>(last - first + 1), 0.0);
    for (int j = std::max(lo, 0); j <= std::min(hi, in_len - 1); ++j) w[j - first] = raw(j);
    // Clamp-to-edge: fold outside taps onto the edge sample, nearest first.
    for (int j = -1; j >= lo; --j) w.front() += raw(j);
    for (int j = in_len; j <= hi; ++j) w.back() += raw(j);

    const double sum = symmetric_sum(w);
    for (auto& v : w) v /= sum;
    taps[i] = {first, std::move(w)};
  }
  return taps;
}

double apply_taps(const TapSet& taps, const double* values, std::ptrdiff_t stride) {
  const auto& w = taps.weights;
  const std::size_t n = w.size();
  const double* v = values + static_cast<std::ptrdiff_t>(taps.first) * stride;
  double acc = 0.0;
  for (std::size_t k = 0; k < n / 2; ++k) {
    const std::size_t m = n - 1 - k;
    acc += w[k] * v[static_cast<std::ptrdiff_t>(k) * stride] + w[m] * v[static_cast<std::ptrdiff_t>(m) * stride];
  }
  if (n % 2 == 1) acc += w[n / 2] * v[static_cast<std::ptrdiff_t>(n / 2) * stride];
  return acc;
}

namespace {

std::uint16_t round_clamp(double v, int max) {
  const double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= max) return static_cast<std::uint16_t>(max);
  return static_cast<std::uint16_t>(r);
}

Plane nn_resample(const Plane& p, int out_w, int out_h) {
  Plane out(out_w, out_h, p.bit_depth);
  const long long in_w = p.width, in_h = p.height;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < out_h; ++y) {
    const int sy = static_cast<int>(y * in_h / out_h);
    for (int x = 0; x < out_w; ++x) {
      out.at(x, y) = p.at(static_cast<int>(x * in_w / out_w), sy);
    }
  }
  return out;
}

Plane lanczos_resample(const Plane& p, int out_w, int out_h, const ResampleFilter& filter) {
  const auto htaps = compute_taps(p.width, out_w, filter);
  const auto vtaps = compute_taps(p.height, out_h, filter);
  const int in_w = p.width, in_h = p.height;

  std::vector<double> tmp(static_cast<std::size_t>(out_w) * in_h);
#pragma omp parallel
  {
    std::vector<double> row(static_cast<std::size_t>(in_w));
#pragma omp for schedule(static)
    for (int y = 0; y < in_h; ++y) {
      const auto src = p.row(y);
      std::copy(src.begin(), src.end(), row.begin());
      double* dst = tmp.data() + static_cast<std::size_t>(y) * out_w;
      for (int x = 0; x < out_w; ++x) dst[x] = apply_taps(htaps[x], row.data(), 1);
    }
  }

  Plane out(out_w, out_h, p.bit_depth);
  const int max = p.max_value();
#pragma omp parallel for schedule(static)
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      out.at(x, y) = round_clamp(apply_taps(vtaps[y], tmp.data() + x, out_w), max);
    }
  }
  return out;
}

}  // namespace

Plane downsample_plane(const Plane& p, ScaleFactor factor, const ResampleFilter& filter) {
  if (!factor.is_downscale() && !factor.is_identity()) {
    throw ConfigError("downsample_plane needs a factor <= 1, got " + factor.to_string());
  }
  const int out_w = factor.apply(p.width);
  const int out_h = factor.apply(p.height);
  if (factor.is_identity()) return p;
  if (filter.kind == ResampleFilter::Kind::NearestNeighbor) return nn_resample(p, out_w, out_h);
  return lanczos_resample(p, out_w, out_h, filter);
}

Plane upsample_plane_nn(const Plane& p, ScaleFactor factor) {
  if (!factor.is_integral_upscale()) {
    throw ConfigError("nearest-neighbour upsampling needs an integral factor, got " + factor.to_string());
  }
  return nn_resample(p, factor.apply(p.width), factor.apply(p.height));
}

Plane resample_plane(const Plane& p, ScaleFactor factor, const ResampleFilter& filter) {
  if (factor.is_identity()) return p;
  if (factor.is_downscale()) return downsample_plane(p, factor, filter);
  if (filter.kind == ResampleFilter::Kind::NearestNeighbor) {
    if (factor.is_integral_upscale()) return upsample_plane_nn(p, factor);
    return nn_resample(p, factor.apply(p.width), factor.apply(p.height));
  }
  return lanczos_resample(p, factor.apply(p.width), factor.apply(p.height), filter);
}

Frame resample_frame(const Frame& frame, ScaleFactor factor, const ResampleFilter& down,
                     const ResampleFilter& up) {
  frame.validate();
  const ResampleFilter& filter = factor.is_downscale() ? down : up;
  Frame out;
  out.y = resample_plane(frame.y, factor, filter);
  if (frame.cb) {
    out.cb = resample_plane(*frame.cb, factor, filter);
    out.cr = resample_plane(*frame.cr, factor, filter);
  }
  out.validate();
  return out;
}

}  // namespace rqpipe
