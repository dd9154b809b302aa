#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rqpipe/frame_io.hpp"

namespace rqpipe {

struct ResampleFilter {
  enum class Kind { Lanczos, NearestNeighbor };

  Kind kind = Kind::Lanczos;
  int taps = 3;  // Lanczos `a`; ignored for nearest neighbour

  static ResampleFilter lanczos(int a = 3);
  static ResampleFilter nearest() { return {Kind::NearestNeighbor, 0}; }

  // "lanczos", "lanczos:<a>" or "nn".
  static ResampleFilter parse(std::string_view text);
  std::string to_string() const;

  bool operator==(const ResampleFilter&) const = default;
};

// Output/input size ratio, kept in lowest terms.
class ScaleFactor {
 public:
  ScaleFactor() = default;
  ScaleFactor(int numerator, int denominator);

  static ScaleFactor parse(std::string_view text);  // "1/2", "2/1", "2"

  int numerator() const { return num_; }
  int denominator() const { return den_; }
  double value() const { return static_cast<double>(num_) / den_; }
  bool is_identity() const { return num_ == den_; }
  bool is_downscale() const { return num_ < den_; }
  bool is_integral_upscale() const { return den_ == 1 && num_ >= 1; }
  ScaleFactor inverse() const { return {den_, num_}; }

  // Throws DimensionError unless length * num / den is an integer.
  int apply(int length) const;

  std::string to_string() const;
  bool operator==(const ScaleFactor&) const = default;

 private:
  int num_ = 1;
  int den_ = 1;
};

// Windowed sinc: a*sin(pi x)*sin(pi x / a) / (pi^2 x^2) on (-a, a), 1 at 0.
double lanczos_weight(double x, int a);

// Filter taps for one output sample: weights over the contiguous input range
// [first, first + weights.size()).
struct TapSet {
  int first = 0;
  std::vector<double> weights;
};

// Per-output-sample taps for a 1-D resampling of in_len samples to out_len.
// Source centre of output i is (i + 0.5) / scale - 0.5; for downscaling the
// kernel is stretched by 1/scale. Out-of-range taps are clamped to the edge
// sample and every tap set is renormalised to sum to 1.
std::vector<TapSet> compute_taps(int in_len, int out_len, const ResampleFilter& filter);

// Weighted sum of `values` under `taps`, accumulated in mirror-symmetric pairs
// so a reversed signal under reversed taps gives the identical double.
double apply_taps(const TapSet& taps, const double* values, std::ptrdiff_t stride);

// Separable downscale (horizontal then vertical) in double precision with a
// single final rounding. Nearest neighbour picks the top-left source sample.
Plane downsample_plane(const Plane& p, ScaleFactor factor, const ResampleFilter& filter);

// Exact sample duplication by an integral factor.
Plane upsample_plane_nn(const Plane& p, ScaleFactor factor);

// Any direction; dispatches to the two above, or runs the Lanczos path for
// upscaling when asked.
Plane resample_plane(const Plane& p, ScaleFactor factor, const ResampleFilter& filter);

// Picks `down` for factor < 1 and `up` for factor > 1, and applies it to luma
// and both chroma planes (chroma keeps the half-of-luma relation).
Frame resample_frame(const Frame& frame, ScaleFactor factor, const ResampleFilter& down,
                     const ResampleFilter& up);

namespace reference {

// Single-threaded versions of the OpenMP kernels above. Same weights and the
// same arithmetic order, so results are bit-identical.
Plane resample_plane_serial(const Plane& p, ScaleFactor factor, const ResampleFilter& filter);

}  // namespace reference

}  // namespace rqpipe
