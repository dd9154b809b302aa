#include <cmath>

#include "rqpipe/error.hpp"
#include "rqpipe/resample.hpp"

namespace rqpipe::reference {

Plane resample_plane_serial(const Plane& p, ScaleFactor factor, const ResampleFilter& filter) {
  const int out_w = factor.apply(p.width);
  const int out_h = factor.apply(p.height);
  const auto htaps = compute_taps(p.width, out_w, filter);
  const auto vtaps = compute_taps(p.height, out_h, filter);

  std::vector<double> src(p.samples.begin(), p.samples.end());
  std::vector<double> tmp(static_cast<std::size_t>(out_w) * p.height);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < out_w; ++x) {
      tmp[static_cast<std::size_t>(y) * out_w + x] =
          apply_taps(htaps[x], src.data() + static_cast<std::size_t>(y) * p.width, 1);
    }
  }

  Plane out(out_w, out_h, p.bit_depth);
  const double max = p.max_value();
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double v = std::floor(apply_taps(vtaps[y], tmp.data() + x, out_w) + 0.5);
      v = v < 0.0 ? 0.0 : (v > max ? max : v);
      out.at(x, y) = static_cast<std::uint16_t>(v);
    }
  }
  return out;
}

}  // namespace rqpipe::reference
