#include "rqpipe/error.hpp"
#include "rqpipe/metrics.hpp"

namespace rqpipe::reference {

double mse_plane_serial(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("plane size mismatch");
  if (a.samples.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double d = static_cast<double>(a.samples[i]) - static_cast<double>(b.samples[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.samples.size());
}

}  // namespace rqpipe::reference
