#include <algorithm>

#include "rqpipe/cnn.hpp"
#include "rqpipe/error.hpp"
#include "rqpipe/omp_compat.hpp"

namespace rqpipe::cnn {

namespace {

void check_conv_shapes(const Tensor& x, const ConvWeights& w, int stride, int pad) {
  if (x.channels != w.in_ch) {
    throw ShapeError("conv2d expects " + std::to_string(w.in_ch) + " input channels, got " +
                     std::to_string(x.channels));
  }
  if (stride < 1 || pad < 0 || w.kernel < 1) throw ShapeError("conv2d needs stride >= 1, pad >= 0, kernel >= 1");
  if (x.height + 2 * pad < w.kernel || x.width + 2 * pad < w.kernel) {
    throw ShapeError("conv2d kernel " + std::to_string(w.kernel) + " exceeds padded input");
  }
  const auto expect = static_cast<std::size_t>(w.out_ch) * w.in_ch * w.kernel * w.kernel;
  if (w.weights.size() != expect || w.bias.size() != static_cast<std::size_t>(w.out_ch)) {
    throw ShapeError("conv2d weight/bias buffers do not match (out, in, k) = (" + std::to_string(w.out_ch) + ", " +
                     std::to_string(w.in_ch) + ", " + std::to_string(w.kernel) + ")");
  }
}

// One output channel. Every output pixel accumulates bias first, then taps in
// (in_ch, ky, kx) order, skipping taps that fall in the zero padding. The
// per-pixel order does not depend on where the pixel sits, which is what makes
// tiled inference bit-exact.
template <typename Acc>
void conv_channel(const Tensor& x, const ConvWeights& w, int stride, int pad, int oc, int out_h, int out_w,
                  std::vector<Acc>& acc, float* dst) {
  std::fill(acc.begin(), acc.end(), static_cast<Acc>(w.bias[oc]));
  const int k = w.kernel;
  for (int ic = 0; ic < x.channels; ++ic) {
    const float* src = x.values.data() + static_cast<std::size_t>(ic) * x.plane_size();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Acc wt = static_cast<Acc>(w.w(oc, ic, ky, kx));
        // ox range with 0 <= ox*stride + kx - pad < width
        const int hi_num = x.width - 1 - kx + pad;
        if (hi_num < 0) continue;
        const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
        const int ox_hi = std::min(out_w, hi_num / stride + 1);
        if (ox_lo >= ox_hi) continue;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.height) continue;
          const float* in_row = src + static_cast<std::size_t>(iy) * x.width;
          Acc* out_row = acc.data() + static_cast<std::size_t>(oy) * out_w;
          const int shift = kx - pad;
          if (stride == 1) {
            for (int ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wt * static_cast<Acc>(in_row[ox + shift]);
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wt * static_cast<Acc>(in_row[ox * stride + shift]);
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvWeights& weights, int stride, int pad, Precision precision) {
  check_conv_shapes(x, weights, stride, pad);
  const int out_h = (x.height + 2 * pad - weights.kernel) / stride + 1;
  const int out_w = (x.width + 2 * pad - weights.kernel) / stride + 1;
  Tensor out(weights.out_ch, out_h, out_w);
  const std::size_t n = out.plane_size();

#pragma omp parallel
  {
    std::vector<float> acc_f;
    std::vector<double> acc_d;
    if (precision == Precision::Single) acc_f.resize(n); else acc_d.resize(n);
#pragma omp for schedule(dynamic, 1)
    for (int oc = 0; oc < weights.out_ch; ++oc) {
      float* dst = out.values.data() + static_cast<std::size_t>(oc) * n;
      if (precision == Precision::Single) {
        conv_channel(x, weights, stride, pad, oc, out_h, out_w, acc_f, dst);
      } else {
        conv_channel(x, weights, stride, pad, oc, out_h, out_w, acc_d, dst);
      }
    }
  }
  return out;
}

namespace reference {

Tensor conv2d_serial(const Tensor& x, const ConvWeights& weights, int stride, int pad, Precision precision) {
  check_conv_shapes(x, weights, stride, pad);
  const int k = weights.kernel;
  const int out_h = (x.height + 2 * pad - k) / stride + 1;
  const int out_w = (x.width + 2 * pad - k) / stride + 1;
  Tensor out(weights.out_ch, out_h, out_w);
  for (int oc = 0; oc < weights.out_ch; ++oc) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc_d = weights.bias[oc];
        float acc_f = weights.bias[oc];
        for (int ic = 0; ic < x.channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= x.width) continue;
              const float w = weights.w(oc, ic, ky, kx);
              if (precision == Precision::Single) {
                acc_f += w * x.at(ic, iy, ix);
              } else {
                acc_d += static_cast<double>(w) * static_cast<double>(x.at(ic, iy, ix));
              }
            }
          }
        }
        out.at(oc, oy, ox) = precision == Precision::Single ? acc_f : static_cast<float>(acc_d);
      }
    }
  }
  return out;
}

}  // namespace reference

}  // namespace rqpipe::cnn
