#include "rqpipe/mock_codec.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numbers>

#include "rqpipe/error.hpp"
#include "rqpipe/omp_compat.hpp"

namespace rqpipe::mock {

namespace {

using Block = std::array<double, kBlockSize * kBlockSize>;

// Orthonormal DCT-II basis, basis[k][n].
const std::array<std::array<double, kBlockSize>, kBlockSize>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, kBlockSize>, kBlockSize> c{};
    for (int k = 0; k < kBlockSize; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / kBlockSize) : std::sqrt(2.0 / kBlockSize);
      for (int n = 0; n < kBlockSize; ++n) {
        c[k][n] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / (2.0 * kBlockSize));
      }
    }
    return c;
  }();
  return basis;
}

// out = C * in * C^T
void forward_dct(const Block& in, Block& out) {
  const auto& c = dct_basis();
  Block tmp{};
  for (int k = 0; k < kBlockSize; ++k) {
    for (int x = 0; x < kBlockSize; ++x) {
      double s = 0.0;
      for (int n = 0; n < kBlockSize; ++n) s += c[k][n] * in[n * kBlockSize + x];
      tmp[k * kBlockSize + x] = s;
    }
  }
  for (int k = 0; k < kBlockSize; ++k) {
    for (int l = 0; l < kBlockSize; ++l) {
      double s = 0.0;
      for (int n = 0; n < kBlockSize; ++n) s += tmp[k * kBlockSize + n] * c[l][n];
      out[k * kBlockSize + l] = s;
    }
  }
}

// out = C^T * in * C
void inverse_dct(const Block& in, Block& out) {
  const auto& c = dct_basis();
  Block tmp{};
  for (int n = 0; n < kBlockSize; ++n) {
    for (int l = 0; l < kBlockSize; ++l) {
      double s = 0.0;
      for (int k = 0; k < kBlockSize; ++k) s += c[k][n] * in[k * kBlockSize + l];
      tmp[n * kBlockSize + l] = s;
    }
  }
  for (int n = 0; n < kBlockSize; ++n) {
    for (int m = 0; m < kBlockSize; ++m) {
      double s = 0.0;
      for (int l = 0; l < kBlockSize; ++l) s += tmp[n * kBlockSize + l] * c[l][m];
      out[n * kBlockSize + m] = s;
    }
  }
}

void check_qp(int qp) {
  if (qp < kMinQp || qp > kMaxQp) {
    throw RangeError("mock codec QP must be in [" + std::to_string(kMinQp) + ", " + std::to_string(kMaxQp) +
                     "], got " + std::to_string(qp));
  }
}

int padded(int n) { return (n + kBlockSize - 1) / kBlockSize * kBlockSize; }

// Loads block (bx, by) with edge replication, centred around zero.
void load_block(const Plane& p, int bx, int by, Block& blk) {
  const double mid = 1 << (p.bit_depth - 1);
  for (int y = 0; y < kBlockSize; ++y) {
    const int sy = std::min(by * kBlockSize + y, p.height - 1);
    for (int x = 0; x < kBlockSize; ++x) {
      const int sx = std::min(bx * kBlockSize + x, p.width - 1);
      blk[y * kBlockSize + x] = p.at(sx, sy) - mid;
    }
  }
}

std::uint64_t quantise_block(const Block& coef, double step, std::int32_t* levels) {
  std::uint64_t bits = 0;
  for (int i = 0; i < kBlockSize * kBlockSize; ++i) {
    levels[i] = static_cast<std::int32_t>(std::llround(coef[i] / step));
    bits += level_bits(levels[i]);
  }
  return bits;
}

void reconstruct_block(const std::int32_t* levels, double step, int bx, int by, Plane& out) {
  Block coef{}, pix{};
  for (int i = 0; i < kBlockSize * kBlockSize; ++i) coef[i] = levels[i] * step;
  inverse_dct(coef, pix);
  const double mid = 1 << (out.bit_depth - 1);
  const double max = out.max_value();
  for (int y = 0; y < kBlockSize; ++y) {
    const int oy = by * kBlockSize + y;
    if (oy >= out.height) break;
    for (int x = 0; x < kBlockSize; ++x) {
      const int ox = bx * kBlockSize + x;
      if (ox >= out.width) break;
      const double v = std::floor(pix[y * kBlockSize + x] + mid + 0.5);
      out.at(ox, oy) = static_cast<std::uint16_t>(std::clamp(v, 0.0, max));
    }
  }
}

}  // namespace

double quant_step(int qp) { return std::pow(2.0, (qp - 4) / 6.0); }

std::uint64_t level_bits(std::int32_t level) {
  if (level == 0) return 1;
  const std::uint64_t mag2 = 2ull * static_cast<std::uint64_t>(std::abs(static_cast<std::int64_t>(level)));
  const std::uint64_t floor_log2 = static_cast<std::uint64_t>(std::bit_width(mag2)) - 1;
  return 2 * floor_log2 + 1 + 1;
}

CodedPlane encode_plane(const Plane& plane, int qp) {
  check_qp(qp);
  CodedPlane coded;
  coded.width = plane.width;
  coded.height = plane.height;
  coded.bit_depth = plane.bit_depth;
  coded.qp = qp;
  const int bw = padded(plane.width) / kBlockSize;
  const int bh = padded(plane.height) / kBlockSize;
  const int blocks = bw * bh;
  coded.levels.resize(static_cast<std::size_t>(blocks) * kBlockSize * kBlockSize);
  const double step = quant_step(qp);

  std::uint64_t bits = 0;
#pragma omp parallel for reduction(+ : bits) schedule(static)
  for (int b = 0; b < blocks; ++b) {
    Block pix{}, coef{};
    load_block(plane, b % bw, b / bw, pix);
    forward_dct(pix, coef);
    bits += quantise_block(coef, step, coded.levels.data() + static_cast<std::size_t>(b) * kBlockSize * kBlockSize);
  }
  coded.bits = bits;
  return coded;
}

Plane decode_plane(const CodedPlane& coded) {
  check_qp(coded.qp);
  Plane out(coded.width, coded.height, coded.bit_depth);
  const int bw = padded(coded.width) / kBlockSize;
  const int blocks = bw * (padded(coded.height) / kBlockSize);
  if (coded.levels.size() != static_cast<std::size_t>(blocks) * kBlockSize * kBlockSize) {
    throw ShapeError("coded plane holds " + std::to_string(coded.levels.size()) + " levels, expected " +
                     std::to_string(blocks * kBlockSize * kBlockSize));
  }
  const double step = quant_step(coded.qp);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    reconstruct_block(coded.levels.data() + static_cast<std::size_t>(b) * kBlockSize * kBlockSize, step, b % bw,
                      b / bw, out);
  }
  return out;
}

std::vector<CodedFrame> encode_sequence(std::span<const Frame> frames, int qp) {
  std::vector<CodedFrame> coded;
  coded.reserve(frames.size());
  for (const auto& f : frames) {
    CodedFrame cf;
    f.for_each_plane([&](const Plane& p) {
      cf.planes.push_back(encode_plane(p, qp));
      cf.bits += cf.planes.back().bits;
    });
    coded.push_back(std::move(cf));
  }
  return coded;
}

std::vector<Frame> decode_sequence(std::span<const CodedFrame> coded) {
  std::vector<Frame> frames;
  frames.reserve(coded.size());
  for (const auto& cf : coded) {
    if (cf.planes.size() != 1 && cf.planes.size() != 3) throw ShapeError("coded frame must hold 1 or 3 planes");
    Frame f;
    f.y = decode_plane(cf.planes[0]);
    if (cf.planes.size() == 3) {
      f.cb = decode_plane(cf.planes[1]);
      f.cr = decode_plane(cf.planes[2]);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

CodecOutput mock_encode_decode(std::span<const Frame> frames, int qp) {
  const auto coded = encode_sequence(frames, qp);
  CodecOutput out;
  for (const auto& cf : coded) out.total_bits += cf.bits;
  out.decoded = decode_sequence(coded);
  return out;
}

namespace reference {

std::pair<Plane, std::uint64_t> code_plane_serial(const Plane& plane, int qp) {
  check_qp(qp);
  const double step = quant_step(qp);
  Plane out(plane.width, plane.height, plane.bit_depth);
  std::uint64_t bits = 0;
  std::array<std::int32_t, kBlockSize * kBlockSize> levels{};
  for (int by = 0; by < padded(plane.height) / kBlockSize; ++by) {
    for (int bx = 0; bx < padded(plane.width) / kBlockSize; ++bx) {
      Block pix{}, coef{};
      load_block(plane, bx, by, pix);
      forward_dct(pix, coef);
      bits += quantise_block(coef, step, levels.data());
      reconstruct_block(levels.data(), step, bx, by, out);
    }
  }
  return {std::move(out), bits};
}

}  // namespace reference

}  // namespace rqpipe::mock
