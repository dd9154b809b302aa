#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rqpipe/frame_io.hpp"

namespace rqpipe::mock {

inline constexpr int kBlockSize = 8;
inline constexpr int kMinQp = 0;
inline constexpr int kMaxQp = 63;

// Quantiser step size, 2^((qp - 4) / 6).
double quant_step(int qp);

// Exp-Golomb style cost of one quantised level: 1 bit for zero, otherwise
// 2*floor(log2(2|v|)) + 1 plus a sign bit.
std::uint64_t level_bits(std::int32_t level);

// Quantised 8x8 DCT-II levels of a plane padded to a multiple of 8 by edge
// replication. Levels are stored block after block in raster order.
struct CodedPlane {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  int qp = 0;
  std::vector<std::int32_t> levels;
  std::uint64_t bits = 0;
};

struct CodedFrame {
  std::vector<CodedPlane> planes;  // y, then cb and cr when present
  std::uint64_t bits = 0;
};

CodedPlane encode_plane(const Plane& plane, int qp);
Plane decode_plane(const CodedPlane& coded);

std::vector<CodedFrame> encode_sequence(std::span<const Frame> frames, int qp);
std::vector<Frame> decode_sequence(std::span<const CodedFrame> coded);

struct CodecOutput {
  std::vector<Frame> decoded;
  std::uint64_t total_bits = 0;
};

// Deterministic encode + decode round trip.
CodecOutput mock_encode_decode(std::span<const Frame> frames, int qp);

namespace reference {

// Serial transform/quantise/reconstruct of one plane; same result as
// decode_plane(encode_plane(p, qp)) with the bit count alongside.
std::pair<Plane, std::uint64_t> code_plane_serial(const Plane& plane, int qp);

}  // namespace reference

}  // namespace rqpipe::mock
