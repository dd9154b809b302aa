#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rqpipe {

enum class Chroma { C420, C400 };

std::string to_string(Chroma c);

// Geometry and sample format of a raw planar sequence.
struct VideoSpec {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  Chroma chroma = Chroma::C420;
  int frame_count = 0;
  std::string label;

  // Throws DimensionError / RangeError when the invariants do not hold.
  void validate() const;

  int max_value() const { return (1 << bit_depth) - 1; }
  int container_bytes() const { return bit_depth > 8 ? 2 : 1; }

  // "WxH:bitdepth:chroma", chroma in {420, 400}. frame_count is left at 0.
  static VideoSpec parse(std::string_view text);
  std::string to_string() const;
};

std::uint64_t frame_size_bytes(const VideoSpec& spec);

// One raster of samples. bit_depth is carried so kernels can clamp.
struct Plane {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;

  Plane() = default;
  Plane(int w, int h, int depth, std::uint16_t fill = 0)
      : width(w), height(h), bit_depth(depth),
        samples(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint16_t& at(int x, int y) { return samples[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
  std::span<const std::uint16_t> row(int y) const {
    return {samples.data() + static_cast<std::size_t>(y) * width, static_cast<std::size_t>(width)};
  }
  int max_value() const { return (1 << bit_depth) - 1; }

  bool operator==(const Plane&) const = default;
};

struct Frame {
  Plane y;
  std::optional<Plane> cb;
  std::optional<Plane> cr;

  Chroma chroma() const { return cb ? Chroma::C420 : Chroma::C400; }
  int width() const { return y.width; }
  int height() const { return y.height; }
  int bit_depth() const { return y.bit_depth; }

  // Blank frame matching the spec geometry, every sample set to `fill`.
  static Frame blank(const VideoSpec& spec, std::uint16_t fill = 0);
  // Visits y, cb, cr (those present) in file order.
  void for_each_plane(const std::function<void(Plane&)>& fn);
  void for_each_plane(const std::function<void(const Plane&)>& fn) const;

  // Chroma planes must be exactly half of luma when present.
  void validate() const;

  bool operator==(const Frame&) const = default;
};

// How out-of-range samples found while reading are treated.
enum class RangePolicy {
  Error,           // throw RangeError naming the frame index
  MaskWithWarning  // keep the low bit_depth bits and report through the warning sink
};

struct ReadOptions {
  RangePolicy range_policy = RangePolicy::Error;
  std::function<void(const std::string&)> warn;
};

// Sequential frame reader. Frame k starts at byte k * frame_size_bytes(spec).
class SequenceReader {
 public:
  SequenceReader(const std::filesystem::path& path, VideoSpec spec, ReadOptions options = {});

  // Returns nullopt once spec.frame_count frames were produced.
  std::optional<Frame> next();
  int frames_read() const { return index_; }
  const VideoSpec& spec() const { return spec_; }

 private:
  std::ifstream in_;
  VideoSpec spec_;
  ReadOptions options_;
  int index_ = 0;
  std::vector<std::uint8_t> buffer_;
  std::filesystem::path path_;
};

std::vector<Frame> read_sequence(const std::filesystem::path& path, const VideoSpec& spec,
                                 const ReadOptions& options = {});

class SequenceWriter {
 public:
  SequenceWriter(const std::filesystem::path& path, VideoSpec spec);

  void write(const Frame& frame);
  std::uint64_t bytes_written() const { return bytes_; }
  void close();

 private:
  std::ofstream out_;
  VideoSpec spec_;
  int index_ = 0;
  std::uint64_t bytes_ = 0;
  std::vector<std::uint8_t> buffer_;
};

std::uint64_t write_sequence(std::span<const Frame> frames, const VideoSpec& spec,
                             const std::filesystem::path& path);

// Number of whole frames held by a file of the given size, plus leftover bytes.
struct ByteAccounting {
  std::uint64_t file_bytes = 0;
  std::uint64_t frame_bytes = 0;
  std::uint64_t frames = 0;
  std::uint64_t trailing_bytes = 0;
};

ByteAccounting account_file(const std::filesystem::path& path, const VideoSpec& spec);

}  // namespace rqpipe
