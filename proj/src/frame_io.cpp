#include "rqpipe/frame_io.hpp"

#include <charconv>
#include <sstream>

#include "rqpipe/error.hpp"

namespace rqpipe {

namespace {

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("invalid " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

std::size_t plane_samples(const VideoSpec& spec, bool chroma) {
  const std::size_t w = static_cast<std::size_t>(spec.width);
  const std::size_t h = static_cast<std::size_t>(spec.height);
  return chroma ? (w / 2) * (h / 2) : w * h;
}

}  // namespace

std::string to_string(Chroma c) { return c == Chroma::C420 ? "420" : "400"; }

void VideoSpec::validate() const {
  if (width <= 0 || height <= 0) {
    throw DimensionError("video dimensions must be positive, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  if (chroma == Chroma::C420 && (width % 2 != 0 || height % 2 != 0)) {
    throw DimensionError("4:2:0 requires even dimensions, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  if (bit_depth != 8 && bit_depth != 10) {
    throw RangeError("bit depth must be 8 or 10, got " + std::to_string(bit_depth));
  }
  if (frame_count < 0) throw RangeError("negative frame count");
}

VideoSpec VideoSpec::parse(std::string_view text) {
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
  if (c2 == std::string_view::npos) {
    throw ParseError("spec must look like WxH:bitdepth:chroma, got '" + std::string(text) + "'");
  }
  const auto dims = text.substr(0, c1);
  const auto x = dims.find('x');
  if (x == std::string_view::npos) throw ParseError("spec dimensions must be WxH");

  VideoSpec s;
  s.width = parse_int(dims.substr(0, x), "width");
  s.height = parse_int(dims.substr(x + 1), "height");
  s.bit_depth = parse_int(text.substr(c1 + 1, c2 - c1 - 1), "bit depth");
  const auto chroma = text.substr(c2 + 1);
  if (chroma == "420") {
    s.chroma = Chroma::C420;
  } else if (chroma == "400") {
    s.chroma = Chroma::C400;
  } else {
    throw ParseError("chroma must be 420 or 400, got '" + std::string(chroma) + "'");
  }
  s.validate();
  return s;
}

std::string VideoSpec::to_string() const {
  return std::to_string(width) + "x" + std::to_string(height) + ":" + std::to_string(bit_depth) + ":" +
         rqpipe::to_string(chroma);
}

std::uint64_t frame_size_bytes(const VideoSpec& spec) {
  std::uint64_t samples = plane_samples(spec, false);
  if (spec.chroma == Chroma::C420) samples += 2 * plane_samples(spec, true);
  return samples * static_cast<std::uint64_t>(spec.container_bytes());
}

Frame Frame::blank(const VideoSpec& spec, std::uint16_t fill) {
  Frame f;
  f.y = Plane(spec.width, spec.height, spec.bit_depth, fill);
  if (spec.chroma == Chroma::C420) {
    f.cb = Plane(spec.width / 2, spec.height / 2, spec.bit_depth, fill);
    f.cr = Plane(spec.width / 2, spec.height / 2, spec.bit_depth, fill);
  }
  return f;
}

void Frame::for_each_plane(const std::function<void(Plane&)>& fn) {
  fn(y);
  if (cb) fn(*cb);
  if (cr) fn(*cr);
}

void Frame::for_each_plane(const std::function<void(const Plane&)>& fn) const {
  fn(y);
  if (cb) fn(*cb);
  if (cr) fn(*cr);
}

void Frame::validate() const {
  if (cb.has_value() != cr.has_value()) throw DimensionError("frame has only one chroma plane");
  if (!cb) return;
  for (const Plane* c : {&*cb, &*cr}) {
    if (c->width * 2 != y.width || c->height * 2 != y.height) {
      throw DimensionError("chroma plane " + std::to_string(c->width) + "x" + std::to_string(c->height) +
                           " is not half of luma " + std::to_string(y.width) + "x" +
                           std::to_string(y.height));
    }
  }
}

// ---------------------------------------------------------------------------

SequenceReader::SequenceReader(const std::filesystem::path& path, VideoSpec spec, ReadOptions options)
    : spec_(std::move(spec)), options_(std::move(options)), path_(path) {
  spec_.validate();
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());
  const auto expected = frame_size_bytes(spec_) * static_cast<std::uint64_t>(spec_.frame_count);
  if (actual < expected) {
    throw TruncationError("'" + path.string() + "' is truncated: expected at least " +
                          std::to_string(expected) + " bytes for " + std::to_string(spec_.frame_count) +
                          " frames, found " + std::to_string(actual));
  }
  in_.open(path, std::ios::binary);
  if (!in_) throw IoError("cannot open '" + path.string() + "'");
  buffer_.resize(frame_size_bytes(spec_));
}

std::optional<Frame> SequenceReader::next() {
  if (index_ >= spec_.frame_count) return std::nullopt;
  in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
  if (in_.gcount() != static_cast<std::streamsize>(buffer_.size())) {
    throw TruncationError("short read on frame " + std::to_string(index_) + " of '" + path_.string() +
                          "': expected " + std::to_string(buffer_.size()) + " bytes, got " +
                          std::to_string(in_.gcount()));
  }

  Frame frame = Frame::blank(spec_);
  const std::uint16_t max = static_cast<std::uint16_t>(spec_.max_value());
  const bool wide = spec_.container_bytes() == 2;
  std::size_t offset = 0;
  std::size_t masked = 0;
  frame.for_each_plane([&](Plane& p) {
    for (auto& s : p.samples) {
      std::uint16_t v = buffer_[offset];
      if (wide) v = static_cast<std::uint16_t>(v | (buffer_[offset + 1] << 8));
      offset += wide ? 2 : 1;
      if (v > max) {
        if (options_.range_policy == RangePolicy::Error) {
          throw RangeError("frame " + std::to_string(index_) + ": sample value " + std::to_string(v) +
                           " exceeds " + std::to_string(spec_.bit_depth) + "-bit range");
        }
        v &= max;
        ++masked;
      }
      s = v;
    }
  });
  if (masked > 0 && options_.warn) {
    options_.warn("frame " + std::to_string(index_) + ": masked " + std::to_string(masked) +
                  " samples with bits above bit depth " + std::to_string(spec_.bit_depth));
  }
  ++index_;
  return frame;
}

std::vector<Frame> read_sequence(const std::filesystem::path& path, const VideoSpec& spec,
                                 const ReadOptions& options) {
  SequenceReader reader(path, spec, options);
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(spec.frame_count));
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

// ---------------------------------------------------------------------------

SequenceWriter::SequenceWriter(const std::filesystem::path& path, VideoSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot create '" + path.string() + "'");
  buffer_.resize(frame_size_bytes(spec_));
}

void SequenceWriter::write(const Frame& frame) {
  if (frame.width() != spec_.width || frame.height() != spec_.height || frame.chroma() != spec_.chroma) {
    throw DimensionError("frame " + std::to_string(index_) + " is " + std::to_string(frame.width()) + "x" +
                         std::to_string(frame.height()) + ":" + to_string(frame.chroma()) +
                         ", sequence expects " + spec_.to_string());
  }
  frame.validate();
  const bool wide = spec_.container_bytes() == 2;
  const std::uint16_t max = static_cast<std::uint16_t>(spec_.max_value());
  std::size_t offset = 0;
  frame.for_each_plane([&](const Plane& p) {
    for (std::uint16_t v : p.samples) {
      if (v > max) {
        throw RangeError("frame " + std::to_string(index_) + ": sample value " + std::to_string(v) +
                         " exceeds " + std::to_string(spec_.bit_depth) + "-bit range");
      }
      buffer_[offset++] = static_cast<std::uint8_t>(v & 0xFF);
      if (wide) buffer_[offset++] = static_cast<std::uint8_t>(v >> 8);
    }
  });
  out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
  if (!out_) throw IoError("write failed on frame " + std::to_string(index_));
  bytes_ += buffer_.size();
  ++index_;
}

void SequenceWriter::close() {
  out_.close();
  if (out_.fail()) throw IoError("closing output failed");
}

std::uint64_t write_sequence(std::span<const Frame> frames, const VideoSpec& spec,
                             const std::filesystem::path& path) {
  SequenceWriter writer(path, spec);
  for (const auto& f : frames) writer.write(f);
  writer.close();
  return writer.bytes_written();
}

ByteAccounting account_file(const std::filesystem::path& path, const VideoSpec& spec) {
  spec.validate();
  std::error_code ec;
  ByteAccounting a;
  a.file_bytes = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());
  a.frame_bytes = frame_size_bytes(spec);
  a.frames = a.file_bytes / a.frame_bytes;
  a.trailing_bytes = a.file_bytes % a.frame_bytes;
  return a;
}

}  // namespace rqpipe
