#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "rqpipe/cnn.hpp"
#include "rqpipe/error.hpp"

namespace rqpipe::cnn {

namespace {

constexpr std::string_view kMagic = "RQPW1";

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("weight file truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

WeightSet parse_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.text(kMagic.size(), "magic") != kMagic) throw ParseError("not a weight file (bad magic)");

  WeightSet set;
  while (!r.done()) {
    const auto id_len = r.u32("layer id length");
    if (id_len == 0 || id_len > 4096) throw ParseError("implausible layer id length " + std::to_string(id_len));
    auto id = r.text(id_len, "layer id");
    ConvWeights w;
    w.out_ch = static_cast<int>(r.u32("out_ch"));
    w.in_ch = static_cast<int>(r.u32("in_ch"));
    w.kernel = static_cast<int>(r.u32("kernel height"));
    const auto kw = static_cast<int>(r.u32("kernel width"));
    if (kw != w.kernel) throw ParseError("layer '" + id + "' has a non-square kernel");
    if (w.out_ch <= 0 || w.in_ch <= 0 || w.kernel <= 0) throw ParseError("layer '" + id + "' has an empty shape");
    const auto n = static_cast<std::size_t>(w.out_ch) * w.in_ch * w.kernel * w.kernel;
    w.weights.resize(n);
    for (auto& v : w.weights) v = r.f32("weights");
    w.bias.resize(static_cast<std::size_t>(w.out_ch));
    for (auto& v : w.bias) v = r.f32("bias");
    if (!set.emplace(id, std::move(w)).second) throw ParseError("duplicate weights for layer '" + id + "'");
  }
  return set;
}

WeightSet read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_weights(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> serialize_weights(const NetworkSpec& net, const WeightSet& weights) {
  check_weights(net, weights);
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  for (const auto& l : net.layers) {
    if (!std::holds_alternative<Conv2DOp>(l.op)) continue;
    const auto& w = weights.at(l.id);
    put_u32(out, static_cast<std::uint32_t>(l.id.size()));
    out.insert(out.end(), l.id.begin(), l.id.end());
    put_u32(out, static_cast<std::uint32_t>(w.out_ch));
    put_u32(out, static_cast<std::uint32_t>(w.in_ch));
    put_u32(out, static_cast<std::uint32_t>(w.kernel));
    put_u32(out, static_cast<std::uint32_t>(w.kernel));
    for (float v : w.weights) put_u32(out, std::bit_cast<std::uint32_t>(v));
    for (float v : w.bias) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void write_weight_file(const std::filesystem::path& path, const NetworkSpec& net, const WeightSet& weights) {
  const auto bytes = serialize_weights(net, weights);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create weight file '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

WeightSet random_weights(const NetworkSpec& net, std::uint64_t seed, float scale) {
  std::mt19937_64 rng(seed);
  WeightSet set;
  for (const auto& l : net.layers) {
    const auto* c = std::get_if<Conv2DOp>(&l.op);
    if (c == nullptr) continue;
    ConvWeights w;
    w.out_ch = c->out_ch;
    w.in_ch = c->in_ch;
    w.kernel = c->kernel;
    const float bound = scale / std::sqrt(static_cast<float>(c->in_ch * c->kernel * c->kernel));
    std::uniform_real_distribution<float> dist(-bound, bound);
    w.weights.resize(static_cast<std::size_t>(c->out_ch) * c->in_ch * c->kernel * c->kernel);
    for (auto& v : w.weights) v = dist(rng);
    w.bias.assign(static_cast<std::size_t>(c->out_ch), 0.0f);
    set.emplace(l.id, std::move(w));
  }
  return set;
}

}  // namespace rqpipe::cnn
