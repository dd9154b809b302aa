#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rqpipe/frame_io.hpp"

namespace rqpipe::cnn {

// Dense C x H x W activations, row-major within each channel.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        values(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
};

// Accumulator precision for convolutions.
enum class Precision { Single, Double };

// Kernel laid out as (out_ch, in_ch, k, k), plus one bias per output channel.
struct ConvWeights {
  int out_ch = 0;
  int in_ch = 0;
  int kernel = 0;
  std::vector<float> weights;
  std::vector<float> bias;

  float w(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_ch + i) * kernel + ky) * kernel + kx];
  }
};

// Zero-padded cross-correlation. Output size is (H + 2*pad - k) / stride + 1.
Tensor conv2d(const Tensor& x, const ConvWeights& weights, int stride, int pad,
              Precision precision = Precision::Single);

struct Conv2DOp {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

struct ActivationOp {
  enum class Kind { ReLU, LeakyReLU };
  Kind kind = Kind::LeakyReLU;
  float alpha = 0.2f;
};

struct AddOp {};
struct ConcatOp {};

using LayerOp = std::variant<Conv2DOp, ActivationOp, AddOp, ConcatOp>;

struct LayerSpec {
  std::string id;
  LayerOp op;
  std::vector<std::string> inputs;
  int block = -1;  // dense-block index, -1 outside any block
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::string input_id = "input";
  std::string output_id;
  bool residual_global = false;

  // Checks references, acyclicity and channel arithmetic. Returns the number
  // of channels produced by every node (the input included). Throws ShapeError.
  std::map<std::string, int> validate() const;

  // Layers in dependency order. Throws ShapeError on cycles or dangling inputs.
  std::vector<const LayerSpec*> topological_order() const;

  // Largest distance (in input pixels) from an output pixel to an input pixel
  // that can influence it.
  int receptive_radius() const;

  int block_count() const;
  const LayerSpec* find(const std::string& id) const;
};

using WeightSet = std::map<std::string, ConvWeights>;

// Throws ShapeError when a conv layer lacks weights, shapes differ, or the set
// holds weights for layers the network does not have.
void check_weights(const NetworkSpec& net, const WeightSet& weights);

// Binary weight file: magic "RQPW1", then for each conv layer
//   u32 id_length, id bytes, u32 out_ch, u32 in_ch, u32 k, u32 k,
//   f32 weights[out_ch*in_ch*k*k], f32 bias[out_ch]
// with every number little-endian. Nothing may follow the last record.
WeightSet parse_weights(std::span<const std::uint8_t> bytes);
WeightSet read_weight_file(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_weights(const NetworkSpec& net, const WeightSet& weights);
void write_weight_file(const std::filesystem::path& path, const NetworkSpec& net, const WeightSet& weights);

// Uniform random weights in [-scale, scale] / sqrt(fan_in), zero bias.
WeightSet random_weights(const NetworkSpec& net, std::uint64_t seed, float scale = 1.0f);

struct InferenceOptions {
  Precision precision = Precision::Single;
};

// Normalises the plane to [0, 1], runs the graph, adds the input back when
// residual_global is set, then rescales, rounds and clamps.
Plane apply_network(const NetworkSpec& net, const WeightSet& weights, const Plane& plane,
                    const InferenceOptions& options = {});

// Runs apply_network over tiles of `tile` pixels, each extended by `overlap`
// pixels of context that are discarded afterwards. Bit-exact with the untiled
// result when overlap >= receptive_radius(); smaller overlaps are rejected.
Plane tiled_apply(const NetworkSpec& net, const WeightSet& weights, const Plane& plane, int tile, int overlap,
                  const InferenceOptions& options = {});

// Residual dense network in the MFRNet style: head conv, `blocks` dense blocks
// of `convs_per_block` 3x3 convs with `growth` channels each, 1x1 fusion back
// to `channels`, block residual, block outputs concatenated into later block
// inputs, tail conv to one channel, and a global residual.
NetworkSpec build_mfrnet_style(int blocks = 4, int convs_per_block = 4, int channels = 32, int growth = 16,
                               ActivationOp activation = {});

// JSON description of a custom graph, see README for the schema.
NetworkSpec network_from_json(const std::string& text);
std::string network_to_json(const NetworkSpec& net);

// "mfrnet[:blocks,convs,channels,growth]" or a path to a JSON description.
NetworkSpec load_network(const std::string& description);

// A network and its weights, immutable once loaded.
struct Model {
  NetworkSpec net;
  WeightSet weights;
};

Model load_model(const std::string& network_description, const std::filesystem::path& weights_path);

namespace reference {

// Straight-line serial convolution used by tests and the benchmark.
Tensor conv2d_serial(const Tensor& x, const ConvWeights& weights, int stride, int pad,
                     Precision precision = Precision::Single);

}  // namespace reference

}  // namespace rqpipe::cnn
