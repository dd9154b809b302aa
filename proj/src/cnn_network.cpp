#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rqpipe/cnn.hpp"
#include "rqpipe/error.hpp"

namespace rqpipe::cnn {

namespace {

template <class... Ts>
struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

const LayerSpec* NetworkSpec::find(const std::string& id) const {
  for (const auto& l : layers) if (l.id == id) return &l;
  return nullptr;
}

std::vector<const LayerSpec*> NetworkSpec::topological_order() const {
  std::map<std::string, const LayerSpec*> by_id;
  for (const auto& l : layers) {
    if (l.id == input_id) throw ShapeError("layer id '" + l.id + "' collides with the network input id");
    if (!by_id.emplace(l.id, &l).second) throw ShapeError("duplicate layer id '" + l.id + "'");
  }
  std::map<std::string, int> pending;
  std::map<std::string, std::vector<const LayerSpec*>> consumers;
  for (const auto& l : layers) {
    if (l.inputs.empty()) throw ShapeError("layer '" + l.id + "' has no inputs");
    int deps = 0;
    for (const auto& in : l.inputs) {
      if (in == input_id) continue;
      if (!by_id.count(in)) throw ShapeError("layer '" + l.id + "' references unknown input '" + in + "'");
      consumers[in].push_back(&l);
      ++deps;
    }
    pending[l.id] = deps;
  }
  // Kahn's algorithm, seeded in declaration order so the result is stable.
  std::vector<const LayerSpec*> order;
  std::vector<const LayerSpec*> ready;
  for (const auto& l : layers) if (pending[l.id] == 0) ready.push_back(&l);
  std::reverse(ready.begin(), ready.end());
  while (!ready.empty()) {
    const LayerSpec* l = ready.back();
    ready.pop_back();
    order.push_back(l);
    std::vector<const LayerSpec*> unlocked;
    for (const LayerSpec* c : consumers[l->id]) {
      if (--pending[c->id] == 0) unlocked.push_back(c);
    }
    std::reverse(unlocked.begin(), unlocked.end());
    ready.insert(ready.end(), unlocked.begin(), unlocked.end());
  }
  if (order.size() != layers.size()) throw ShapeError("network graph contains a cycle");
  return order;
}

std::map<std::string, int> NetworkSpec::validate() const {
  std::map<std::string, int> channels{{input_id, 1}};
  for (const LayerSpec* l : topological_order()) {
    std::vector<int> in_ch;
    for (const auto& in : l->inputs) in_ch.push_back(channels.at(in));
    const int produced = std::visit(
        overloaded{
            [&](const Conv2DOp& c) {
              if (in_ch.size() != 1) throw ShapeError("conv layer '" + l->id + "' takes exactly one input");
              if (c.in_ch != in_ch[0]) {
                throw ShapeError("conv layer '" + l->id + "' declares " + std::to_string(c.in_ch) +
                                 " input channels but receives " + std::to_string(in_ch[0]));
              }
              if (c.kernel < 1 || c.stride < 1 || c.pad < 0 || c.out_ch < 1) {
                throw ShapeError("conv layer '" + l->id + "' has invalid geometry");
              }
              return c.out_ch;
            },
            [&](const ActivationOp&) {
              if (in_ch.size() != 1) throw ShapeError("activation '" + l->id + "' takes exactly one input");
              return in_ch[0];
            },
            [&](const AddOp&) {
              if (in_ch.size() < 2) throw ShapeError("add layer '" + l->id + "' needs at least two inputs");
              for (int c : in_ch) {
                if (c != in_ch[0]) throw ShapeError("add layer '" + l->id + "' mixes channel counts");
              }
              return in_ch[0];
            },
            [&](const ConcatOp&) {
              int sum = 0;
              for (int c : in_ch) sum += c;
              return sum;
            }},
        l->op);
    channels[l->id] = produced;
  }
  if (!channels.count(output_id)) throw ShapeError("output id '" + output_id + "' is not a layer");
  if (channels.at(output_id) != 1) {
    throw ShapeError("network output '" + output_id + "' has " + std::to_string(channels.at(output_id)) +
                     " channels, expected 1");
  }
  return channels;
}

int NetworkSpec::receptive_radius() const {
  // Radius and cumulative stride per node.
  std::map<std::string, std::pair<int, int>> info{{input_id, {0, 1}}};
  for (const LayerSpec* l : topological_order()) {
    int r = 0, jump = 1;
    for (const auto& in : l->inputs) {
      r = std::max(r, info.at(in).first);
      jump = std::max(jump, info.at(in).second);
    }
    if (const auto* c = std::get_if<Conv2DOp>(&l->op)) {
      r += std::max(c->pad, c->kernel - 1 - c->pad) * jump;
      jump *= c->stride;
    }
    info[l->id] = {r, jump};
  }
  const auto it = info.find(output_id);
  if (it == info.end()) throw ShapeError("output id '" + output_id + "' is not a layer");
  return it->second.first;
}

int NetworkSpec::block_count() const {
  std::set<int> blocks;
  for (const auto& l : layers) if (l.block >= 0) blocks.insert(l.block);
  return static_cast<int>(blocks.size());
}

void check_weights(const NetworkSpec& net, const WeightSet& weights) {
  std::set<std::string> used;
  for (const auto& l : net.layers) {
    const auto* c = std::get_if<Conv2DOp>(&l.op);
    if (c == nullptr) continue;
    const auto it = weights.find(l.id);
    if (it == weights.end()) throw ShapeError("missing weights for conv layer '" + l.id + "'");
    const auto& w = it->second;
    if (w.out_ch != c->out_ch || w.in_ch != c->in_ch || w.kernel != c->kernel) {
      throw ShapeError("weights for '" + l.id + "' have shape (" + std::to_string(w.out_ch) + ", " +
                       std::to_string(w.in_ch) + ", " + std::to_string(w.kernel) + "), layer expects (" +
                       std::to_string(c->out_ch) + ", " + std::to_string(c->in_ch) + ", " +
                       std::to_string(c->kernel) + ")");
    }
    const auto n = static_cast<std::size_t>(w.out_ch) * w.in_ch * w.kernel * w.kernel;
    if (w.weights.size() != n || w.bias.size() != static_cast<std::size_t>(w.out_ch)) {
      throw ShapeError("weights for '" + l.id + "' have inconsistent buffer sizes");
    }
    used.insert(l.id);
  }
  for (const auto& [id, _] : weights) {
    if (!used.count(id)) throw ShapeError("weights supplied for '" + id + "', which is not a conv layer of the network");
  }
}

// ---------------------------------------------------------------------------

namespace {

Tensor run_graph(const NetworkSpec& net, const WeightSet& weights, Tensor input, const InferenceOptions& options) {
  const auto order = net.topological_order();

  // Last consumer of each node, so intermediate tensors can be released.
  std::map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& in : order[i]->inputs) last_use[in] = i;
  }
  last_use[net.output_id] = order.size();

  std::map<std::string, Tensor> live;
  live.emplace(net.input_id, std::move(input));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const LayerSpec& l = *order[i];
    auto arg = [&](std::size_t k) -> const Tensor& { return live.at(l.inputs[k]); };
    Tensor out = std::visit(
        overloaded{
            [&](const Conv2DOp& c) {
              try {
                return conv2d(arg(0), weights.at(l.id), c.stride, c.pad, options.precision);
              } catch (const ShapeError& e) {
                throw ShapeError("layer '" + l.id + "': " + e.what());
              }
            },
            [&](const ActivationOp& a) {
              Tensor t = arg(0);
              if (a.kind == ActivationOp::Kind::ReLU) {
                for (auto& v : t.values) v = v < 0.0f ? 0.0f : v;
              } else {
                for (auto& v : t.values) v = v < 0.0f ? a.alpha * v : v;
              }
              return t;
            },
            [&](const AddOp&) {
              Tensor t = arg(0);
              for (std::size_t k = 1; k < l.inputs.size(); ++k) {
                const Tensor& o = arg(k);
                if (o.values.size() != t.values.size() || o.height != t.height) {
                  throw ShapeError("add layer '" + l.id + "' has inputs of different shape");
                }
                for (std::size_t j = 0; j < t.values.size(); ++j) t.values[j] += o.values[j];
              }
              return t;
            },
            [&](const ConcatOp&) {
              int c = 0;
              for (std::size_t k = 0; k < l.inputs.size(); ++k) {
                if (arg(k).height != arg(0).height || arg(k).width != arg(0).width) {
                  throw ShapeError("concat layer '" + l.id + "' has inputs of different spatial size");
                }
                c += arg(k).channels;
              }
              Tensor t(c, arg(0).height, arg(0).width);
              auto dst = t.values.begin();
              for (std::size_t k = 0; k < l.inputs.size(); ++k) dst = std::copy(arg(k).values.begin(), arg(k).values.end(), dst);
              return t;
            }},
        l.op);
    live[l.id] = std::move(out);
    for (const auto& in : l.inputs) {
      if (last_use[in] == i && in != net.input_id) live.erase(in);
    }
  }
  return std::move(live.at(net.output_id));
}

}  // namespace

Plane apply_network(const NetworkSpec& net, const WeightSet& weights, const Plane& plane,
                    const InferenceOptions& options) {
  net.validate();
  check_weights(net, weights);

  const double max = plane.max_value();
  Tensor input(1, plane.height, plane.width);
  for (std::size_t i = 0; i < plane.samples.size(); ++i) {
    input.values[i] = static_cast<float>(plane.samples[i] / max);
  }
  Tensor out = run_graph(net, weights, input, options);
  if (out.channels != 1 || out.height != plane.height || out.width != plane.width) {
    throw ShapeError("network output is " + std::to_string(out.channels) + "x" + std::to_string(out.height) + "x" +
                     std::to_string(out.width) + ", expected 1x" + std::to_string(plane.height) + "x" +
                     std::to_string(plane.width));
  }
  if (net.residual_global) {
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += input.values[i];
  }

  Plane result(plane.width, plane.height, plane.bit_depth);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double v = std::floor(static_cast<double>(out.values[i]) * max + 0.5);
    result.samples[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, max));
  }
  return result;
}

Plane tiled_apply(const NetworkSpec& net, const WeightSet& weights, const Plane& plane, int tile, int overlap,
                  const InferenceOptions& options) {
  net.validate();
  for (const auto& l : net.layers) {
    if (const auto* c = std::get_if<Conv2DOp>(&l.op); c && c->stride != 1) {
      throw ConfigError("tiled inference needs stride-1 convolutions; layer '" + l.id + "' has stride " +
                        std::to_string(c->stride));
    }
  }
  const int radius = net.receptive_radius();
  if (overlap < radius) {
    throw ConfigError("tile overlap " + std::to_string(overlap) + " is below the network's receptive radius; need at least " +
                      std::to_string(radius));
  }
  if (tile <= 0) throw ConfigError("tile size must be positive");
  if (tile >= plane.width && tile >= plane.height) return apply_network(net, weights, plane, options);
  check_weights(net, weights);

  Plane result(plane.width, plane.height, plane.bit_depth);
  for (int y0 = 0; y0 < plane.height; y0 += tile) {
    for (int x0 = 0; x0 < plane.width; x0 += tile) {
      const int x1 = std::min(x0 + tile, plane.width);
      const int y1 = std::min(y0 + tile, plane.height);
      const int rx0 = std::max(0, x0 - overlap), ry0 = std::max(0, y0 - overlap);
      const int rx1 = std::min(plane.width, x1 + overlap), ry1 = std::min(plane.height, y1 + overlap);

      Plane region(rx1 - rx0, ry1 - ry0, plane.bit_depth);
      for (int y = ry0; y < ry1; ++y) {
        const auto src = plane.row(y);
        std::copy(src.begin() + rx0, src.begin() + rx1, region.samples.begin() + static_cast<std::size_t>(y - ry0) * region.width);
      }
      const Plane out = apply_network(net, weights, region, options);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) result.at(x, y) = out.at(x - rx0, y - ry0);
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

NetworkSpec build_mfrnet_style(int blocks, int convs_per_block, int channels, int growth, ActivationOp activation) {
  if (blocks < 1 || convs_per_block < 1 || channels < 1 || growth < 1) {
    throw ConfigError("network dimensions must all be >= 1");
  }
  NetworkSpec net;
  net.residual_global = true;
  auto add = [&](std::string id, LayerOp op, std::vector<std::string> inputs, int block = -1) {
    net.layers.push_back({id, std::move(op), std::move(inputs), block});
    return id;
  };
  auto conv = [](int in, int out, int k) { return Conv2DOp{in, out, k, 1, k / 2}; };

  const auto head = add("head", conv(1, channels, 3), {net.input_id});
  const auto head_act = add("head_act", activation, {head});

  // Outputs available for reuse, most recent first.
  std::vector<std::string> history{head_act};
  std::string prev = head_act;
  for (int b = 0; b < blocks; ++b) {
    const auto p = "b" + std::to_string(b) + "_";
    std::string block_in = prev;
    int in_ch = channels;
    if (b > 0) {
      block_in = add(p + "in", ConcatOp{}, history, b);
      in_ch = channels * static_cast<int>(history.size());
    }

    std::vector<std::string> dense{block_in};
    int dense_ch = in_ch;
    for (int j = 1; j <= convs_per_block; ++j) {
      const auto js = std::to_string(j);
      const std::string src = dense.size() == 1 ? block_in : add(p + "cat" + js, ConcatOp{}, dense, b);
      const auto c = add(p + "c" + js, conv(dense_ch, growth, 3), {src}, b);
      dense.push_back(add(p + "a" + js, activation, {c}, b));
      dense_ch += growth;
    }
    const auto fuse_in = add(p + "fuse_in", ConcatOp{}, dense, b);
    const auto fuse = add(p + "fuse", conv(dense_ch, channels, 1), {fuse_in}, b);
    prev = add(p + "out", AddOp{}, {fuse, prev}, b);
    history.insert(history.begin(), prev);
  }
  net.output_id = add("tail", conv(channels, 1, 3), {prev});
  return net;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

LayerOp op_from_json(const json& j) {
  const auto op = j.at("op").get<std::string>();
  if (op == "conv2d") {
    Conv2DOp c;
    c.in_ch = j.at("in_ch").get<int>();
    c.out_ch = j.at("out_ch").get<int>();
    c.kernel = j.value("kernel", 3);
    c.stride = j.value("stride", 1);
    c.pad = j.value("pad", c.kernel / 2);
    return c;
  }
  if (op == "relu") return ActivationOp{ActivationOp::Kind::ReLU, 0.0f};
  if (op == "leaky_relu") return ActivationOp{ActivationOp::Kind::LeakyReLU, j.value("alpha", 0.2f)};
  if (op == "add") return AddOp{};
  if (op == "concat") return ConcatOp{};
  throw ParseError("unknown layer op '" + op + "'");
}

json op_to_json(const LayerOp& op) {
  return std::visit(overloaded{[](const Conv2DOp& c) {
                                 return json{{"op", "conv2d"}, {"in_ch", c.in_ch}, {"out_ch", c.out_ch},
                                             {"kernel", c.kernel}, {"stride", c.stride}, {"pad", c.pad}};
                               },
                               [](const ActivationOp& a) {
                                 return a.kind == ActivationOp::Kind::ReLU
                                            ? json{{"op", "relu"}}
                                            : json{{"op", "leaky_relu"}, {"alpha", a.alpha}};
                               },
                               [](const AddOp&) { return json{{"op", "add"}}; },
                               [](const ConcatOp&) { return json{{"op", "concat"}}; }},
                    op);
}

}  // namespace

NetworkSpec network_from_json(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    NetworkSpec net;
    net.input_id = doc.value("input", std::string("input"));
    net.output_id = doc.at("output").get<std::string>();
    net.residual_global = doc.value("residual_global", false);
    for (const auto& jl : doc.at("layers")) {
      LayerSpec l;
      l.id = jl.at("id").get<std::string>();
      l.op = op_from_json(jl);
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      l.block = jl.value("block", -1);
      net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
  } catch (const json::exception& e) {
    throw ParseError(std::string("network description: ") + e.what());
  }
}

std::string network_to_json(const NetworkSpec& net) {
  json doc{{"input", net.input_id}, {"output", net.output_id}, {"residual_global", net.residual_global}};
  json layers = json::array();
  for (const auto& l : net.layers) {
    json jl = op_to_json(l.op);
    jl["id"] = l.id;
    jl["inputs"] = l.inputs;
    if (l.block >= 0) jl["block"] = l.block;
    layers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(2);
}

NetworkSpec load_network(const std::string& description) {
  if (description == "mfrnet") return build_mfrnet_style();
  if (description.starts_with("mfrnet:")) {
    std::vector<int> dims;
    std::stringstream ss(description.substr(7));
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        dims.push_back(std::stoi(part));
      } catch (const std::exception&) {
        throw ParseError("invalid network dimensions in '" + description + "'");
      }
    }
    if (dims.size() != 4) throw ParseError("expected mfrnet:blocks,convs,channels,growth, got '" + description + "'");
    return build_mfrnet_style(dims[0], dims[1], dims[2], dims[3]);
  }
  std::ifstream in(description);
  if (!in) throw IoError("cannot open network description '" + description + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return network_from_json(text.str());
}

Model load_model(const std::string& network_description, const std::filesystem::path& weights_path) {
  Model m{load_network(network_description), read_weight_file(weights_path)};
  m.net.validate();
  check_weights(m.net, m.weights);
  return m;
}

}  // namespace rqpipe::cnn
