#include "rqpipe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rqpipe/error.hpp"
#include "rqpipe/mock_codec.hpp"
#include "rqpipe/process.hpp"

namespace rqpipe {

namespace pt = boost::property_tree;

std::vector<QpPair> default_qp_pairs() { return {{22, 4}, {27, 7}, {32, 11}, {37, 15}}; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    auto item = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

int to_int(std::string_view s, const std::string& what) {
  const auto t = trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(what + ": expected an integer, got '" + t + "'");
  }
  return v;
}

double to_double(std::string_view s, const std::string& what) {
  const auto t = trim(s);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(what + ": expected a number, got '" + t + "'");
}

bool to_bool(std::string_view s, const std::string& what) {
  const auto t = trim(s);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError(what + ": expected a boolean, got '" + t + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

// Wraps parse errors of nested values so the message names the key.
template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void check_template(const std::string& key, const std::string& tmpl, std::initializer_list<std::string_view> required) {
  const auto present = template_placeholders(tmpl);
  for (auto r : required) {
    if (std::find(present.begin(), present.end(), std::string(r)) == present.end()) {
      throw ConfigError(key + " is missing the {" + std::string(r) + "} placeholder");
    }
  }
}

SequenceConfig parse_sequence(const std::string& id, const pt::ptree& sec, const std::filesystem::path& base) {
  SequenceConfig s;
  s.id = id;
  const std::string where = "[sequence." + id + "]";
  for (const auto& [key, node] : sec) {
    static const std::vector<std::string> known{"path", "spec", "frames", "frame_rate", "preset", "name",
                                                "type", "views", "depth_path", "depth_spec"};
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
  const auto path = sec.get_optional<std::string>("path");
  if (!path) throw ConfigError(where + ": 'path' is required");
  s.path = resolve(base, trim(*path));

  if (const auto p = sec.get_optional<std::string>("preset")) {
    s.preset = find_preset(trim(*p));
    if (!s.preset) throw ConfigError(where + ": unknown preset '" + trim(*p) + "'");
  }
  if (const auto spec = sec.get_optional<std::string>("spec")) {
    s.spec = keyed(where + " spec", [&] { return VideoSpec::parse(trim(*spec)); });
  } else if (s.preset) {
    s.spec.width = s.preset->width;
    s.spec.height = s.preset->height;
    s.spec.bit_depth = 10;
    s.spec.chroma = Chroma::C420;
  } else {
    throw ConfigError(where + ": 'spec' (WxH:bitdepth:chroma) or 'preset' is required");
  }
  if (!s.preset) {
    SequencePreset custom{id, id, "", s.spec.width, s.spec.height, 1};
    bool any = false;
    if (const auto v = sec.get_optional<std::string>("name")) custom.name = trim(*v), any = true;
    if (const auto v = sec.get_optional<std::string>("type")) custom.type = trim(*v), any = true;
    if (const auto v = sec.get_optional<std::string>("views")) custom.views = to_int(*v, where + " views"), any = true;
    if (any) s.preset = custom;
  }
  s.spec.label = id;
  if (const auto f = sec.get_optional<std::string>("frames")) s.spec.frame_count = to_int(*f, where + " frames");
  if (s.spec.frame_count < 0) throw ConfigError(where + ": frames must be >= 0");

  const auto fps = sec.get_optional<std::string>("frame_rate");
  if (!fps) throw ConfigError(where + ": 'frame_rate' is required (needed for bitrate)");
  s.frame_rate = to_double(*fps, where + " frame_rate");
  if (!(s.frame_rate > 0.0)) throw ConfigError(where + ": frame_rate must be positive");

  if (const auto d = sec.get_optional<std::string>("depth_path")) {
    s.depth_path = resolve(base, trim(*d));
    VideoSpec ds = s.spec;
    ds.chroma = Chroma::C400;
    if (const auto dspec = sec.get_optional<std::string>("depth_spec")) {
      ds = keyed(where + " depth_spec", [&] { return VideoSpec::parse(trim(*dspec)); });
      ds.frame_count = s.spec.frame_count;
    }
    ds.label = id + "_depth";
    s.depth_spec = ds;
  }
  return s;
}

MethodConfig parse_method(const std::string& label, const pt::ptree& sec, const std::filesystem::path& base) {
  MethodConfig m;
  m.label = label;
  const std::string where = "[method." + label + "]";
  std::optional<PostprocConfig> pp;
  auto ensure_pp = [&]() -> PostprocConfig& {
    if (!pp) pp.emplace();
    return *pp;
  };
  std::string weights_text;
  for (const auto& [key, node] : sec) {
    const auto value = trim(node.data());
    const std::string what = where + " " + key;
    if (key == "scale") {
      m.scale = keyed(what, [&] { return ScaleFactor::parse(value); });
    } else if (key == "down_filter") {
      m.down_filter = keyed(what, [&] { return ResampleFilter::parse(value); });
    } else if (key == "up_filter") {
      m.up_filter = keyed(what, [&] { return ResampleFilter::parse(value); });
    } else if (key == "depth_filter") {
      m.depth_filter = keyed(what, [&] { return ResampleFilter::parse(value); });
    } else if (key == "qp_offset") {
      m.qp_offset = to_int(value, what);
    } else if (key == "codec") {
      if (value == "mock") m.codec.kind = CodecConfig::Kind::Mock;
      else if (value == "external") m.codec.kind = CodecConfig::Kind::External;
      else throw ConfigError(what + ": expected mock or external, got '" + value + "'");
    } else if (key == "encode_cmd") {
      m.codec.encode_cmd = value;
    } else if (key == "decode_cmd") {
      m.codec.decode_cmd = value;
    } else if (key == "bitstream") {
      m.codec.bitstream_pattern = value;
    } else if (key == "postproc_net") {
      ensure_pp().net = value;
    } else if (key == "postproc_weights") {
      ensure_pp();
      weights_text = value;
    } else if (key == "postproc_chroma") {
      ensure_pp().chroma = to_bool(value, what);
    } else if (key == "tile") {
      ensure_pp().tile = to_int(value, what);
    } else if (key == "overlap") {
      ensure_pp().overlap = to_int(value, what);
    } else {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }

  if (!m.scale.is_identity() && !m.scale.is_downscale()) {
    throw ConfigError(where + ": scale must be <= 1 (the method downsamples before coding), got " + m.scale.to_string());
  }
  if (m.codec.kind == CodecConfig::Kind::External) {
    if (m.codec.encode_cmd.empty() || m.codec.decode_cmd.empty()) {
      throw ConfigError(where + ": external codec needs encode_cmd and decode_cmd");
    }
    check_template(where + " encode_cmd", m.codec.encode_cmd, {"in", "out", "qp", "w", "h"});
    check_template(where + " decode_cmd", m.codec.decode_cmd, {"in", "out"});
  }
  if (pp) {
    if (weights_text.empty()) throw ConfigError(where + ": post-processing needs postproc_weights");
    for (const auto& item : split(weights_text, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) {
        pp->weights[-1] = resolve(base, item);  // shared by every QP group
      } else {
        const int qp = to_int(item.substr(0, colon), where + " postproc_weights");
        if (!pp->weights.emplace(qp, resolve(base, trim(item.substr(colon + 1)))).second) {
          throw ConfigError(where + ": duplicate weights for base QP " + std::to_string(qp));
        }
      }
    }
    if (pp->weights.count(-1) && pp->weights.size() > 1) {
      throw ConfigError(where + ": postproc_weights mixes a shared file with per-QP files");
    }
    if (pp->tile < 0) throw ConfigError(where + ": tile must be >= 0");
  }
  m.postproc = pp;
  return m;
}

}  // namespace

std::vector<QpPair> parse_qp_pairs(std::string_view text) {
  std::vector<QpPair> out;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("QP pair '" + item + "' must be texture:depth");
    out.push_back({to_int(item.substr(0, colon), "QP pair"), to_int(item.substr(colon + 1), "QP pair")});
  }
  if (out.empty()) throw ConfigError("QP list is empty");
  return out;
}

const std::vector<SequencePreset>& sequence_presets() {
  static const std::vector<SequencePreset> table{
      {"A", "Classroom", "CG", 4096, 2048, 14}, {"B", "Museum", "CG", 2048, 2048, 18},
      {"C", "Hijack", "CG", 4096, 2048, 9},     {"D", "Painter", "NC", 2048, 1088, 16},
      {"E", "Frog", "NC", 1920, 1080, 13},      {"J", "Kitchen", "CG", 1920, 1080, 24},
      {"L", "Fencing", "NC", 1920, 1080, 9},
  };
  return table;
}

std::optional<SequencePreset> find_preset(std::string_view id) {
  for (const auto& p : sequence_presets()) {
    if (p.id == id || p.name == id) return p;
  }
  return std::nullopt;
}

const MethodConfig& ExperimentConfig::method(std::string_view label) const {
  for (const auto& m : methods) {
    if (m.label == label) return m;
  }
  throw ConfigError("no method labelled '" + std::string(label) + "'");
}

std::vector<std::string> ExperimentConfig::metric_ids() const {
  std::vector<std::string> ids;
  if (metrics.psnr_y) ids.push_back("psnr_y");
  for (const auto& e : metrics.external) ids.push_back(e.metric_id);
  return ids;
}

nlohmann::json ExperimentConfig::to_json() const {
  using nlohmann::json;
  json j;
  j["name"] = name;
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  j["psnr_aggregation"] = to_string(psnr.aggregation);
  j["psnr_cap_db"] = psnr.cap_db;
  j["interpolation"] = to_string(interpolation);
  j["anchor"] = anchor;
  for (const auto& q : qps) j["qps"].push_back({q.qp_texture, q.qp_depth});
  for (const auto& s : sequences) {
    json js{{"id", s.id}, {"path", s.path.string()}, {"spec", s.spec.to_string()},
            {"frames", s.spec.frame_count}, {"frame_rate", s.frame_rate}};
    if (s.preset) {
      js["preset"] = {{"id", s.preset->id}, {"name", s.preset->name}, {"type", s.preset->type},
                      {"views", s.preset->views}};
    }
    if (s.depth_path) {
      js["depth_path"] = s.depth_path->string();
      js["depth_spec"] = s.depth_spec->to_string();
    }
    j["sequences"].push_back(js);
  }
  for (const auto& m : methods) {
    json jm{{"label", m.label},
            {"scale", m.scale.to_string()},
            {"down_filter", m.down_filter.to_string()},
            {"up_filter", m.up_filter.to_string()},
            {"depth_filter", m.depth_filter.to_string()},
            {"qp_offset", m.qp_offset},
            {"codec", m.codec.kind == CodecConfig::Kind::Mock ? "mock" : "external"}};
    if (m.codec.kind == CodecConfig::Kind::External) {
      jm["encode_cmd"] = m.codec.encode_cmd;
      jm["decode_cmd"] = m.codec.decode_cmd;
      jm["bitstream"] = m.codec.bitstream_pattern;
    }
    if (m.postproc) {
      json w = json::object();
      for (const auto& [qp, path] : m.postproc->weights) w[std::to_string(qp)] = path.string();
      jm["postproc"] = {{"net", m.postproc->net},
                        {"weights", w},
                        {"chroma", m.postproc->chroma},
                        {"tile", m.postproc->tile},
                        {"overlap", m.postproc->overlap}};
    }
    j["methods"].push_back(jm);
  }
  j["metrics"]["psnr_y"] = metrics.psnr_y;
  for (const auto& e : metrics.external) {
    j["metrics"]["external"].push_back({{"id", e.metric_id}, {"command", e.command_template}, {"version", e.version_command}});
  }
  return j;
}

ExperimentConfig parse_experiment(const std::string& ini_text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }

  ExperimentConfig cfg;
  for (const auto& [section, node] : tree) {
    if (node.empty() && !node.data().empty()) {
      throw ConfigError("key '" + section + "' appears outside any section");
    }
    if (section == "experiment") {
      for (const auto& [key, v] : node) {
        const auto value = trim(v.data());
        const std::string what = "[experiment] " + key;
        if (key == "name") cfg.name = value;
        else if (key == "output_dir") cfg.output_dir = resolve(base_dir, value);
        else if (key == "workers") cfg.workers = to_int(value, what);
        else if (key == "psnr_aggregation") cfg.psnr.aggregation = keyed(what, [&] { return parse_aggregation(value); });
        else if (key == "psnr_cap_db") cfg.psnr.cap_db = to_double(value, what);
        else if (key == "interpolation") cfg.interpolation = keyed(what, [&] { return parse_interpolation(value); });
        else if (key == "anchor") cfg.anchor = value;
        else throw ConfigError("[experiment]: unknown key '" + key + "'");
      }
    } else if (section == "qps") {
      for (const auto& [key, v] : node) {
        if (key != "pairs") throw ConfigError("[qps]: unknown key '" + key + "'");
        cfg.qps = parse_qp_pairs(v.data());
      }
    } else if (section == "metrics") {
      std::map<std::string, ExternalMetricSpec> ext;
      for (const auto& [key, v] : node) {
        const auto value = trim(v.data());
        if (key == "psnr_y") {
          cfg.metrics.psnr_y = to_bool(value, "[metrics] psnr_y");
        } else if (key.starts_with("external.")) {
          auto id = key.substr(9);
          bool version = false;
          if (id.ends_with(".version")) {
            id = id.substr(0, id.size() - 8);
            version = true;
          }
          if (id.empty()) throw ConfigError("[metrics]: empty external metric id in '" + key + "'");
          auto& spec = ext[id];
          spec.metric_id = id;
          (version ? spec.version_command : spec.command_template) = value;
        } else {
          throw ConfigError("[metrics]: unknown key '" + key + "'");
        }
      }
      for (auto& [id, spec] : ext) {
        if (spec.command_template.empty()) throw ConfigError("[metrics]: external." + id + " has a version but no command");
        keyed("[metrics] external." + id, [&] {
          validate_metric_template(spec.command_template);
          return 0;
        });
        if (id == "psnr_y") throw ConfigError("[metrics]: 'psnr_y' is reserved for the built-in metric");
        cfg.metrics.external.push_back(spec);
      }
    } else if (section.starts_with("sequence.")) {
      cfg.sequences.push_back(parse_sequence(section.substr(9), node, base_dir));
    } else if (section.starts_with("method.")) {
      cfg.methods.push_back(parse_method(section.substr(7), node, base_dir));
    } else {
      throw ConfigError("unknown section [" + section + "]");
    }
  }

  if (cfg.sequences.empty()) throw ConfigError("experiment config defines no [sequence.<id>] section");
  if (cfg.methods.empty()) throw ConfigError("experiment config defines no [method.<label>] section");
  if (cfg.metric_ids().empty()) throw ConfigError("experiment config enables no metric");
  if (!(cfg.psnr.cap_db > 0.0)) throw ConfigError("psnr_cap_db must be positive");

  for (const auto& q : cfg.qps) {
    if (q.qp_depth < mock::kMinQp || q.qp_depth > mock::kMaxQp) {
      throw ConfigError("depth QP " + std::to_string(q.qp_depth) + " is outside 0..63");
    }
    for (const auto& m : cfg.methods) {
      keyed("[method." + m.label + "]", [&] { return effective_texture_qp(m, q); });
    }
  }
  for (std::size_t i = 0; i < cfg.qps.size(); ++i) {
    for (std::size_t j = i + 1; j < cfg.qps.size(); ++j) {
      if (cfg.qps[i].qp_texture == cfg.qps[j].qp_texture) throw ConfigError("duplicate texture QP in [qps]");
    }
  }
  for (auto& m : cfg.methods) {
    if (m.postproc && m.postproc->weights.count(-1)) {
      // Expand a shared file to every configured group so the lookup stays uniform.
      auto& pp = *m.postproc;
      const auto shared = pp.weights.at(-1);
      pp.weights.clear();
      for (const auto& q : cfg.qps) pp.weights[q.qp_texture] = shared;
    }
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_experiment(text.str(), base);
}

int effective_texture_qp(const MethodConfig& method, const QpPair& qp) {
  const int q = qp.qp_texture + method.qp_offset;
  if (q < mock::kMinQp || q > mock::kMaxQp) {
    throw RangeError("method '" + method.label + "': texture QP " + std::to_string(qp.qp_texture) + " with offset " +
                     std::to_string(method.qp_offset) + " gives " + std::to_string(q) + ", outside 0..63");
  }
  return q;
}

std::pair<int, std::filesystem::path> select_weights(const PostprocConfig& pp, int base_qp) {
  if (pp.weights.empty()) throw ConfigError("post-processing has no weight files configured");
  auto best = pp.weights.begin();
  for (auto it = pp.weights.begin(); it != pp.weights.end(); ++it) {
    if (std::abs(it->first - base_qp) < std::abs(best->first - base_qp)) best = it;
  }
  return *best;
}

}  // namespace rqpipe
