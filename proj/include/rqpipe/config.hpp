#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rqpipe/bd_stats.hpp"
#include "rqpipe/frame_io.hpp"
#include "rqpipe/metrics.hpp"
#include "rqpipe/resample.hpp"

namespace rqpipe {

struct QpPair {
  int qp_texture = 0;
  int qp_depth = 0;
  bool operator==(const QpPair&) const = default;
};

// The four (texture, depth) pairs of the common test conditions.
std::vector<QpPair> default_qp_pairs();

// "22:4, 27:7, ..."
std::vector<QpPair> parse_qp_pairs(std::string_view text);

struct SequencePreset {
  std::string id;
  std::string name;
  std::string type;  // CG or NC
  int width = 0;
  int height = 0;
  int views = 0;
};

const std::vector<SequencePreset>& sequence_presets();
std::optional<SequencePreset> find_preset(std::string_view id);

struct CodecConfig {
  enum class Kind { Mock, External };
  Kind kind = Kind::Mock;
  // External only. Encode needs {in} {out} {qp} {w} {h}, decode needs {in} {out}.
  std::string encode_cmd;
  std::string decode_cmd;
  std::string bitstream_pattern = "{job}.bin";
};

struct PostprocConfig {
  std::string net = "mfrnet";
  std::map<int, std::filesystem::path> weights;  // base texture QP -> file
  bool chroma = false;                           // luma only by default
  int tile = 0;                                  // 0 = whole plane
  int overlap = -1;                              // -1 = receptive radius
};

struct MethodConfig {
  std::string label;
  ScaleFactor scale;
  ResampleFilter down_filter = ResampleFilter::lanczos(3);
  ResampleFilter up_filter = ResampleFilter::nearest();
  ResampleFilter depth_filter = ResampleFilter::lanczos(3);  // nn avoids invented depths at edges
  int qp_offset = 0;  // applied to the texture QP only
  CodecConfig codec;
  std::optional<PostprocConfig> postproc;
};

struct SequenceConfig {
  std::string id;
  std::filesystem::path path;
  VideoSpec spec;  // frame_count 0 = every frame in the file
  double frame_rate = 0.0;
  std::optional<SequencePreset> preset;
  std::optional<std::filesystem::path> depth_path;
  std::optional<VideoSpec> depth_spec;
};

struct MetricsConfig {
  bool psnr_y = true;
  std::vector<ExternalMetricSpec> external;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path output_dir = "rqpipe_out";
  int workers = 0;  // 0 = available cores
  PsnrOptions psnr;
  Interpolation interpolation = Interpolation::Pchip;
  std::string anchor = "Anchor";
  std::vector<QpPair> qps = default_qp_pairs();
  std::vector<SequenceConfig> sequences;
  std::vector<MethodConfig> methods;
  MetricsConfig metrics;

  const MethodConfig& method(std::string_view label) const;
  std::vector<std::string> metric_ids() const;
  nlohmann::json to_json() const;
};

// Relative paths resolve against base_dir.
ExperimentConfig parse_experiment(const std::string& ini_text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Texture QP after the method's offset; throws RangeError outside 0..63.
int effective_texture_qp(const MethodConfig& method, const QpPair& qp);

// Weights trained for the base QP nearest to `base_qp` (ties go to the lower QP).
std::pair<int, std::filesystem::path> select_weights(const PostprocConfig& pp, int base_qp);

}  // namespace rqpipe
