#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rqpipe/frame_io.hpp"

namespace rqpipe {

enum class Aggregation {
  MeanOfPerFrame,  // arithmetic mean of per-frame values (infinite PSNR capped first)
  FromMeanMse      // PSNR of the mean MSE over all frames
};

std::string to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct QualityScore {
  std::string metric_id;
  std::vector<double> per_frame;
  double sequence_value = 0.0;
  Aggregation aggregation = Aggregation::MeanOfPerFrame;
  // Identity of the producing tool ("rqpipe" for native metrics).
  std::string tool;
  std::string tool_version;
};

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse_plane(const Plane& a, const Plane& b);

// Luma PSNR, +infinity when the planes are identical.
double psnr_y(const Frame& a, const Frame& b, int bit_depth);
double psnr_from_mse(double mse, int bit_depth);

struct PsnrOptions {
  Aggregation aggregation = Aggregation::MeanOfPerFrame;
  double cap_db = 100.0;  // substitute for +infinity before averaging
};

// Per-frame and aggregated PSNR-Y of `dist` against `ref`.
QualityScore sequence_psnr_y(std::span<const Frame> ref, std::span<const Frame> dist,
                             const PsnrOptions& options = {});

// A quality metric computed by an external program.
//
// The command template is expanded with {ref} {dist} {w} {h} {bitdepth}
// (required) and optionally {out}, {frames} and {chroma}. When {out} is
// present the tool is expected to write its scores to that file, otherwise its
// standard output is parsed. Accepted output is one score per line, or
// key=value summary lines.
struct ExternalMetricSpec {
  std::string metric_id;
  std::string command_template;
  std::string version_command;  // optional, run once to capture a version string
};

// Throws ConfigError when a required placeholder is missing.
void validate_metric_template(const std::string& command_template);

QualityScore external_metric(const ExternalMetricSpec& metric, const std::filesystem::path& ref_path,
                             const std::filesystem::path& dist_path, const VideoSpec& spec);

// Parses the external output contract. Exposed for testing.
QualityScore parse_metric_output(const std::string& metric_id, const std::string& text);

namespace reference {

double mse_plane_serial(const Plane& a, const Plane& b);

}  // namespace reference

}  // namespace rqpipe
