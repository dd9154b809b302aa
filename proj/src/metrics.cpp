#include "rqpipe/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rqpipe/error.hpp"
#include "rqpipe/omp_compat.hpp"
#include "rqpipe/process.hpp"
#include "rqpipe/version.hpp"

namespace rqpipe {

std::string to_string(Aggregation a) {
  return a == Aggregation::MeanOfPerFrame ? "mean_of_per_frame" : "from_mean_mse";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean_of_per_frame" || text == "mean") return Aggregation::MeanOfPerFrame;
  if (text == "from_mean_mse" || text == "mse") return Aggregation::FromMeanMse;
  throw ParseError("unknown aggregation '" + std::string(text) + "'");
}

namespace {

void require_same_shape(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError("plane size mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                         " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

}  // namespace

double mse_plane(const Plane& a, const Plane& b) {
  require_same_shape(a, b);
  const std::int64_t n = static_cast<std::int64_t>(a.samples.size());
  if (n == 0) return 0.0;
  const std::uint16_t* pa = a.samples.data();
  const std::uint16_t* pb = b.samples.data();
  // Squared differences are integers, so the reduction is exact and
  // independent of thread count.
  std::uint64_t sum = 0;
#pragma omp parallel for reduction(+ : sum) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t d = static_cast<std::int64_t>(pa[i]) - pb[i];
    sum += static_cast<std::uint64_t>(d * d);
  }
  return static_cast<double>(sum) / static_cast<double>(n);
}

double psnr_from_mse(double mse, int bit_depth) {
  if (mse <= 0.0) return kInfinitePsnr;
  const double peak = static_cast<double>((1 << bit_depth) - 1);
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr_y(const Frame& a, const Frame& b, int bit_depth) {
  if (a.bit_depth() != b.bit_depth() || a.bit_depth() != bit_depth) {
    throw DimensionError("bit depth mismatch: " + std::to_string(a.bit_depth()) + " vs " +
                         std::to_string(b.bit_depth()) + " (requested " + std::to_string(bit_depth) + ")");
  }
  return psnr_from_mse(mse_plane(a.y, b.y), bit_depth);
}

QualityScore sequence_psnr_y(std::span<const Frame> ref, std::span<const Frame> dist, const PsnrOptions& options) {
  if (ref.size() != dist.size()) {
    throw DimensionError("frame count mismatch: " + std::to_string(ref.size()) + " vs " +
                         std::to_string(dist.size()));
  }
  QualityScore score;
  score.metric_id = "psnr_y";
  score.aggregation = options.aggregation;
  score.tool = "rqpipe";
  score.tool_version = kToolkitVersion;
  if (ref.empty()) return score;

  const int depth = ref.front().bit_depth();
  double mse_total = 0.0;
  double capped_total = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i].bit_depth() != dist[i].bit_depth()) {
      throw DimensionError("bit depth mismatch at frame " + std::to_string(i));
    }
    const double mse = mse_plane(ref[i].y, dist[i].y);
    const double psnr = psnr_from_mse(mse, depth);
    score.per_frame.push_back(psnr);
    mse_total += mse;
    capped_total += std::min(psnr, options.cap_db);
  }
  const double n = static_cast<double>(ref.size());
  if (options.aggregation == Aggregation::MeanOfPerFrame) {
    score.sequence_value = capped_total / n;
  } else {
    score.sequence_value = std::min(psnr_from_mse(mse_total / n, depth), options.cap_db);
  }
  return score;
}

// ---------------------------------------------------------------------------

void validate_metric_template(const std::string& command_template) {
  const auto names = template_placeholders(command_template);
  for (const char* required : {"ref", "dist", "w", "h", "bitdepth"}) {
    if (std::find(names.begin(), names.end(), required) == names.end()) {
      throw ConfigError("metric command template is missing {" + std::string(required) + "}: '" +
                        command_template + "'");
    }
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse score '" + s + "'");
  }
  return v;
}

}  // namespace

QualityScore parse_metric_output(const std::string& metric_id, const std::string& text) {
  QualityScore score;
  score.metric_id = metric_id;
  score.aggregation = Aggregation::MeanOfPerFrame;

  std::vector<std::pair<std::string, std::string>> summary;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq != std::string::npos) {
      summary.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    } else {
      score.per_frame.push_back(parse_real(t, line_no));
    }
  }

  if (!summary.empty()) {
    if (!score.per_frame.empty()) throw ParseError("metric output mixes per-frame lines and key=value lines");
    auto pick = summary.front();
    for (const char* key : {"score", "mean"}) {
      for (const auto& kv : summary) if (kv.first == key) pick = kv;
    }
    for (const auto& kv : summary) if (kv.first == metric_id) pick = kv;
    score.sequence_value = parse_real(pick.second, 0);
    return score;
  }
  if (score.per_frame.empty()) throw ParseError("metric output contains no scores");
  score.sequence_value =
      std::accumulate(score.per_frame.begin(), score.per_frame.end(), 0.0) / static_cast<double>(score.per_frame.size());
  return score;
}

QualityScore external_metric(const ExternalMetricSpec& metric, const std::filesystem::path& ref_path,
                             const std::filesystem::path& dist_path, const VideoSpec& spec) {
  validate_metric_template(metric.command_template);
  const auto names = template_placeholders(metric.command_template);
  const bool to_file = std::find(names.begin(), names.end(), "out") != names.end();
  const auto out_path = dist_path.string() + "." + metric.metric_id + ".scores.txt";

  const std::map<std::string, std::string> values{
      {"ref", shell_quote(ref_path.string())},
      {"dist", shell_quote(dist_path.string())},
      {"w", std::to_string(spec.width)},
      {"h", std::to_string(spec.height)},
      {"bitdepth", std::to_string(spec.bit_depth)},
      {"frames", std::to_string(spec.frame_count)},
      {"chroma", to_string(spec.chroma)},
      {"out", shell_quote(out_path)},
  };
  const auto command = expand_template(metric.command_template, values);
  const auto result = run_command(command);
  if (result.exit_code != 0) {
    throw ToolError("metric '" + metric.metric_id + "' exited with status " + std::to_string(result.exit_code) +
                        ": " + result.err,
                    result.exit_code, result.err);
  }

  std::string text = result.out;
  if (to_file) {
    std::ifstream in(out_path);
    if (!in) throw ParseError("metric '" + metric.metric_id + "' did not write " + out_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  auto score = parse_metric_output(metric.metric_id, text);
  if (!score.per_frame.empty() && spec.frame_count > 0 &&
      score.per_frame.size() != static_cast<std::size_t>(spec.frame_count)) {
    throw ParseError("metric '" + metric.metric_id + "' produced " + std::to_string(score.per_frame.size()) +
                     " per-frame scores for " + std::to_string(spec.frame_count) + " frames");
  }

  const auto space = metric.command_template.find(' ');
  score.tool = metric.command_template.substr(0, space);
  score.tool_version = "unknown";
  if (!metric.version_command.empty()) {
    const auto v = run_command(metric.version_command);
    const auto first_line = trim(v.out.substr(0, v.out.find('\n')));
    if (v.exit_code == 0 && !first_line.empty()) score.tool_version = first_line;
  }
  return score;
}

}  // namespace rqpipe
