#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rqpipe/config.hpp"
#include "rqpipe/metrics.hpp"

namespace rqpipe {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ArtifactRecord {
  std::string role;  // "reconstruction", "bitstream", ...
  std::string path;  // relative to the experiment output directory
  std::string sha256;
};

// One (sequence, method, QP) job.
struct JobRecord {
  std::string sequence;
  std::string method;
  int qp_index = 0;
  QpPair base_qp;
  int qp_texture = 0;  // after the method offset
  int qp_depth = 0;
  std::string status = "ok";  // ok | failed
  std::string error;
  std::string tool_output;
  int frames = 0;
  double frame_rate = 0.0;
  std::uint64_t total_bits = 0;
  double bitrate_kbps = 0.0;
  std::map<std::string, QualityScore> scores;
  std::map<std::string, double> stage_seconds;
  std::vector<ArtifactRecord> artifacts;
  std::string reference_sha256;
  int reference_width = 0;
  int reference_height = 0;
  std::vector<std::string> notes;
  std::string toolkit_version;
  std::string timestamp;
  nlohmann::json config;

  bool ok() const { return status == "ok"; }
  std::string key() const;
};

std::string job_key(const std::string& sequence, const std::string& method, int qp_index);

nlohmann::json to_json(const JobRecord& r);
JobRecord job_from_json(const nlohmann::json& j);

// Reads every record. A final line cut short by a crash is ignored; any other
// malformed line is a ParseError.
std::vector<JobRecord> read_manifest(const std::filesystem::path& path);

// Latest record per job key, in first-appearance order.
std::vector<JobRecord> latest_records(const std::vector<JobRecord>& records);

// Appends one JSON line per record, flushed immediately; safe across threads.
class ManifestWriter {
 public:
  explicit ManifestWriter(const std::filesystem::path& path);
  void append(const JobRecord& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

}  // namespace rqpipe
