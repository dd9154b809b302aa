#include "rqpipe/manifest.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <iterator>

#include <openssl/evp.h>

#include "rqpipe/error.hpp"

namespace rqpipe {

using nlohmann::json;

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw Error("sha256 final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

// JSON has no infinity; perfect frames are written as the string "inf".
json score_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

double score_from(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw ParseError("bad score value '" + s + "'");
  }
  if (j.is_null()) return NAN;
  return j.get<double>();
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string job_key(const std::string& sequence, const std::string& method, int qp_index) {
  return sequence + "/" + method + "/" + std::to_string(qp_index);
}

std::string JobRecord::key() const { return job_key(sequence, method, qp_index); }

json to_json(const JobRecord& r) {
  json j;
  j["sequence"] = r.sequence;
  j["method"] = r.method;
  j["qp_index"] = r.qp_index;
  j["base_qp"] = {{"texture", r.base_qp.qp_texture}, {"depth", r.base_qp.qp_depth}};
  j["qp_texture"] = r.qp_texture;
  j["qp_depth"] = r.qp_depth;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.tool_output.empty()) j["tool_output"] = r.tool_output;
  j["frames"] = r.frames;
  j["frame_rate"] = r.frame_rate;
  j["total_bits"] = r.total_bits;
  j["bitrate_kbps"] = r.bitrate_kbps;
  json scores = json::object();
  for (const auto& [id, s] : r.scores) {
    json pf = json::array();
    for (double v : s.per_frame) pf.push_back(score_value(v));
    scores[id] = {{"value", score_value(s.sequence_value)},
                  {"per_frame", pf},
                  {"aggregation", to_string(s.aggregation)},
                  {"tool", s.tool},
                  {"tool_version", s.tool_version}};
  }
  j["scores"] = scores;
  j["stage_seconds"] = r.stage_seconds;
  j["artifacts"] = json::array();
  for (const auto& a : r.artifacts) j["artifacts"].push_back({{"role", a.role}, {"path", a.path}, {"sha256", a.sha256}});
  j["reference"] = {{"sha256", r.reference_sha256}, {"width", r.reference_width}, {"height", r.reference_height}};
  j["notes"] = r.notes;
  j["toolkit_version"] = r.toolkit_version;
  j["timestamp"] = r.timestamp;
  j["config"] = r.config;
  return j;
}

JobRecord job_from_json(const json& j) {
  try {
    JobRecord r;
    r.sequence = j.at("sequence").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.qp_index = j.at("qp_index").get<int>();
    r.base_qp = {j.at("base_qp").at("texture").get<int>(), j.at("base_qp").at("depth").get<int>()};
    r.qp_texture = j.at("qp_texture").get<int>();
    r.qp_depth = j.at("qp_depth").get<int>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", "");
    r.tool_output = j.value("tool_output", "");
    r.frames = j.at("frames").get<int>();
    r.frame_rate = j.at("frame_rate").get<double>();
    r.total_bits = j.at("total_bits").get<std::uint64_t>();
    r.bitrate_kbps = j.at("bitrate_kbps").get<double>();
    for (const auto& [id, s] : j.at("scores").items()) {
      QualityScore q;
      q.metric_id = id;
      q.sequence_value = score_from(s.at("value"));
      for (const auto& v : s.at("per_frame")) q.per_frame.push_back(score_from(v));
      q.aggregation = parse_aggregation(s.at("aggregation").get<std::string>());
      q.tool = s.at("tool").get<std::string>();
      q.tool_version = s.at("tool_version").get<std::string>();
      r.scores[id] = std::move(q);
    }
    r.stage_seconds = j.at("stage_seconds").get<std::map<std::string, double>>();
    for (const auto& a : j.at("artifacts")) {
      r.artifacts.push_back({a.at("role").get<std::string>(), a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
    }
    r.reference_sha256 = j.at("reference").at("sha256").get<std::string>();
    r.reference_width = j.at("reference").at("width").get<int>();
    r.reference_height = j.at("reference").at("height").get<int>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    r.toolkit_version = j.at("toolkit_version").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config = j.value("config", json{});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest record: ") + e.what());
  }
}

std::vector<JobRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);

  std::vector<JobRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      if (i + 1 == lines.size()) break;  // torn final append
      throw ParseError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    out.push_back(job_from_json(j));
  }
  return out;
}

std::vector<JobRecord> latest_records(const std::vector<JobRecord>& records) {
  std::vector<JobRecord> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    const auto [it, inserted] = index.emplace(r.key(), out.size());
    if (inserted) out.push_back(r);
    else out[it->second] = r;
  }
  return out;
}

ManifestWriter::ManifestWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Drop a torn last line (crash mid-write) so the next record starts clean.
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!text.empty() && text.back() != '\n') {
      const auto last = text.find_last_of('\n');
      std::filesystem::resize_file(path, last == std::string::npos ? 0 : last + 1);
    }
  }
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open manifest '" + path.string() + "' for appending");
}

void ManifestWriter::append(const JobRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::lock_guard lock(mutex_);
  out_ << line << std::flush;
  if (!out_) throw IoError("write failed for manifest '" + path_.string() + "'");
}

}  // namespace rqpipe
