#include "rqpipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <memory>
#include <mutex>
#include <thread>

#include "rqpipe/cnn.hpp"
#include "rqpipe/error.hpp"
#include "rqpipe/mock_codec.hpp"
#include "rqpipe/omp_compat.hpp"
#include "rqpipe/process.hpp"
#include "rqpipe/version.hpp"

namespace rqpipe {

namespace fs = std::filesystem;

namespace {

struct PreparedSequence {
  const SequenceConfig* cfg = nullptr;
  VideoSpec spec;  // frame_count resolved
  std::string sha256;
  std::optional<VideoSpec> depth_spec;
};

struct PreparedMethod {
  const MethodConfig* cfg = nullptr;
  std::shared_ptr<const cnn::NetworkSpec> net;
  std::map<int, std::shared_ptr<const cnn::WeightSet>> weights;  // keyed like PostprocConfig::weights
  int overlap = 0;
};

struct Job {
  std::size_t index = 0;
  const PreparedSequence* seq = nullptr;
  const PreparedMethod* method = nullptr;
  int qp_index = 0;
  QpPair qp;
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class StageTimer {
 public:
  StageTimer(JobRecord& r, const std::string& stage) : r_(r), stage_(stage), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
    r_.stage_seconds[stage_] += d.count();
  }

 private:
  JobRecord& r_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

VideoSpec scaled_spec(const VideoSpec& s, ScaleFactor f) {
  VideoSpec out = s;
  out.width = f.apply(s.width);
  out.height = f.apply(s.height);
  out.validate();
  return out;
}

std::string job_stem(const Job& job) {
  return job.seq->cfg->id + "_" + job.method->cfg->label + "_qp" + std::to_string(job.qp_index);
}

std::map<std::string, std::string> codec_values(const VideoSpec& spec, int qp, double fps) {
  return {{"w", std::to_string(spec.width)},          {"h", std::to_string(spec.height)},
          {"bitdepth", std::to_string(spec.bit_depth)}, {"frames", std::to_string(spec.frame_count)},
          {"chroma", to_string(spec.chroma)},          {"qp", std::to_string(qp)},
          {"fps", std::to_string(fps)}};
}

struct CodedResult {
  std::vector<Frame> decoded;
  std::uint64_t bits = 0;
};

// One stream through the codec; encode and decode are timed separately.
CodedResult code_stream(const Job& job, const std::vector<Frame>& frames, const VideoSpec& spec, int qp,
                        const std::string& suffix, const fs::path& work_dir, const fs::path& out_dir, JobRecord& r) {
  const CodecConfig& codec = job.method->cfg->codec;
  CodedResult out;
  if (codec.kind == CodecConfig::Kind::Mock) {
    std::vector<mock::CodedFrame> coded;
    {
      StageTimer t(r, "encode");
      coded = mock::encode_sequence(frames, qp);
    }
    for (const auto& c : coded) out.bits += c.bits;
    StageTimer t(r, "decode");
    out.decoded = mock::decode_sequence(coded);
    return out;
  }

  const std::string stem = job_stem(job) + suffix;
  const fs::path input = work_dir / (stem + "_input.yuv");
  const fs::path bitstream = work_dir / expand_template(codec.bitstream_pattern, {{"job", stem}});
  const fs::path decoded = work_dir / (stem + "_decoded.yuv");
  write_sequence(frames, spec, input);

  auto values = codec_values(spec, qp, job.seq->cfg->frame_rate);
  auto run = [&](const std::string& tmpl, const fs::path& in, const fs::path& outp, const char* stage) {
    values["in"] = shell_quote(in.string());
    values["out"] = shell_quote(outp.string());
    const auto cmd = expand_template(tmpl, values);
    CommandResult res;
    {
      StageTimer t(r, stage);
      res = run_command(cmd);
    }
    if (res.exit_code != 0) {
      throw ToolError(std::string(stage) + " command exited with status " + std::to_string(res.exit_code), res.exit_code,
                      res.err.empty() ? res.out : res.err);
    }
  };
  run(codec.encode_cmd, input, bitstream, "encode");
  if (!fs::exists(bitstream)) throw ToolError("encoder did not produce " + bitstream.string(), 0, "");
  out.bits = static_cast<std::uint64_t>(fs::file_size(bitstream)) * 8u;
  r.artifacts.push_back({"bitstream" + suffix, fs::relative(bitstream, out_dir).string(),
                         sha256_file(bitstream)});
  run(codec.decode_cmd, bitstream, decoded, "decode");
  out.decoded = read_sequence(decoded, spec);
  fs::remove(input);
  fs::remove(decoded);
  return out;
}

std::vector<Frame> resample_all(const std::vector<Frame>& frames, ScaleFactor f, const ResampleFilter& down,
                                const ResampleFilter& up) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& fr : frames) out.push_back(resample_frame(fr, f, down, up));
  return out;
}

struct Context {
  const ExperimentConfig* cfg = nullptr;
  nlohmann::json config_json;
  fs::path out_dir;
};

JobRecord run_job(const Job& job, const Context& ctx) {
  const auto& seq = *job.seq;
  const auto& method = *job.method->cfg;
  JobRecord r;
  r.sequence = seq.cfg->id;
  r.method = method.label;
  r.qp_index = job.qp_index;
  r.base_qp = job.qp;
  r.qp_texture = effective_texture_qp(method, job.qp);
  r.qp_depth = job.qp.qp_depth;
  r.frames = seq.spec.frame_count;
  r.frame_rate = seq.cfg->frame_rate;
  r.reference_sha256 = seq.sha256;
  r.reference_width = seq.spec.width;
  r.reference_height = seq.spec.height;
  r.toolkit_version = kToolkitVersion;
  r.config = ctx.config_json;
  if (method.qp_offset != 0) {
    r.notes.push_back("texture QP " + std::to_string(job.qp.qp_texture) + " shifted by " +
                      std::to_string(method.qp_offset) + "; depth QP left at " + std::to_string(job.qp.qp_depth));
  }

  const fs::path work_dir = ctx.out_dir / "artifacts" / seq.cfg->id / method.label;
  fs::create_directories(work_dir);

  try {
    const auto original = read_sequence(seq.cfg->path, seq.spec);
    const bool rescale = !method.scale.is_identity();
    const VideoSpec coded_spec = rescale ? scaled_spec(seq.spec, method.scale) : seq.spec;

    std::vector<Frame> work;
    if (rescale) {
      StageTimer t(r, "downsample");
      work = resample_all(original, method.scale, method.down_filter, method.up_filter);
    }
    const auto& coded_input = rescale ? work : original;
    auto texture = code_stream(job, coded_input, coded_spec, r.qp_texture, "", work_dir, ctx.out_dir, r);
    r.total_bits = texture.bits;

    if (seq.depth_spec) {
      auto depth = read_sequence(*seq.cfg->depth_path, *seq.depth_spec);
      VideoSpec depth_coded = *seq.depth_spec;
      if (rescale) {
        StageTimer t(r, "downsample");
        depth = resample_all(depth, method.scale, method.depth_filter, method.depth_filter);
        depth_coded = scaled_spec(depth_coded, method.scale);
      }
      const auto d = code_stream(job, depth, depth_coded, r.qp_depth, "_depth", work_dir, ctx.out_dir, r);
      r.total_bits += d.bits;
      r.notes.push_back("bitrate sums texture and depth streams");
    }

    std::vector<Frame> result = std::move(texture.decoded);
    if (rescale) {
      StageTimer t(r, "upsample");
      result = resample_all(result, method.scale.inverse(), method.down_filter, method.up_filter);
    }

    if (method.postproc) {
      const auto& pp = *method.postproc;
      const auto [group, path] = select_weights(pp, job.qp.qp_texture);
      const auto& weights = *job.method->weights.at(group);
      const auto& net = *job.method->net;
      r.notes.push_back("post-processing weights for base QP " + std::to_string(job.qp.qp_texture) + ": " +
                        path.filename().string() + " (group " + std::to_string(group) + ", nearest)");
      r.notes.push_back(pp.chroma ? "post-processing applied to luma and chroma" : "post-processing applied to luma only");
      StageTimer t(r, "postprocess");
      auto apply = [&](const Plane& p) {
        return pp.tile > 0 ? cnn::tiled_apply(net, weights, p, pp.tile, job.method->overlap)
                           : cnn::apply_network(net, weights, p);
      };
      for (auto& f : result) {
        f.y = apply(f.y);
        if (pp.chroma && f.cb) {
          f.cb = apply(*f.cb);
          f.cr = apply(*f.cr);
        }
      }
    }

    for (const auto& f : result) {
      if (f.width() != seq.spec.width || f.height() != seq.spec.height) {
        throw DimensionError("reconstruction is " + std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                             ", native resolution is " + seq.spec.to_string());
      }
    }
    const fs::path recon = work_dir / (job_stem(job) + "_recon.yuv");
    write_sequence(result, seq.spec, recon);
    r.artifacts.push_back({"reconstruction", fs::relative(recon, ctx.out_dir).string(), sha256_file(recon)});

    {
      StageTimer t(r, "metrics");
      // Always against the native-resolution original.
      if (ctx.cfg->metrics.psnr_y) r.scores["psnr_y"] = sequence_psnr_y(original, result, ctx.cfg->psnr);
      for (const auto& m : ctx.cfg->metrics.external) r.scores[m.metric_id] = external_metric(m, seq.cfg->path, recon, seq.spec);
    }

    r.bitrate_kbps = static_cast<double>(r.total_bits) * seq.cfg->frame_rate / seq.spec.frame_count / 1000.0;
  } catch (const ToolError& e) {
    r.status = "failed";
    r.error = e.what();
    r.tool_output = e.output();
  } catch (const Error& e) {
    r.status = "failed";
    r.error = e.what();
  }
  r.timestamp = utc_timestamp();
  return r;
}

bool record_intact(const JobRecord& r, const Context& ctx) {
  if (!r.ok() || r.config != ctx.config_json) return false;
  for (const auto& a : r.artifacts) {
    const fs::path p = ctx.out_dir / a.path;
    std::error_code ec;
    if (!fs::exists(p, ec)) return false;
    if (sha256_file(p) != a.sha256) return false;
  }
  return !r.artifacts.empty();
}

std::vector<PreparedSequence> prepare_sequences(const ExperimentConfig& cfg) {
  std::vector<PreparedSequence> out;
  for (const auto& s : cfg.sequences) {
    PreparedSequence p;
    p.cfg = &s;
    p.spec = s.spec;
    const std::string where = "sequence '" + s.id + "'";
    if (!fs::exists(s.path)) throw ConfigError(where + ": file '" + s.path.string() + "' does not exist");
    const auto acc = account_file(s.path, s.spec);
    if (p.spec.frame_count == 0) p.spec.frame_count = static_cast<int>(acc.frames);
    if (p.spec.frame_count == 0) throw ConfigError(where + ": file holds no complete frame");
    if (acc.frames < static_cast<std::uint64_t>(p.spec.frame_count)) {
      throw ConfigError(where + ": needs " + std::to_string(p.spec.frame_count) + " frames, file holds " +
                        std::to_string(acc.frames));
    }
    if (s.depth_spec) {
      if (!fs::exists(*s.depth_path)) throw ConfigError(where + ": depth file '" + s.depth_path->string() + "' does not exist");
      p.depth_spec = *s.depth_spec;
      p.depth_spec->frame_count = p.spec.frame_count;
      const auto dacc = account_file(*s.depth_path, *p.depth_spec);
      if (dacc.frames < static_cast<std::uint64_t>(p.spec.frame_count)) {
        throw ConfigError(where + ": depth file holds " + std::to_string(dacc.frames) + " frames, need " +
                          std::to_string(p.spec.frame_count));
      }
    }
    p.sha256 = sha256_file(s.path);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PreparedMethod> prepare_methods(const ExperimentConfig& cfg, const std::vector<PreparedSequence>& seqs) {
  std::vector<PreparedMethod> out;
  for (const auto& m : cfg.methods) {
    PreparedMethod p;
    p.cfg = &m;
    const std::string where = "method '" + m.label + "'";
    for (const auto& s : seqs) {
      try {
        if (!m.scale.is_identity()) scaled_spec(s.spec, m.scale);
        if (s.depth_spec && !m.scale.is_identity()) scaled_spec(*s.depth_spec, m.scale);
      } catch (const Error& e) {
        throw ConfigError(where + " on sequence '" + s.cfg->id + "': " + e.what());
      }
    }
    if (m.codec.kind == CodecConfig::Kind::External) {
      auto values = codec_values(VideoSpec{}, 0, 0.0);
      values["in"] = values["out"] = "x";
      expand_template(m.codec.encode_cmd, values);
      expand_template(m.codec.decode_cmd, values);
      expand_template(m.codec.bitstream_pattern, {{"job", "x"}});
    }
    if (m.postproc) {
      const auto& pp = *m.postproc;
      try {
        p.net = std::make_shared<const cnn::NetworkSpec>(cnn::load_network(pp.net));
        p.net->validate();
      } catch (const Error& e) {
        throw ConfigError(where + ": network '" + pp.net + "': " + e.what());
      }
      for (const auto& q : cfg.qps) select_weights(pp, q.qp_texture);
      for (const auto& [group, path] : pp.weights) {
        if (!fs::exists(path)) {
          throw ConfigError(where + ": weights for QP group " + std::to_string(group) + " missing: '" + path.string() + "'");
        }
        try {
          auto w = std::make_shared<const cnn::WeightSet>(cnn::read_weight_file(path));
          cnn::check_weights(*p.net, *w);
          p.weights[group] = std::move(w);
        } catch (const Error& e) {
          throw ConfigError(where + ": weights '" + path.string() + "': " + e.what());
        }
      }
      const int radius = p.net->receptive_radius();
      p.overlap = pp.overlap < 0 ? radius : pp.overlap;
      if (pp.tile > 0 && p.overlap < radius) {
        throw ConfigError(where + ": tile overlap " + std::to_string(p.overlap) + " is below the receptive radius " +
                          std::to_string(radius));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

fs::path manifest_path(const ExperimentConfig& config) { return config.output_dir / "manifest.jsonl"; }

int resolve_workers(const ExperimentConfig& config, int requested) {
  if (const char* env = std::getenv("RQPIPE_WORKERS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("RQPIPE_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<int>(v);
  }
  if (requested > 0) return requested;
  if (config.workers > 0) return config.workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  // Everything that can be checked up front is checked before any job runs.
  const auto seqs = prepare_sequences(config);
  const auto methods = prepare_methods(config, seqs);
  if (std::none_of(config.methods.begin(), config.methods.end(),
                   [&](const MethodConfig& m) { return m.label == config.anchor; })) {
    log("warning: no method is labelled '" + config.anchor + "'; reports will need --anchor");
  }

  Context ctx;
  ctx.cfg = &config;
  ctx.config_json = config.to_json();
  ctx.out_dir = config.output_dir;
  fs::create_directories(ctx.out_dir);

  RunSummary summary;
  summary.manifest_path = manifest_path(config);

  std::map<std::string, JobRecord> previous;
  if (options.resume && fs::exists(summary.manifest_path)) {
    for (auto& r : latest_records(read_manifest(summary.manifest_path))) previous.emplace(r.key(), std::move(r));
  }

  std::vector<Job> jobs;
  for (const auto& s : seqs) {
    for (const auto& m : methods) {
      for (std::size_t q = 0; q < config.qps.size(); ++q) {
        jobs.push_back({jobs.size(), &s, &m, static_cast<int>(q), config.qps[q]});
      }
    }
  }

  std::vector<JobRecord> results(jobs.size());
  std::vector<char> pending(jobs.size(), 1);
  for (const auto& job : jobs) {
    const auto it = previous.find(job_key(job.seq->cfg->id, job.method->cfg->label, job.qp_index));
    if (it != previous.end() && record_intact(it->second, ctx)) {
      results[job.index] = it->second;
      pending[job.index] = 0;
      ++summary.skipped;
    }
  }
  if (summary.skipped > 0) log("resuming: " + std::to_string(summary.skipped) + " job(s) already complete");

  ManifestWriter writer(summary.manifest_path);
  const int workers = std::max(1, std::min<int>(resolve_workers(config, options.workers),
                                                static_cast<int>(jobs.size()) - summary.skipped));
  summary.workers = workers;
  const int caller_threads = omp_get_max_threads();
  const int omp_threads = std::max(1, static_cast<int>(std::thread::hardware_concurrency()) / workers);

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr fatal;
  auto worker = [&] {
    omp_set_num_threads(omp_threads);
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      if (!pending[i]) continue;
      try {
        JobRecord r = run_job(jobs[i], ctx);
        writer.append(r);
        {
          std::lock_guard lock(log_mutex);
          log(r.key() + ": " + (r.ok() ? "ok, " + std::to_string(r.bitrate_kbps) + " kbps" : "FAILED: " + r.error));
        }
        results[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!fatal) fatal = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  omp_set_num_threads(caller_threads);
  if (fatal) std::rethrow_exception(fatal);

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (pending[i]) ++summary.executed;
    if (!results[i].ok()) ++summary.failed;
  }
  summary.records = std::move(results);
  return summary;
}

}  // namespace rqpipe
