#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rqpipe/config.hpp"
#include "rqpipe/manifest.hpp"

namespace rqpipe {

// Stage names used in JobRecord::stage_seconds, in pipeline order.
inline const std::vector<std::string> kStages{"downsample", "encode", "decode", "upsample", "postprocess", "metrics"};

struct RunOptions {
  int workers = 0;      // overrides the config when > 0; RQPIPE_WORKERS overrides both
  bool resume = true;   // skip jobs whose records and artifacts are intact
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  std::filesystem::path manifest_path;
  std::vector<JobRecord> records;  // one per job, in job order
  int executed = 0;
  int skipped = 0;
  int failed = 0;
  int workers = 1;
};

// Worker count after applying options, RQPIPE_WORKERS and the config.
int resolve_workers(const ExperimentConfig& config, int requested);

// Runs every (sequence, method, QP) job and appends one record per executed
// job to <output_dir>/manifest.jsonl. Configuration problems (unreadable
// sequences, missing or mismatched weights, bad templates) throw before any
// job starts; a failing job is recorded and the run continues.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::filesystem::path manifest_path(const ExperimentConfig& config);

}  // namespace rqpipe
