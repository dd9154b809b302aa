#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rqpipe/bd_stats.hpp"
#include "rqpipe/frame_io.hpp"
#include "rqpipe/manifest.hpp"

namespace rqpipe {

struct ReportOptions {
  std::string anchor = "Anchor";
  Interpolation interpolation = Interpolation::Pchip;
};

// Rows are sequences, columns are (method, metric) pairs; cells hold the
// BD quality gain of the method over the anchor.
struct BdTable {
  struct Column {
    std::string method;
    std::string metric;
  };
  std::vector<Column> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<std::optional<double>>> cells;  // [row][column]
  std::vector<std::optional<double>> total;               // mean over rows with a value

  std::string to_csv() const;
};

struct StageTiming {
  std::string method;
  std::map<std::string, double> seconds_per_frame;  // per stage, averaged over jobs
  double decode_side = 0.0;                         // decode + upsample + postprocess
};

struct TimingSummary {
  std::vector<StageTiming> methods;
  std::string text;  // human-readable, percentages relative to the anchor
  std::string to_csv(const std::string& anchor) const;
};

struct ReportBundle {
  std::vector<std::filesystem::path> rq_csvs;
  std::filesystem::path bd_table_csv;
  std::filesystem::path timing_txt;
  std::filesystem::path timing_csv;
  BdTable bd;
  TimingSummary timing;
  std::vector<std::string> warnings;
};

// RQ points of one method on one sequence for one metric, from successful jobs.
RQCurve rq_curve(const std::vector<JobRecord>& records, const std::string& sequence, const std::string& method,
                 const std::string& metric);

BdTable bd_table(const std::vector<JobRecord>& records, const ReportOptions& options,
                 std::vector<std::string>* warnings = nullptr);
TimingSummary timing_summary(const std::vector<JobRecord>& records, const std::string& anchor);

// Writes rq_<sequence>_<metric>.csv files, bd_table.csv and the timing summary
// into out_dir. Throws ConfigError when no record carries the anchor label.
ReportBundle assemble_report(const std::vector<JobRecord>& records, const std::filesystem::path& out_dir,
                             const ReportOptions& options = {});

// Luma patch as binary PGM; 10-bit samples are shifted right by 2.
void dump_patch(const std::filesystem::path& frames_path, const VideoSpec& spec, int frame_index, int x, int y, int w,
                int h, const std::filesystem::path& out);

}  // namespace rqpipe
