#include "rqpipe/report.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rqpipe/error.hpp"
#include "rqpipe/pipeline.hpp"

namespace rqpipe {

namespace fs = std::filesystem;

namespace {

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(2) << v << "%";
  return s.str();
}

// CSV field quoting for labels that may carry commas.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

struct Ordering {
  std::vector<std::string> sequences, methods, metrics;
};

Ordering ordering(const std::vector<JobRecord>& records) {
  Ordering o;
  for (const auto& r : records) {
    push_unique(o.sequences, r.sequence);
    push_unique(o.methods, r.method);
    for (const auto& [id, s] : r.scores) push_unique(o.metrics, id);
  }
  // Built-in metric first, the rest alphabetical.
  std::stable_sort(o.metrics.begin(), o.metrics.end(), [](const std::string& a, const std::string& b) {
    if ((a == "psnr_y") != (b == "psnr_y")) return a == "psnr_y";
    return a < b;
  });
  return o;
}

}  // namespace

RQCurve rq_curve(const std::vector<JobRecord>& records, const std::string& sequence, const std::string& method,
                 const std::string& metric) {
  RQCurve c;
  c.label = sequence + "/" + method;
  c.metric_id = metric;
  std::vector<std::pair<int, RQPoint>> pts;
  for (const auto& r : records) {
    if (r.sequence != sequence || r.method != method || !r.ok()) continue;
    const auto it = r.scores.find(metric);
    if (it == r.scores.end()) continue;
    pts.push_back({r.qp_index, {r.bitrate_kbps, it->second.sequence_value}});
  }
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [i, p] : pts) c.points.push_back(p);
  return c;
}

std::string BdTable::to_csv() const {
  std::ostringstream s;
  s << "sequence";
  for (const auto& c : columns) s << ',' << csv_field(c.method + ":" + c.metric);
  s << '\n';
  auto row = [&](const std::string& label, const std::vector<std::optional<double>>& vals) {
    s << csv_field(label);
    for (const auto& v : vals) {
      s << ',';
      if (v) s << fmt(*v);
    }
    s << '\n';
  };
  for (std::size_t i = 0; i < rows.size(); ++i) row(rows[i], cells[i]);
  row("Total", total);
  return s.str();
}

BdTable bd_table(const std::vector<JobRecord>& records, const ReportOptions& options, std::vector<std::string>* warnings) {
  const auto o = ordering(records);
  if (std::find(o.methods.begin(), o.methods.end(), options.anchor) == o.methods.end()) {
    throw ConfigError("manifest has no jobs for the anchor method '" + options.anchor + "'");
  }
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };

  BdTable t;
  for (const auto& m : o.methods) {
    if (m == options.anchor) continue;
    for (const auto& metric : o.metrics) t.columns.push_back({m, metric});
  }
  t.rows = o.sequences;
  t.cells.assign(t.rows.size(), std::vector<std::optional<double>>(t.columns.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
      const auto& col = t.columns[j];
      const auto ref = rq_curve(records, t.rows[i], options.anchor, col.metric);
      const auto test = rq_curve(records, t.rows[i], col.method, col.metric);
      const std::string where = t.rows[i] + " " + col.method + " " + col.metric;
      try {
        const auto r = bd_quality(ref, test, options.interpolation);
        t.cells[i][j] = r.delta_quality;
        for (const auto& w : r.warnings) warn(where + ": " + w);
      } catch (const Error& e) {
        warn(where + ": no BD value (" + e.what() + ")");
      }
    }
  }
  t.total.assign(t.columns.size(), std::nullopt);
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.cells[i][j]) sum += *t.cells[i][j], ++n;
    }
    if (n > 0) t.total[j] = sum / n;
    if (n > 0 && n < static_cast<int>(t.rows.size())) {
      warn("Total for " + t.columns[j].method + ":" + t.columns[j].metric + " averages " + std::to_string(n) + " of " +
           std::to_string(t.rows.size()) + " sequences");
    }
  }
  return t;
}

TimingSummary timing_summary(const std::vector<JobRecord>& records, const std::string& anchor) {
  const auto o = ordering(records);
  TimingSummary ts;
  for (const auto& m : o.methods) {
    StageTiming st;
    st.method = m;
    int jobs = 0;
    for (const auto& r : records) {
      if (r.method != m || !r.ok() || r.frames <= 0) continue;
      ++jobs;
      for (const auto& [stage, sec] : r.stage_seconds) st.seconds_per_frame[stage] += sec / r.frames;
    }
    if (jobs == 0) continue;
    for (auto& [stage, v] : st.seconds_per_frame) v /= jobs;
    for (const char* s : {"decode", "upsample", "postprocess"}) {
      const auto it = st.seconds_per_frame.find(s);
      if (it != st.seconds_per_frame.end()) st.decode_side += it->second;
    }
    ts.methods.push_back(std::move(st));
  }

  std::ostringstream s;
  s << "Stage timing, seconds per frame (mean over successful jobs)\n";
  s << std::left << std::setw(16) << "method";
  for (const auto& stage : kStages) s << std::right << std::setw(13) << stage;
  s << std::setw(13) << "decode-side" << '\n';
  for (const auto& st : ts.methods) {
    s << std::left << std::setw(16) << st.method << std::right;
    for (const auto& stage : kStages) {
      const auto it = st.seconds_per_frame.find(stage);
      s << std::setw(13) << (it == st.seconds_per_frame.end() ? std::string("-") : fmt(it->second));
    }
    s << std::setw(13) << fmt(st.decode_side) << '\n';
  }

  const auto anchor_it = std::find_if(ts.methods.begin(), ts.methods.end(),
                                      [&](const StageTiming& st) { return st.method == anchor; });
  if (anchor_it != ts.methods.end()) {
    s << "\nChange relative to " << anchor << "\n";
    for (const auto& st : ts.methods) {
      if (st.method == anchor) continue;
      s << "  " << st.method << ":";
      for (const auto& stage : kStages) {
        const auto mine = st.seconds_per_frame.find(stage);
        const auto ref = anchor_it->seconds_per_frame.find(stage);
        if (mine == st.seconds_per_frame.end()) continue;
        if (ref == anchor_it->seconds_per_frame.end() || ref->second <= 0.0) {
          s << ' ' << stage << " (not run by " << anchor << ")";
        } else {
          s << ' ' << stage << ' ' << percent(100.0 * (mine->second - ref->second) / ref->second);
        }
        s << ';';
      }
      if (anchor_it->decode_side > 0.0) {
        s << " decode-side " << percent(100.0 * (st.decode_side - anchor_it->decode_side) / anchor_it->decode_side);
      }
      s << '\n';
    }
  }

  bool header = false;
  for (const auto& st : ts.methods) {
    const auto pp = st.seconds_per_frame.find("postprocess");
    if (pp == st.seconds_per_frame.end()) continue;
    const double base = st.decode_side - pp->second;
    if (!header) {
      s << "\nPost-processing overhead\n";
      header = true;
    }
    s << "  " << st.method << ": postprocess adds ";
    if (base > 0.0) s << fmt(100.0 * pp->second / base, 2) << "%";
    else s << "n/a";
    s << " to decode-side time (decode + upsample)\n";
  }
  ts.text = s.str();
  return ts;
}

std::string TimingSummary::to_csv(const std::string& anchor) const {
  std::ostringstream s;
  s << "method,stage,seconds_per_frame,delta_vs_anchor_percent\n";
  const auto a = std::find_if(methods.begin(), methods.end(), [&](const StageTiming& st) { return st.method == anchor; });
  for (const auto& st : methods) {
    auto line = [&](const std::string& stage, double v, std::optional<double> ref) {
      s << csv_field(st.method) << ',' << stage << ',' << fmt(v, 9) << ',';
      if (ref && *ref > 0.0) s << fmt(100.0 * (v - *ref) / *ref, 4);
      s << '\n';
    };
    for (const auto& [stage, v] : st.seconds_per_frame) {
      std::optional<double> ref;
      if (a != methods.end()) {
        const auto it = a->seconds_per_frame.find(stage);
        if (it != a->seconds_per_frame.end()) ref = it->second;
      }
      line(stage, v, ref);
    }
    line("decode_side", st.decode_side, a != methods.end() ? std::optional<double>(a->decode_side) : std::nullopt);
  }
  return s.str();
}

ReportBundle assemble_report(const std::vector<JobRecord>& all_records, const fs::path& out_dir,
                             const ReportOptions& options) {
  const auto records = latest_records(all_records);
  ReportBundle b;
  b.bd = bd_table(records, options, &b.warnings);
  for (const auto& r : records) {
    if (!r.ok()) b.warnings.push_back(r.key() + " failed and is left out: " + r.error);
  }
  fs::create_directories(out_dir);

  const auto o = ordering(records);
  for (const auto& seq : o.sequences) {
    for (const auto& metric : o.metrics) {
      std::ostringstream s;
      s << "method,qp_index,qp_texture,qp_depth,bitrate_kbps," << metric << '\n';
      for (const auto& method : o.methods) {
        std::vector<const JobRecord*> rows;
        for (const auto& r : records) {
          if (r.sequence == seq && r.method == method && r.ok() && r.scores.count(metric)) rows.push_back(&r);
        }
        std::sort(rows.begin(), rows.end(), [](auto* a, auto* c) { return a->qp_index < c->qp_index; });
        for (const auto* r : rows) {
          s << csv_field(method) << ',' << r->qp_index << ',' << r->qp_texture << ',' << r->qp_depth << ','
            << fmt(r->bitrate_kbps) << ',' << fmt(r->scores.at(metric).sequence_value) << '\n';
        }
      }
      const auto path = out_dir / ("rq_" + safe_name(seq) + "_" + safe_name(metric) + ".csv");
      write_text(path, s.str());
      b.rq_csvs.push_back(path);
    }
  }

  b.bd_table_csv = out_dir / "bd_table.csv";
  write_text(b.bd_table_csv, b.bd.to_csv());

  b.timing = timing_summary(records, options.anchor);
  b.timing_txt = out_dir / "timing_summary.txt";
  write_text(b.timing_txt, b.timing.text);
  b.timing_csv = out_dir / "timing_summary.csv";
  write_text(b.timing_csv, b.timing.to_csv(options.anchor));
  return b;
}

void dump_patch(const fs::path& frames_path, const VideoSpec& spec_in, int frame_index, int x, int y, int w, int h,
                const fs::path& out) {
  VideoSpec spec = spec_in;
  spec.frame_count = 0;
  spec.validate();
  const auto acc = account_file(frames_path, spec);
  const auto frames = static_cast<long long>(acc.frames);
  if (frame_index < 0 || frame_index >= frames) {
    throw RangeError("frame index " + std::to_string(frame_index) + " outside 0.." + std::to_string(frames - 1));
  }
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > spec.width || y + h > spec.height) {
    throw RangeError("patch " + std::to_string(w) + "x" + std::to_string(h) + " at (" + std::to_string(x) + ", " +
                     std::to_string(y) + ") is outside the " + std::to_string(spec.width) + "x" +
                     std::to_string(spec.height) + " frame; valid x 0.." + std::to_string(spec.width - 1) + ", y 0.." +
                     std::to_string(spec.height - 1) + " with x+w <= " + std::to_string(spec.width) + " and y+h <= " +
                     std::to_string(spec.height));
  }

  std::ifstream in(frames_path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + frames_path.string() + "'");
  const int bytes = spec.container_bytes();
  const int shift = spec.bit_depth - 8;
  std::string pgm = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * bytes);
  for (int r = 0; r < h; ++r) {
    const auto offset = static_cast<std::streamoff>(frame_index) * static_cast<std::streamoff>(frame_size_bytes(spec)) +
                        (static_cast<std::streamoff>(y + r) * spec.width + x) * bytes;
    in.seekg(offset);
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw IoError("read failed in '" + frames_path.string() + "'");
    for (int c = 0; c < w; ++c) {
      int v = bytes == 1 ? row[c] : row[2 * c] | (row[2 * c + 1] << 8);
      v = std::min(v, spec.max_value()) >> shift;
      pgm.push_back(static_cast<char>(v));
    }
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream o(out, std::ios::binary);
  if (!o) throw IoError("cannot write '" + out.string() + "'");
  o.write(pgm.data(), static_cast<std::streamsize>(pgm.size()));
}

}  // namespace rqpipe
