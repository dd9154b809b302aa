#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rqpipe/config.hpp"
#include "rqpipe/error.hpp"
#include "rqpipe/manifest.hpp"
#include "rqpipe/pipeline.hpp"
#include "rqpipe/report.hpp"
#include "test_util.hpp"

using namespace rqpipe;
using rqpipe::testing::TempDir;

namespace {

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

RunOptions quiet(int workers = 0) {
  RunOptions o;
  o.workers = workers;
  return o;
}

JobRecord fake(const std::string& seq, const std::string& method, int qp_index, double kbps, double psnr) {
  JobRecord r;
  r.sequence = seq;
  r.method = method;
  r.qp_index = qp_index;
  r.frames = 1;
  r.bitrate_kbps = kbps;
  QualityScore q;
  q.metric_id = "psnr_y";
  q.sequence_value = psnr;
  r.scores["psnr_y"] = q;
  return r;
}

// Record without timing or timestamp, for run-to-run comparison.
nlohmann::json stable(const JobRecord& r) {
  auto j = to_json(r);
  j.erase("stage_seconds");
  j.erase("timestamp");
  return j;
}

}  // namespace

TEST_CASE("qp pairs and presets") {
  CHECK(default_qp_pairs() == std::vector<QpPair>{{22, 4}, {27, 7}, {32, 11}, {37, 15}});
  CHECK(parse_qp_pairs("22:4,27:7") == std::vector<QpPair>{{22, 4}, {27, 7}});
  CHECK_THROWS_AS(parse_qp_pairs("22"), ConfigError);

  CHECK(sequence_presets().size() == 7);
  const auto e = find_preset("E");
  REQUIRE(e.has_value());
  CHECK(e->name == "Frog");
  CHECK(e->type == "NC");
  CHECK(e->width == 1920);
  CHECK(e->views == 13);
  struct Row {
    const char* id;
    const char* name;
    const char* type;
    int w, h, views;
  };
  for (const Row& row : {Row{"A", "Classroom", "CG", 4096, 2048, 14}, Row{"B", "Museum", "CG", 2048, 2048, 18},
                         Row{"C", "Hijack", "CG", 4096, 2048, 9}, Row{"D", "Painter", "NC", 2048, 1088, 16},
                         Row{"E", "Frog", "NC", 1920, 1080, 13}, Row{"J", "Kitchen", "CG", 1920, 1080, 24},
                         Row{"L", "Fencing", "NC", 1920, 1080, 9}}) {
    const auto p = find_preset(row.id);
    REQUIRE(p.has_value());
    CHECK(p->name == row.name);
    CHECK(p->type == row.type);
    CHECK(p->width == row.w);
    CHECK(p->height == row.h);
    CHECK(p->views == row.views);
    CHECK(find_preset(row.name)->id == row.id);
  }
  CHECK_FALSE(find_preset("Z").has_value());
}

TEST_CASE("texture QP schedule") {
  MethodConfig anchor;
  anchor.label = "Anchor";
  MethodConfig rescaled;
  rescaled.label = "Re-scaled";
  rescaled.qp_offset = -6;
  std::vector<int> a, r, d;
  for (const auto& q : default_qp_pairs()) {
    a.push_back(effective_texture_qp(anchor, q));
    r.push_back(effective_texture_qp(rescaled, q));
    d.push_back(q.qp_depth);
  }
  CHECK(a == std::vector<int>{22, 27, 32, 37});
  CHECK(r == std::vector<int>{16, 21, 26, 31});
  CHECK(d == std::vector<int>{4, 7, 11, 15});
  rescaled.qp_offset = -30;
  CHECK_THROWS_AS(effective_texture_qp(rescaled, {22, 4}), RangeError);
}

TEST_CASE("weight selection by nearest base QP") {
  PostprocConfig pp;
  pp.weights = {{22, "a"}, {37, "b"}};
  CHECK(select_weights(pp, 22).first == 22);
  CHECK(select_weights(pp, 27).first == 22);
  CHECK(select_weights(pp, 32).first == 37);
  pp.weights = {{20, "a"}, {24, "b"}};
  CHECK(select_weights(pp, 22).first == 20);  // tie goes low
  pp.weights.clear();
  CHECK_THROWS_AS(select_weights(pp, 22), ConfigError);
}

TEST_CASE("config parsing") {
  TempDir dir;
  const auto text = rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 2);
  const auto cfg = parse_experiment(text, dir.path());
  CHECK(cfg.name == "smoke");
  CHECK(cfg.output_dir == dir.path() / "out");
  REQUIRE(cfg.sequences.size() == 1);
  CHECK(cfg.sequences[0].spec.width == 32);
  CHECK(cfg.sequences[0].frame_rate == 30.0);
  CHECK(cfg.sequences[0].preset->name == "Synthetic");
  REQUIRE(cfg.methods.size() == 3);
  CHECK(cfg.method("Re-scaled").scale == ScaleFactor(1, 2));
  CHECK(cfg.method("Re-scaled").qp_offset == -6);
  CHECK(cfg.method("MFRNet").postproc->weights.size() == 4);
  CHECK(cfg.method("MFRNet").postproc->tile == 32);
  CHECK_FALSE(cfg.method("Anchor").postproc.has_value());
  CHECK(cfg.method("Re-scaled").depth_filter == ResampleFilter::lanczos(3));
  CHECK(cfg.metric_ids() == std::vector<std::string>{"psnr_y"});
  CHECK(cfg.to_json()["methods"].size() == 3);

  auto broken = [&](const std::string& from, const std::string& to) {
    auto t = text;
    const auto pos = t.find(from);
    REQUIRE(pos != std::string::npos);
    t.replace(pos, from.size(), to);
    return t;
  };
  CHECK_THROWS_AS(parse_experiment(broken("frame_rate = 30\n", ""), dir.path()), ConfigError);
  CHECK_THROWS_AS(parse_experiment(broken("qp_offset = 0", "qp_ofset = 0"), dir.path()), ConfigError);
  CHECK_THROWS_AS(parse_experiment(broken("scale = 1\n", "scale = 2\n"), dir.path()), ConfigError);
  CHECK_THROWS_AS(parse_experiment(broken("up_filter = nn\nqp_offset = -6\ncodec = mock\n\n[method.MFRNet]",
                                          "up_filter = nn\nqp_offset = -30\ncodec = mock\n\n[method.MFRNet]"),
                                   dir.path()),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment(broken("codec = mock\n\n[method.Re", "codec = external\nencode_cmd = enc {in} {out}\n"
                                                                        "decode_cmd = dec {in} {out}\n\n[method.Re"),
                                   dir.path()),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment(broken("psnr_y = true\n", "psnr_y = true\nexternal.vmaf = vmaf {ref} {w}\n"),
                                   dir.path()),
                  ConfigError);

  const auto shared = parse_experiment(
      broken("postproc_weights = 22:w22.bin, 27:w27.bin, 32:w32.bin, 37:w37.bin", "postproc_weights = w22.bin"),
      dir.path());
  CHECK(shared.method("MFRNet").postproc->weights.size() == 4);
  CHECK(shared.method("MFRNet").postproc->weights.at(37) == dir.path() / "w22.bin");
}

TEST_CASE("end-to-end run, manifest and resume") {
  TempDir dir;
  const auto cfg = parse_experiment(rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 3), dir.path());
  const auto summary = run_experiment(cfg, quiet(2));
  CHECK(summary.executed == 12);
  CHECK(summary.failed == 0);
  REQUIRE(summary.records.size() == 12);

  const auto on_disk = read_manifest(summary.manifest_path);
  CHECK(on_disk.size() == 12);
  const std::string ref_hash = sha256_file(dir / "synthetic.yuv");

  std::map<std::string, std::vector<int>> qps;
  for (const auto& r : summary.records) {
    CHECK(r.ok());
    CHECK(std::isfinite(r.bitrate_kbps));
    CHECK(r.bitrate_kbps > 0.0);
    CHECK(std::isfinite(r.scores.at("psnr_y").sequence_value));
    CHECK(r.reference_sha256 == ref_hash);
    CHECK(r.reference_width == 32);
    CHECK(r.frames == 3);
    qps[r.method].push_back(r.qp_texture);
    CHECK(r.bitrate_kbps == doctest::Approx(r.total_bits * 30.0 / 3.0 / 1000.0));
    if (r.method == "Anchor") {
      CHECK_FALSE(r.stage_seconds.count("downsample"));
      CHECK_FALSE(r.stage_seconds.count("upsample"));
    } else {
      CHECK(r.stage_seconds.count("downsample"));
      CHECK(r.stage_seconds.count("upsample"));
    }
    CHECK(r.stage_seconds.count("postprocess") == (r.method == "MFRNet" ? 1u : 0u));
    REQUIRE_FALSE(r.artifacts.empty());
    CHECK(sha256_file(cfg.output_dir / r.artifacts[0].path) == r.artifacts[0].sha256);
  }
  CHECK(qps["Anchor"] == std::vector<int>{22, 27, 32, 37});
  CHECK(qps["Re-scaled"] == std::vector<int>{16, 21, 26, 31});
  CHECK(qps["MFRNet"] == std::vector<int>{16, 21, 26, 31});

  // Post-processing really alters the re-scaled reconstruction.
  const auto& rs = summary.records[4];
  const auto& pp = summary.records[8];
  REQUIRE(rs.method == "Re-scaled");
  REQUIRE(pp.method == "MFRNet");
  CHECK(pp.total_bits == rs.total_bits);
  CHECK(pp.artifacts[0].sha256 != rs.artifacts[0].sha256);

  // Resume skips everything; a tampered artifact reruns only its job.
  auto again = run_experiment(cfg, quiet(1));
  CHECK(again.skipped == 12);
  CHECK(again.executed == 0);
  const auto victim = cfg.output_dir / summary.records[5].artifacts[0].path;
  write_text(victim, "tampered");
  again = run_experiment(cfg, quiet(1));
  CHECK(again.executed == 1);
  CHECK(read_manifest(summary.manifest_path).size() == 13);
  CHECK(stable(again.records[5]) == stable(summary.records[5]));
}

TEST_CASE("mock runs are deterministic apart from timings") {
  TempDir dir;
  const auto cfg = parse_experiment(rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 2), dir.path());
  const auto first = run_experiment(cfg, quiet(3));
  std::filesystem::remove_all(cfg.output_dir);
  const auto second = run_experiment(cfg, quiet(1));
  REQUIRE(first.records.size() == second.records.size());
  for (std::size_t i = 0; i < first.records.size(); ++i) CHECK(stable(first.records[i]) == stable(second.records[i]));
}

TEST_CASE("missing weights fail before any job") {
  TempDir dir;
  const auto cfg = parse_experiment(rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 2), dir.path());
  std::filesystem::remove(dir / "w32.bin");
  CHECK_THROWS_AS(run_experiment(cfg, quiet(1)), ConfigError);
  CHECK_FALSE(std::filesystem::exists(manifest_path(cfg)));

  // Weights that do not fit the network are rejected the same way.
  const auto other = cnn::load_network("mfrnet:1,1,2,2");
  cnn::write_weight_file(dir / "w32.bin", other, cnn::random_weights(other, 1));
  CHECK_THROWS_AS(run_experiment(cfg, quiet(1)), ConfigError);
}

TEST_CASE("external codec adapter") {
  TempDir dir;
  auto text = rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 2);
  // A pass-through "codec" and a broken one.
  text += "\n[method.Copy]\nscale = 1/2\nqp_offset = -6\ncodec = external\n"
          "encode_cmd = cp {in} {out} # {qp} {w} {h}\ndecode_cmd = cp {in} {out}\n"
          "\n[method.Broken]\nscale = 1\ncodec = external\n"
          "encode_cmd = echo encoder exploded >&2; exit 3 # {in} {out} {qp} {w} {h}\ndecode_cmd = cp {in} {out}\n";
  const auto cfg = parse_experiment(text, dir.path());
  const auto s = run_experiment(cfg, quiet(2));
  CHECK(s.records.size() == 20);
  CHECK(s.failed == 4);
  for (const auto& r : s.records) {
    if (r.method == "Copy") {
      REQUIRE(r.ok());
      // 16x16 4:2:0 8-bit = 384 bytes per frame, 2 frames, 30 fps
      CHECK(r.total_bits == 2u * 384u * 8u);
      CHECK(r.bitrate_kbps == doctest::Approx(384.0 * 8.0 * 30.0 / 1000.0));
      CHECK(r.artifacts.size() == 2);
    }
    if (r.method == "Broken") {
      CHECK_FALSE(r.ok());
      CHECK(r.tool_output.find("encoder exploded") != std::string::npos);
    }
  }
}

TEST_CASE("depth streams add to the bitrate with an unshifted QP") {
  TempDir dir;
  auto text = rqpipe::testing::pipeline_fixture(dir.path(), 32, 32, 2);
  VideoSpec ds;
  ds.width = 32;
  ds.height = 32;
  ds.chroma = Chroma::C400;
  ds.frame_count = 2;
  std::vector<Frame> depth{Frame::blank(ds, 90), Frame::blank(ds, 91)};
  write_sequence(depth, ds, dir / "depth.yuv");
  text.replace(text.find("views = 1\n"), 10, "views = 1\ndepth_path = depth.yuv\ndepth_spec = 32x32:8:400\n");
  const auto cfg = parse_experiment(text, dir.path());
  const auto with_depth = run_experiment(cfg, quiet(1));
  for (const auto& r : with_depth.records) {
    CHECK(r.ok());
    CHECK(r.qp_depth == r.base_qp.qp_depth);
  }

  TempDir plain_dir;
  const auto plain = run_experiment(
      parse_experiment(rqpipe::testing::pipeline_fixture(plain_dir.path(), 32, 32, 2), plain_dir.path()), quiet(1));
  for (std::size_t i = 0; i < plain.records.size(); ++i) {
    CHECK(with_depth.records[i].total_bits > plain.records[i].total_bits);
  }
}

TEST_CASE("worker count resolution") {
  ExperimentConfig cfg;
  cfg.workers = 3;
  ::unsetenv("RQPIPE_WORKERS");
  CHECK(resolve_workers(cfg, 0) == 3);
  CHECK(resolve_workers(cfg, 5) == 5);
  ::setenv("RQPIPE_WORKERS", "2", 1);
  CHECK(resolve_workers(cfg, 5) == 2);
  ::setenv("RQPIPE_WORKERS", "zero", 1);
  CHECK_THROWS_AS(resolve_workers(cfg, 0), ConfigError);
  ::unsetenv("RQPIPE_WORKERS");
}

TEST_CASE("torn manifest tail") {
  TempDir dir;
  const auto path = dir / "m.jsonl";
  {
    ManifestWriter w(path);
    w.append(fake("S", "Anchor", 0, 100, 30));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"sequence\": \"S\", \"meth";
  }
  CHECK(read_manifest(path).size() == 1);
  {
    ManifestWriter w(path);
    w.append(fake("S", "Anchor", 1, 200, 33));
  }
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].qp_index == 1);

  write_text(path, "not json\n" + to_json(fake("S", "A", 0, 1, 1)).dump() + "\n");
  CHECK_THROWS_AS(read_manifest(path), ParseError);
}

TEST_CASE("manifest json round trip keeps infinite scores") {
  auto r = fake("S", "Anchor", 2, 123.5, 40.0);
  r.scores["psnr_y"].per_frame = {INFINITY, 40.0};
  r.stage_seconds["encode"] = 0.25;
  r.artifacts.push_back({"reconstruction", "a/b.yuv", "abc"});
  const auto back = job_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(std::isinf(back.scores.at("psnr_y").per_frame[0]));
  CHECK(back.bitrate_kbps == 123.5);
  CHECK(back.stage_seconds.at("encode") == 0.25);
  CHECK(back.artifacts[0].path == "a/b.yuv");
  CHECK(sha256_hex(std::vector<std::uint8_t>{'a', 'b', 'c'}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("report: BD table and totals") {
  std::vector<JobRecord> recs;
  const double rates[] = {1000, 1800, 3300, 6000};
  const double q[] = {30.1, 33.0, 35.8, 38.2};
  for (const std::string seq : {"A", "B"}) {
    const double shift = seq == "A" ? 1.0 : 2.0;
    for (int i = 0; i < 4; ++i) {
      recs.push_back(fake(seq, "Anchor", i, rates[i], q[i]));
      recs.push_back(fake(seq, "Re-scaled", i, rates[i], q[i]));          // duplicates the anchor
      recs.push_back(fake(seq, "MFRNet", i, rates[i], q[i] + shift));      // constant gain
    }
  }
  TempDir dir;
  const auto b = assemble_report(recs, dir.path());
  REQUIRE(b.bd.rows == std::vector<std::string>{"A", "B"});
  REQUIRE(b.bd.columns.size() == 2);
  CHECK(b.bd.columns[0].method == "Re-scaled");
  CHECK(std::abs(*b.bd.cells[0][0]) <= 1e-12);
  CHECK(std::abs(*b.bd.cells[1][0]) <= 1e-12);
  CHECK(std::abs(*b.bd.total[0]) <= 1e-12);
  CHECK(*b.bd.cells[0][1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*b.bd.cells[1][1] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(*b.bd.total[1] == doctest::Approx((*b.bd.cells[0][1] + *b.bd.cells[1][1]) / 2.0).epsilon(1e-15));

  const auto csv = read_text(b.bd_table_csv);
  CHECK(csv.find("sequence,Re-scaled:psnr_y,MFRNet:psnr_y") == 0);
  CHECK(csv.find("\nTotal,") != std::string::npos);
  CHECK(b.rq_csvs.size() == 2);
  CHECK(read_text(b.rq_csvs[0]).find("method,qp_index,qp_texture,qp_depth,bitrate_kbps,psnr_y") == 0);

  std::vector<JobRecord> no_anchor;
  for (const auto& r : recs) {
    if (r.method != "Anchor") no_anchor.push_back(r);
  }
  CHECK_THROWS_AS(assemble_report(no_anchor, dir.path()), ConfigError);
}

TEST_CASE("report: timing percentages") {
  std::vector<JobRecord> recs;
  for (int i = 0; i < 2; ++i) {
    auto a = fake("S", "Anchor", i, 100 + i, 30 + i);
    a.stage_seconds = {{"encode", 2.0}, {"decode", 2.0}, {"metrics", 0.1}};
    auto r = fake("S", "Re-scaled", i, 100 + i, 30 + i);
    r.stage_seconds = {{"downsample", 0.1}, {"encode", 1.0}, {"decode", 0.8}, {"upsample", 0.2}, {"metrics", 0.1}};
    auto p = r;
    p.method = "MFRNet";
    p.stage_seconds["postprocess"] = 0.1885;
    recs.insert(recs.end(), {a, r, p});
  }
  const auto t = timing_summary(recs, "Anchor");
  CHECK(t.text.find("MFRNet: postprocess adds 18.85% to decode-side time") != std::string::npos);
  CHECK(t.text.find("decode -60.00%") != std::string::npos);
  CHECK(t.text.find("decode-side -50.00%") != std::string::npos);
  CHECK(t.text.find("downsample (not run by Anchor)") != std::string::npos);
  CHECK(t.to_csv("Anchor").find("MFRNet,postprocess,") != std::string::npos);
}

TEST_CASE("patch dump") {
  TempDir dir;
  VideoSpec s8;
  s8.width = 8;
  s8.height = 4;
  s8.chroma = Chroma::C420;
  s8.frame_count = 22;
  std::mt19937_64 rng(1);
  std::vector<Frame> frames;
  for (int i = 0; i < 22; ++i) frames.push_back(rqpipe::testing::random_frame(rng, s8));
  write_sequence(frames, s8, dir / "a.yuv");

  dump_patch(dir / "a.yuv", s8, 3, 0, 0, 8, 4, dir / "full.pgm");
  const auto full = read_text(dir / "full.pgm");
  const std::string header = "P5\n8 4\n255\n";
  REQUIRE(full.size() == header.size() + 32);
  CHECK(full.substr(0, header.size()) == header);
  for (int i = 0; i < 32; ++i) CHECK(static_cast<unsigned char>(full[header.size() + i]) == frames[3].y.samples[i]);

  dump_patch(dir / "a.yuv", s8, 21, 2, 1, 3, 2, dir / "crop.pgm");
  const auto crop = read_text(dir / "crop.pgm");
  CHECK(crop.substr(0, 10) == "P5\n3 2\n255");
  CHECK(static_cast<unsigned char>(crop.back()) == frames[21].y.at(4, 2));

  try {
    dump_patch(dir / "a.yuv", s8, 0, 6, 0, 4, 4, dir / "bad.pgm");
    FAIL("expected RangeError");
  } catch (const RangeError& e) {
    CHECK(std::string(e.what()).find("valid x 0..7") != std::string::npos);
  }
  CHECK_THROWS_AS(dump_patch(dir / "a.yuv", s8, 22, 0, 0, 1, 1, dir / "bad.pgm"), RangeError);

  VideoSpec s10 = s8;
  s10.bit_depth = 10;
  s10.frame_count = 1;
  Frame f = Frame::blank(s10, 1023);
  f.y.at(1, 0) = 4;
  write_sequence(std::vector<Frame>{f}, s10, dir / "b.yuv");
  dump_patch(dir / "b.yuv", s10, 0, 0, 0, 2, 1, dir / "ten.pgm");
  const auto ten = read_text(dir / "ten.pgm");
  CHECK(static_cast<unsigned char>(ten[ten.size() - 2]) == 255);
  CHECK(static_cast<unsigned char>(ten.back()) == 1);
}

TEST_CASE("mock-codec anchor and re-scaled curves are disjoint in rate on smooth content") {
  // One bit per zero coefficient puts a floor under the anchor's rate, so the
  // quarter-size stream never reaches it. The report says so instead of
  // extrapolating.
  TempDir dir;
  const auto cfg = parse_experiment(rqpipe::testing::pipeline_fixture(dir.path(), 64, 64, 8), dir.path());
  const auto s = run_experiment(cfg, quiet(1));
  const auto b = assemble_report(s.records, dir / "report");
  REQUIRE(b.bd.rows.size() == 1);
  CHECK_FALSE(b.bd.cells[0][0].has_value());
  CHECK_FALSE(b.bd.total[0].has_value());
  REQUIRE(b.warnings.size() == 2);
  CHECK(b.warnings[0].find("do not overlap") != std::string::npos);
  const auto anchor = rq_curve(s.records, "S", "Anchor", "psnr_y");
  const auto rescaled = rq_curve(s.records, "S", "Re-scaled", "psnr_y");
  CHECK(rescaled.points.front().bitrate_kbps < anchor.points.back().bitrate_kbps);
}
