#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "rqpipe/bd_stats.hpp"
#include "rqpipe/cnn.hpp"
#include "rqpipe/config.hpp"
#include "rqpipe/error.hpp"
#include "rqpipe/frame_io.hpp"
#include "rqpipe/manifest.hpp"
#include "rqpipe/metrics.hpp"
#include "rqpipe/mock_codec.hpp"
#include "rqpipe/pipeline.hpp"
#include "rqpipe/report.hpp"
#include "rqpipe/resample.hpp"
#include "rqpipe/version.hpp"

namespace fs = std::filesystem;
using namespace rqpipe;

namespace {

// Spec string plus the frame count implied by the file size.
VideoSpec spec_for(const fs::path& path, const std::string& spec_text) {
  auto spec = VideoSpec::parse(spec_text);
  const auto acc = account_file(path, spec);
  if (acc.trailing_bytes != 0) {
    throw TruncationError(path.string() + ": " + std::to_string(acc.trailing_bytes) +
                          " trailing bytes do not form a whole frame");
  }
  spec.frame_count = static_cast<int>(acc.frames);
  return spec;
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::string fmt(double v, int prec = 4) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

int cmd_yuv_info(const fs::path& path, const std::string& spec_text) {
  const auto spec = VideoSpec::parse(spec_text);
  const auto acc = account_file(path, spec);
  std::cout << "file: " << path.string() << "\n"
            << "spec: " << spec.to_string() << "\n"
            << "frame_bytes: " << acc.frame_bytes << "\n"
            << "file_bytes: " << acc.file_bytes << "\n"
            << "frames: " << acc.frames << "\n"
            << "trailing_bytes: " << acc.trailing_bytes << "\n";
  return acc.trailing_bytes == 0 ? 0 : 3;
}

int cmd_resample(const fs::path& in, const std::string& spec_text, const std::string& scale_text,
                 const std::string& filter_text, const fs::path& out) {
  const auto spec = spec_for(in, spec_text);
  const auto scale = ScaleFactor::parse(scale_text);
  const auto filter = ResampleFilter::parse(filter_text);
  VideoSpec out_spec = spec;
  out_spec.width = scale.apply(spec.width);
  out_spec.height = scale.apply(spec.height);
  SequenceReader reader(in, spec);
  SequenceWriter writer(out, out_spec);
  while (auto f = reader.next()) writer.write(resample_frame(*f, scale, filter, filter));
  writer.close();
  std::cout << "wrote " << reader.frames_read() << " frames " << out_spec.to_string() << " to " << out.string()
            << "\n";
  return 0;
}

int cmd_psnr(const fs::path& ref, const fs::path& dist, const std::string& spec_text, const std::string& per_frame,
             const std::string& aggregation, double cap) {
  const auto spec = spec_for(ref, spec_text);
  const auto a = read_sequence(ref, spec);
  const auto b = read_sequence(dist, spec_for(dist, spec_text));
  PsnrOptions opt;
  opt.aggregation = parse_aggregation(aggregation);
  opt.cap_db = cap;
  const auto score = sequence_psnr_y(a, b, opt);
  if (!per_frame.empty()) {
    std::ofstream csv(per_frame);
    if (!csv) throw IoError("cannot write " + per_frame);
    csv << "frame,psnr_y\n";
    for (std::size_t i = 0; i < score.per_frame.size(); ++i) csv << i << "," << fmt(score.per_frame[i], 6) << "\n";
  }
  std::cout << "psnr_y " << fmt(score.sequence_value) << " dB (" << to_string(score.aggregation) << ", "
            << score.per_frame.size() << " frames)\n";
  return 0;
}

int cmd_bd(const fs::path& ref, const fs::path& test, const std::string& mode, const std::string& interp_text) {
  const auto interp = parse_interpolation(interp_text);
  const auto r = read_rq_csv(ref);
  const auto t = read_rq_csv(test);
  BdResult res;
  if (mode == "quality") {
    res = bd_quality(r, t, interp);
  } else if (mode == "rate") {
    res = bd_rate(r, t, interp);
  } else {
    throw ConfigError("--mode must be quality or rate");
  }
  for (const auto& w : res.warnings) warn(w);
  if (res.delta_quality) std::cout << "bd_quality " << fmt(*res.delta_quality, 6) << "\n";
  if (res.delta_rate_percent) std::cout << "bd_rate_percent " << fmt(*res.delta_rate_percent, 6) << "\n";
  std::cout << "interpolation " << to_string(res.interpolation) << "\n";
  return 0;
}

int cmd_postproc(const std::string& net_text, const fs::path& weights, const fs::path& in,
                 const std::string& spec_text, const fs::path& out, int tile, int overlap, bool chroma) {
  const auto model = cnn::load_model(net_text, weights);
  const int radius = model.net.receptive_radius();
  if (tile > 0 && overlap < 0) overlap = radius;
  const auto spec = spec_for(in, spec_text);
  auto run = [&](const Plane& p) {
    return tile > 0 ? cnn::tiled_apply(model.net, model.weights, p, tile, overlap)
                    : cnn::apply_network(model.net, model.weights, p);
  };
  SequenceReader reader(in, spec);
  SequenceWriter writer(out, spec);
  while (auto f = reader.next()) {
    Frame g = *f;
    g.y = run(f->y);
    if (chroma && g.cb) {
      g.cb = run(*f->cb);
      g.cr = run(*f->cr);
    }
    writer.write(g);
  }
  writer.close();
  std::cout << "processed " << reader.frames_read() << " frames, receptive radius " << radius << "\n";
  return 0;
}

int cmd_mock_codec(const fs::path& in, const std::string& spec_text, int qp, const fs::path& out, double fps) {
  const auto spec = spec_for(in, spec_text);
  const auto frames = read_sequence(in, spec);
  const auto coded = mock::mock_encode_decode(frames, qp);
  write_sequence(coded.decoded, spec, out);
  const auto score = sequence_psnr_y(frames, coded.decoded);
  std::cout << "bits " << coded.total_bits << "\n";
  if (fps > 0 && !frames.empty()) {
    std::cout << "bitrate_kbps " << fmt(static_cast<double>(coded.total_bits) * fps / frames.size() / 1000.0) << "\n";
  }
  std::cout << "psnr_y " << fmt(score.sequence_value) << "\n";
  return 0;
}

int cmd_run(const fs::path& config_path, int workers, bool fresh) {
  const auto cfg = load_experiment(config_path);
  RunOptions opt;
  opt.workers = workers;
  opt.resume = !fresh;
  opt.log = [](const std::string& m) { std::cerr << m << "\n"; };
  const auto s = run_experiment(cfg, opt);
  std::cout << "jobs " << s.records.size() << ": executed " << s.executed << ", skipped " << s.skipped << ", failed "
            << s.failed << " (" << s.workers << " workers)\n"
            << "manifest " << s.manifest_path.string() << "\n";
  return s.failed == 0 ? 0 : 4;
}

int cmd_report(const fs::path& config_path, std::string manifest, std::string out_dir) {
  ReportOptions opt;
  if (!config_path.empty()) {
    const auto cfg = load_experiment(config_path);
    opt.anchor = cfg.anchor;
    opt.interpolation = cfg.interpolation;
    if (manifest.empty()) manifest = manifest_path(cfg).string();
    if (out_dir.empty()) out_dir = (cfg.output_dir / "report").string();
  }
  if (manifest.empty()) throw ConfigError("report needs a config or --manifest");
  if (out_dir.empty()) out_dir = (fs::path(manifest).parent_path() / "report").string();
  const auto bundle = assemble_report(read_manifest(manifest), out_dir, opt);
  for (const auto& w : bundle.warnings) warn(w);
  std::cout << "BD table (" << to_string(opt.interpolation) << ", relative to " << opt.anchor << ")\n";
  std::ifstream table(bundle.bd_table_csv);
  std::cout << table.rdbuf() << "\n" << bundle.timing.text;
  std::cout << "written to " << out_dir << "\n";
  return 0;
}

int cmd_dump_patch(const fs::path& in, const std::string& spec_text, int frame, int x, int y, int w, int h,
                   const fs::path& out) {
  dump_patch(in, spec_for(in, spec_text), frame, x, y, w, h, out);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_init_weights(const std::string& net_text, const fs::path& out, std::uint64_t seed, float scale) {
  const auto net = cnn::load_network(net_text);
  net.validate();
  cnn::write_weight_file(out, net, cnn::random_weights(net, seed, scale));
  std::cout << "wrote " << out.string() << " (" << net.layers.size() << " layers, receptive radius "
            << net.receptive_radius() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resolution-adaptation coding experiments: resampling, metrics, BD statistics, CNN post-processing"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);

  int rc = 0;
  std::string spec, in, out, ref, dist, per_frame, mode = "quality", filter = "lanczos:3", scale, net = "mfrnet",
                                                    weights, config, manifest, interp = "pchip",
                                                    aggregation = "mean_of_per_frame";
  int workers = 0, tile = 0, overlap = -1, qp = 22, frame = 0, px = 0, py = 0, pw = 64, ph = 64;
  double cap = 100.0, fps = 0.0;
  float wscale = 0.05f;
  std::uint64_t seed = 1;
  bool fresh = false, chroma = false;

  auto* info = app.add_subcommand("yuv-info", "Frame count and byte accounting of a raw YUV file");
  info->add_option("path", in, "YUV file")->required();
  info->add_option("--spec", spec, "WxH:bitdepth:chroma")->required();
  info->callback([&] { rc = cmd_yuv_info(in, spec); });

  auto* rs = app.add_subcommand("resample", "Rescale a sequence");
  rs->add_option("--in", in)->required();
  rs->add_option("--spec", spec)->required();
  rs->add_option("--scale", scale, "1/2 or 2/1")->required();
  rs->add_option("--filter", filter, "lanczos:N or nn")->capture_default_str();
  rs->add_option("--out", out)->required();
  rs->callback([&] { rc = cmd_resample(in, spec, scale, filter, out); });

  auto* ps = app.add_subcommand("psnr", "Luma PSNR between two sequences");
  ps->add_option("--ref", ref)->required();
  ps->add_option("--dist", dist)->required();
  ps->add_option("--spec", spec)->required();
  ps->add_option("--per-frame", per_frame, "CSV of per-frame values");
  ps->add_option("--aggregation", aggregation, "mean_of_per_frame or from_mean_mse")->capture_default_str();
  ps->add_option("--cap", cap, "dB substituted for identical frames")->capture_default_str();
  ps->callback([&] { rc = cmd_psnr(ref, dist, spec, per_frame, aggregation, cap); });

  auto* bd = app.add_subcommand("bd", "Bjontegaard delta between two RQ curves (bitrate_kbps,quality CSV)");
  bd->add_option("--ref", ref)->required();
  bd->add_option("--test", dist)->required();
  bd->add_option("--mode", mode, "quality or rate")->capture_default_str();
  bd->add_option("--interp", interp, "pchip or cubic")->capture_default_str();
  bd->callback([&] { rc = cmd_bd(ref, dist, mode, interp); });

  auto* pp = app.add_subcommand("postproc", "Apply a CNN to the luma of a sequence");
  pp->add_option("--net", net, "mfrnet, mfrnet:B,C,CH,G or a JSON file")->capture_default_str();
  pp->add_option("--weights", weights)->required();
  pp->add_option("--in", in)->required();
  pp->add_option("--spec", spec)->required();
  pp->add_option("--out", out)->required();
  pp->add_option("--tile", tile, "tile size, 0 = whole frame")->capture_default_str();
  pp->add_option("--overlap", overlap, "tile overlap, default = receptive radius");
  pp->add_flag("--chroma", chroma, "process chroma planes too");
  pp->callback([&] { rc = cmd_postproc(net, weights, in, spec, out, tile, overlap, chroma); });

  auto* mc = app.add_subcommand("mock-codec", "Code a sequence with the built-in transform codec");
  mc->add_option("--in", in)->required();
  mc->add_option("--spec", spec)->required();
  mc->add_option("--qp", qp)->capture_default_str();
  mc->add_option("--out", out)->required();
  mc->add_option("--fps", fps, "frame rate for the bitrate line");
  mc->callback([&] { rc = cmd_mock_codec(in, spec, qp, out, fps); });

  auto* run = app.add_subcommand("run", "Run every job of an experiment config");
  run->add_option("config", config)->required();
  run->add_option("--workers", workers, "parallel jobs (RQPIPE_WORKERS wins)");
  run->add_flag("--fresh", fresh, "rerun jobs even when intact records exist");
  run->callback([&] { rc = cmd_run(config, workers, fresh); });

  auto* rep = app.add_subcommand("report", "RQ curves, BD table and timing summary from a manifest");
  rep->add_option("config", config);
  rep->add_option("--manifest", manifest);
  rep->add_option("--out", out, "report directory");
  rep->callback([&] { rc = cmd_report(config, manifest, out); });

  auto* dp = app.add_subcommand("dump-patch", "Write a luma crop as PGM");
  dp->add_option("--in", in)->required();
  dp->add_option("--spec", spec)->required();
  dp->add_option("--frame", frame, "0-based")->capture_default_str();
  dp->add_option("--x", px);
  dp->add_option("--y", py);
  dp->add_option("--width", pw)->capture_default_str();
  dp->add_option("--height", ph)->capture_default_str();
  dp->add_option("--out", out)->required();
  dp->callback([&] { rc = cmd_dump_patch(in, spec, frame, px, py, pw, ph, out); });

  auto* iw = app.add_subcommand("init-weights", "Write a random weight file for a network");
  iw->add_option("--net", net)->capture_default_str();
  iw->add_option("--out", out)->required();
  iw->add_option("--seed", seed)->capture_default_str();
  iw->add_option("--scale", wscale)->capture_default_str();
  iw->callback([&] { rc = cmd_init_weights(net, out, seed, wscale); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ToolError& e) {
    std::cerr << "error: " << e.what() << "\n" << e.output();
    return 5;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
