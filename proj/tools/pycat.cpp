#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pycat/config.hpp"
#include "pycat/data.hpp"
#include "pycat/error.hpp"
#include "pycat/grad_suite.hpp"
#include "pycat/harness.hpp"
#include "pycat/metrics.hpp"
#include "pycat/model.hpp"

namespace fs = std::filesystem;
using namespace pycat;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

// Annotation file, or a directory holding annotations.json.
std::vector<SampleRecord> load_data(const std::string& path, std::vector<double>* sigmas) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "annotations.json";
  return ingest_annotations(p, sigmas);
}

int cmd_gen_data(int64_t count, uint64_t seed, bool video, int64_t frames, int64_t size, const std::string& out) {
  if (count < 1) throw ContractError("--count must be at least 1");
  const ArticulatedMesh mesh = build_toy_mesh();
  const auto samples = synth_generate(mesh, count, seed, video, frames, size);
  export_annotations(out, samples, mesh);
  std::cerr << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& variant, const std::string& data,
              const std::string& out) {
  RunConfig cfg = config_or_default(config);
  if (!variant.empty()) {
    cfg.model.variant = parse_variant(variant);
    if (!uses_temporal(cfg.model.variant)) cfg.frames = 1;
  }
  const ArticulatedMesh mesh = build_toy_mesh();
  const auto samples = data.empty() ? synthetic_train_set(cfg, mesh) : load_data(data, nullptr);
  TrainOptions opts;
  opts.out_dir = out;
  const int64_t every = std::max<int64_t>(cfg.log_every, 1);
  opts.on_step = [&](const StepLog& s) {
    if ((s.step + 1) % every != 0 && s.step + 1 != cfg.steps && s.step != 0) return;
    std::fprintf(stderr, "step %lld/%lld loss %.6g\n", static_cast<long long>(s.step + 1),
                 static_cast<long long>(cfg.steps), s.total);
  };
  const TrainResult r = train(cfg, samples, opts);
  std::cerr << "data digest " << r.data_digest << "\n";
  std::cerr << "saved " << (fs::path(out) / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& mode_name,
             const std::string& report, const std::string& out) {
  const EvalMode mode = parse_eval_mode(mode_name);
  ReportFormat fmt;
  if (report == "csv") {
    fmt = ReportFormat::csv;
  } else if (report == "txt") {
    fmt = ReportFormat::text;
  } else {
    throw ParseError("--report must be csv or txt, got '" + report + "'");
  }
  RunConfig cfg;
  const auto model = load_model(ckpt, &cfg);
  std::vector<double> sigmas;
  const auto samples = data.empty() ? synthetic_eval_set(cfg, model->mesh()) : load_data(data, &sigmas);
  if (sigmas.empty()) sigmas.assign(model->mesh().num_joints, cfg.oks_sigma);
  const MetricsReport r = evaluate(*model, samples, mode, cfg.frames, sigmas);
  const std::string text = format_report({r}, fmt);
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& out) {
  const RunConfig cfg = config_or_default(config);
  const AblationResult r = ablate(cfg, out, [](const std::string& line) { std::cerr << line << "\n"; });
  std::cout << r.table_text;
  return 0;
}

int cmd_stream(const std::string& frames_dir, const std::string& ckpt, std::optional<int64_t> window,
               const std::string& timing) {
  RunConfig cfg;
  const auto model = load_model(ckpt, &cfg);
  const int64_t T = window.value_or(cfg.frames);
  if (T < 1) throw ContractError("--window must be at least 1");
  const StreamResult r = stream(*model, frames_dir, T, [](const StreamRecord& rec) {
    std::cout << format_stream_record(rec) << "\n";
    std::cout.flush();
  });
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const std::string summary = format_stage_times(r.times, display_name(model->config().variant));
  if (timing.empty()) {
    std::cerr << summary;
  } else {
    write_file(timing, summary);
  }
  return 0;
}

int cmd_grad_check(const std::string& module) {
  int failed = 0;
  run_grad_suite(module, [&](const GradSuiteResult& r) {
    if (!r.passed()) ++failed;
    std::printf("%-18s %-52s %.3e < %.0e %s\n", r.module.c_str(), r.check.c_str(), r.rel_error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
    std::fflush(stdout);
  });
  if (failed) std::printf("%d check(s) failed\n", failed);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human mesh recovery with coordinate attention, Swin features and temporal fusion"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic annotated dataset");
  int64_t count = 0;
  uint64_t seed = 0;
  bool video = false;
  int64_t seq_frames = 8;
  int64_t size = 112;
  std::string gen_out;
  gen->add_option("--count", count, "Number of samples")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_flag("--video", video, "Emit smooth sequences instead of stills");
  gen->add_option("--frames", seq_frames, "Frames per sequence in video mode");
  gen->add_option("--size", size, "Image side in pixels");
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one variant");
  std::string tr_config, tr_variant, tr_data, tr_out;
  tr->add_option("--config", tr_config, "Config file (defaults when omitted)");
  tr->add_option("--variant", tr_variant, "baseline|ca|ca_transformer|ca_fpn_transformer|pycat4");
  tr->add_option("--data", tr_data, "annotations.json or its directory (synthetic when omitted)");
  tr->add_option("--out", tr_out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_mode = "3d", ev_report = "txt", ev_out;
  ev->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "annotations.json or its directory (synthetic held-out set when omitted)");
  ev->add_option("--mode", ev_mode, "2d or 3d");
  ev->add_option("--report", ev_report, "csv or txt");
  ev->add_option("--out", ev_out, "Report file (stdout when omitted)");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate all five variants");
  std::string ab_config, ab_out;
  ab->add_option("--config", ab_config, "Base config file (defaults when omitted)");
  ab->add_option("--out", ab_out, "Output directory")->required();

  auto* st = app.add_subcommand("stream", "Frame-by-frame inference over a directory of PNM frames");
  std::string st_frames, st_ckpt, st_timing;
  std::optional<int64_t> st_window;
  st->add_option("--frames", st_frames, "Frames directory")->required();
  st->add_option("--ckpt", st_ckpt, "Model checkpoint")->required();
  st->add_option("--window", st_window, "Temporal window T (checkpoint config when omitted)");
  st->add_option("--timing", st_timing, "Timing summary file (stderr when omitted)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  std::string gc_module;
  gc->add_option("--module", gc_module, "Run one module only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(count, seed, video, seq_frames, size, gen_out);
    if (*tr) return cmd_train(tr_config, tr_variant, tr_data, tr_out);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_mode, ev_report, ev_out);
    if (*ab) return cmd_ablate(ab_config, ab_out);
    if (*st) return cmd_stream(st_frames, st_ckpt, st_window, st_timing);
    if (*gc) return cmd_grad_check(gc_module);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
