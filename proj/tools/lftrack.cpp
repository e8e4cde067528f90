// Command-line surface for the light-field tracking pipeline: synthetic data,
// structure-image extraction, toy training, tracking, evaluation, gradient
// checking, and a small benchmark. Exit codes: 0 success, 1 internal/numeric
// failure, 2 input/validation failure.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>

#include "lftrack/checkpoint.hpp"
#include "lftrack/config.hpp"
#include "lftrack/esi.hpp"
#include "lftrack/gradcheck.hpp"
#include "lftrack/light_field_io.hpp"
#include "lftrack/scene.hpp"
#include "lftrack/track.hpp"
#include "lftrack/train.hpp"

namespace fs = std::filesystem;
using namespace lftrack;

namespace {

struct ConfigArgs {
  std::vector<std::string> files;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.files,
                  "flat key=value config file (repeatable, applied in order)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.sets,
                  "key=value override applied after config files (repeatable, last wins)");
}

RunConfig resolve_config(const ConfigArgs& args) {
  RunConfig cfg;
  for (const auto& f : args.files) load_run_config(cfg, f);
  for (const auto& s : args.sets) apply_run_assignment(cfg, s);
  return cfg;
}

// Help footer naming every config key the command reads.
std::string key_footer(const std::vector<std::string_view>& names) {
  std::string out = "Config keys read by this command:\n";
  for (const auto& k : run_config_keys()) {
    bool wanted = false;
    for (auto n : names)
      if (n == "all" || n == k.name) wanted = true;
    if (!wanted) continue;
    out += "  " + k.name;
    out.append(k.name.size() < 16 ? 16 - k.name.size() : 1, ' ');
    out += k.doc + "\n";
  }
  return out;
}

const std::vector<std::string_view> kEsiKeys = {"d", "variant", "channel_policy",
                                                "u_sel", "v_sel"};
const std::vector<std::string_view> kModelKeys = {
    "d",    "variant", "channel_policy", "u_sel",         "v_sel",         "patch_size",
    "c_emb", "depth",   "heads",          "norm",          "gas",           "tau",
    "mask_mode", "relation_mode", "rho", "p_drop", "decoder_depth", "decoder_heads",
    "template_size", "search_size", "search_scale", "template_scale", "size_damping"};

// Single-channel structure-image video as plain matrices; the tracking path
// consumes one plane per frame.
std::vector<MatXf> esi_planes(const LightFieldVideo<float>& lf, const RunConfig& cfg) {
  EsiVideo<float> video = esi_video(lf, esi_config(cfg));
  std::vector<MatXf> planes;
  planes.reserve(video.size());
  for (const auto& frame : video) {
    if (frame.channels.size() != 1)
      throw ValidationError(
          "tracking needs single-channel structure images; set channel_policy=luma");
    planes.push_back(frame.channels[0].matrix());
  }
  return planes;
}

train::VideoSample load_video_sample(const fs::path& dir, const RunConfig& cfg) {
  const fs::path lf_path = dir / "lf.lft";
  const fs::path gt_path = dir / "gt.txt";
  if (!fs::exists(lf_path))
    throw ValidationError("dataset entry is missing " + lf_path.string());
  if (!fs::exists(gt_path))
    throw ValidationError("dataset entry is missing " + gt_path.string());
  LightFieldVideo<float> lf = load_lightfield(lf_path);
  GroundTruth gt = load_ground_truth(gt_path);
  if (Index(gt.boxes.size()) != lf.frames())
    throw ValidationError("ground truth frame count does not match " + lf_path.string());

  train::VideoSample vs;
  vs.frames = esi_planes(lf, cfg);
  vs.boxes.reserve(gt.boxes.size());
  for (const auto& per_frame : gt.boxes) {
    if (per_frame.empty())
      throw ValidationError("ground truth has a frame with no boxes in " + gt_path.string());
    vs.boxes.push_back(per_frame[0]);  // layer 0 is the tracked target
  }
  return vs;
}

int cmd_synth(const std::string& scene_path, const std::string& out_path, std::string gt_path,
              std::uint64_t seed, const std::string& format, int bit_depth) {
  SceneFile sf = parse_scene_file(scene_path);
  auto [lf, gt] = generate_synthetic(sf.spec, sf.T, sf.U, sf.V, sf.H, sf.W, sf.C, seed,
                                     sf.frame_rate_hz);
  const LfFormat fmt = format == "manifest" ? LfFormat::manifest : LfFormat::packed;
  save_lightfield(lf, out_path, fmt, bit_depth);
  if (gt_path.empty()) gt_path = (fs::path(out_path).parent_path() / "gt.txt").string();
  save_ground_truth(gt, gt_path);
  std::printf("wrote %s (T=%d U=%d V=%d H=%d W=%d C=%d)\nwrote %s\n", out_path.c_str(), sf.T,
              sf.U, sf.V, sf.H, sf.W, sf.C, gt_path.c_str());
  return 0;
}

int cmd_esi(const std::string& lf_path, const std::string& out_dir, const ConfigArgs& args,
            bool png, const std::string& prefix) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.d < 1) throw ValidationError("config: d must be >= 1");
  LightFieldVideo<float> lf = load_lightfield(lf_path);
  EsiVideo<float> video = esi_video(lf, esi_config(cfg));

  fs::create_directories(out_dir);
  char name[64];
  for (std::size_t t = 0; t < video.size(); ++t) {
    const EsiFrame<float>& frame = video[t];
    std::snprintf(name, sizeof name, "%s%04zu.pfm", prefix.c_str(), t);
    esi_write_pfm(frame, fs::path(out_dir) / name);
    if (png) {
      std::snprintf(name, sizeof name, "%s%04zu.png", prefix.c_str(), t);
      esi_write_png_normalized(frame, fs::path(out_dir) / name);
    }
    double mn = double(frame.channels[0](0, 0)), mx = mn, sum = 0;
    std::size_t count = 0;
    for (const auto& ch : frame.channels) {
      mn = std::min(mn, double(ch.minCoeff()));
      mx = std::max(mx, double(ch.maxCoeff()));
      sum += double(ch.sum());
      count += std::size_t(ch.size());
    }
    std::printf("frame=%zu min=%.9g max=%.9g mean=%.9g\n", t, mn, mx, sum / double(count));
  }
  return 0;
}

int cmd_train(const std::vector<std::string>& data_dirs, const std::string& out_path,
              const std::string& trace_path, const ConfigArgs& args) {
  const RunConfig cfg = resolve_config(args);
  validate_run_config(cfg);

  std::vector<train::VideoSample> data;
  data.reserve(data_dirs.size());
  for (const auto& dir : data_dirs) data.push_back(load_video_sample(dir, cfg));

  nn::ParamStore<float> ps;
  Rng init_rng(Rng::derive(cfg.seed, 0x111));
  track::TrackModelP model = track::make_track_model(ps, model_config(cfg), init_rng);
  train::TrainResult res = train::train_toy(ps, model, train_config(cfg), data);

  save_checkpoint(out_path, ps.to_tensors());
  save_run_config(cfg, out_path + ".cfg");
  if (!trace_path.empty()) {
    std::ofstream trace(trace_path, std::ios::binary);
    if (!trace) throw ValidationError("cannot write loss trace: " + trace_path);
    trace << "step,total,l_m,l_cls,l_reg\n";
    char line[160];
    for (std::size_t i = 0; i < res.total.size(); ++i) {
      std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", i, res.total[i], res.l_m[i],
                    res.l_cls[i], res.l_reg[i]);
      trace << line;
    }
  }
  std::printf("wrote %s and %s.cfg\nsteps=%zu first_total=%.6g final_total=%.6g\n",
              out_path.c_str(), out_path.c_str(), res.total.size(), res.total.front(),
              res.total.back());
  return 0;
}

Box parse_init_box(const std::vector<double>& init) {
  Box b;
  b.cx = float(init[0]);
  b.cy = float(init[1]);
  b.w = float(init[2]);
  b.h = float(init[3]);
  return b;
}

int cmd_track(const std::string& model_path, const std::string& lf_path,
              const std::string& out_path, const std::string& gt_path,
              const std::vector<double>& init, const ConfigArgs& args) {
  if (!fs::exists(model_path))
    throw ValidationError("checkpoint not found: " + model_path);

  // defaults -> checkpoint sidecar -> explicit files -> --set, later wins
  ConfigArgs merged = args;
  if (fs::exists(model_path + ".cfg"))
    merged.files.insert(merged.files.begin(), model_path + ".cfg");
  const RunConfig cfg = resolve_config(merged);
  validate_run_config(cfg);

  nn::ParamStore<float> ps;
  Rng init_rng(1);
  const track::ModelConfig mc = model_config(cfg);
  track::TrackModelP model = track::make_track_model(ps, mc, init_rng);
  ps.load_tensors(load_checkpoint(model_path));

  LightFieldVideo<float> lf = load_lightfield(lf_path);
  std::vector<MatXf> frames = esi_planes(lf, cfg);
  if (frames.empty()) throw ValidationError("light field has no frames");

  Box first;
  if (!init.empty()) {
    first = parse_init_box(init);
  } else if (!gt_path.empty()) {
    GroundTruth gt = load_ground_truth(gt_path);
    if (gt.boxes.empty() || gt.boxes[0].empty())
      throw ValidationError("ground truth has no frame-0 box");
    first = gt.boxes[0][0];
  } else {
    throw ValidationError("track needs either --gt or --init for the first frame");
  }

  std::vector<track::ResultLine> results;
  results.push_back({0, first, 1.0});
  track::TrackerState<float> st = track::init_tracker(mc, frames[0], first);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    auto [box, score] = track::track_step(ps, model, mc, st, frames[t]);
    results.push_back({int(t), box, score});
  }
  track::save_results(out_path, results);
  std::printf("wrote %s (frames=%zu)\n", out_path.c_str(), results.size());
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& out_path) {
  std::vector<track::ResultLine> lines = track::load_results(pred_path);
  GroundTruth gt = load_ground_truth(gt_path);
  if (lines.size() != gt.boxes.size())
    throw ValidationError("prediction and ground truth frame counts differ");

  std::vector<Box> pred, ref;
  for (std::size_t t = 0; t < lines.size(); ++t) {
    if (lines[t].t != int(t))
      throw ValidationError("predictions must cover frames 0..T-1 in order");
    if (gt.boxes[t].empty()) throw ValidationError("ground truth frame has no boxes");
    pred.push_back(lines[t].box);
    ref.push_back(gt.boxes[t][0]);
  }
  track::SotMetrics m = track::eval_sot(pred, ref);

  char buf[160];
  std::snprintf(buf, sizeof buf, "success=%.6g\nprecision=%.6g\nnorm_precision=%.6g\n",
                m.success_auc, m.precision, m.norm_precision);
  std::fputs(buf, stdout);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write metrics file: " + out_path);
    out << buf;
  }
  return 0;
}

int cmd_gradcheck(const ConfigArgs& args) {
  const RunConfig cfg = resolve_config(args);
  bool all_pass = true;
  for (auto& check : grad::standard_checks(cfg.seed)) {
    grad::GradReport rep = grad::grad_check(check.loss, check.ps, 1e-4, check.tol);
    std::printf("check=%s status=%s tol=%.3g checked=%zu worst_param=%s worst_rel=%.3g\n",
                check.name.c_str(), rep.pass ? "PASS" : "FAIL", check.tol, rep.checked,
                rep.worst_param.c_str(), rep.worst_rel);
    for (const auto& f : rep.failures)
      std::printf("  param=%s entry=(%lld,%lld) analytic=%.9g fd=%.9g rel=%.3g\n",
                  f.name.c_str(), (long long)f.row, (long long)f.col, f.analytic, f.fd, f.rel);
    all_pass = all_pass && rep.pass;
  }
  if (!all_pass) throw NumericError("gradient check failed");
  return 0;
}

int cmd_bench(const ConfigArgs& args, int frames, int size, int reps) {
  if (frames < 1 || size < 16 || reps < 1)
    throw ValidationError("bench needs frames >= 1, size >= 16, reps >= 1");
  const RunConfig cfg = resolve_config(args);

  SceneSpec spec;
  spec.background_texture = TextureKind::noise;
  spec.background_lo = 0.f;
  spec.background_hi = 1.f;
  spec.background_cell = 4;
  auto [lf, gt] = generate_synthetic(spec, frames, 5, 5, size, size, 1, cfg.seed);
  (void)gt;

  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) {
    EsiVideo<float> video = esi_video(lf, esi_config(cfg));
    if (video.empty()) throw NumericError("benchmark produced no frames");
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double total_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::printf("threads=%d frames=%d size=%d reps=%d total_ms=%.3f per_frame_ms=%.3f\n",
              worker_count(), frames, size, reps, total_ms,
              total_ms / double(frames) / double(reps));
  return 0;
}

std::string scene_footer() {
  return "Scene file keys: T U V H W C frame_rate_hz global_gain background_texture\n"
         "background_lo background_hi background_cell layerK.texture layerK.disparity\n"
         "layerK.vx layerK.vy layerK.cx layerK.cy layerK.w layerK.h layerK.lo layerK.hi\n"
         "layerK.cell (K = 0,1,... contiguous; no run-config keys are read)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"light-field structure-image tracking pipeline"};
  app.require_subcommand(1);

  std::function<int()> runner;

  // ---- synth ----
  std::string sy_scene, sy_out, sy_gt, sy_format = "packed";
  std::uint64_t sy_seed = 1;
  int sy_bits = 8;
  auto* synth = app.add_subcommand("synth", "render a synthetic light-field video");
  synth->add_option("--scene", sy_scene, "scene description file")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", sy_out, "output light field (.lft, or directory for manifest)")
      ->required();
  synth->add_option("--gt", sy_gt, "ground-truth output (default: gt.txt beside --out)");
  synth->add_option("--seed", sy_seed, "texture seed");
  synth->add_option("--format", sy_format, "packed|manifest")
      ->check(CLI::IsMember({"packed", "manifest"}));
  synth->add_option("--bit-depth", sy_bits, "manifest PNG bit depth")
      ->check(CLI::IsMember({8, 16}));
  synth->footer(scene_footer());
  synth->callback([&] {
    runner = [&] { return cmd_synth(sy_scene, sy_out, sy_gt, sy_seed, sy_format, sy_bits); };
  });

  // ---- esi ----
  std::string es_lf, es_out, es_prefix = "frame_";
  bool es_png = false;
  ConfigArgs es_cfg;
  auto* esi = app.add_subcommand("esi", "extract structure images from a light field");
  esi->add_option("--lf", es_lf, "input light field")->required()->check(CLI::ExistingPath);
  esi->add_option("--out", es_out, "output directory for PFM frames")->required();
  esi->add_flag("--png", es_png, "also write normalized 16-bit PNG previews");
  esi->add_option("--prefix", es_prefix, "output filename prefix");
  add_config_options(esi, es_cfg);
  esi->footer(key_footer(kEsiKeys));
  esi->callback([&] {
    runner = [&] { return cmd_esi(es_lf, es_out, es_cfg, es_png, es_prefix); };
  });

  // ---- train ----
  std::vector<std::string> tr_data;
  std::string tr_out, tr_trace;
  ConfigArgs tr_cfg;
  auto* train_cmd = app.add_subcommand("train", "train the toy tracker on synthetic videos");
  train_cmd->add_option("--data", tr_data, "dataset directory holding lf.lft + gt.txt (repeatable)")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr_out, "checkpoint output path")->required();
  train_cmd->add_option("--trace", tr_trace, "per-step loss trace CSV");
  add_config_options(train_cmd, tr_cfg);
  train_cmd->footer(key_footer({"all"}));
  train_cmd->callback([&] {
    runner = [&] { return cmd_train(tr_data, tr_out, tr_trace, tr_cfg); };
  });

  // ---- track ----
  std::string tk_model, tk_lf, tk_out, tk_gt;
  std::vector<double> tk_init;
  ConfigArgs tk_cfg;
  auto* track_cmd = app.add_subcommand("track", "run the tracker over a light-field video");
  track_cmd->add_option("--model", tk_model, "checkpoint written by train")->required();
  track_cmd->add_option("--lf", tk_lf, "input light field")->required()->check(CLI::ExistingPath);
  track_cmd->add_option("--out", tk_out, "results output path")->required();
  track_cmd->add_option("--gt", tk_gt, "ground truth supplying the first-frame box")
      ->check(CLI::ExistingFile);
  track_cmd->add_option("--init", tk_init, "first-frame box: cx cy w h")->expected(4);
  add_config_options(track_cmd, tk_cfg);
  track_cmd->footer(key_footer(kModelKeys) +
                    "A config sidecar written by train (<model>.cfg) is applied first.\n");
  track_cmd->callback([&] {
    runner = [&] { return cmd_track(tk_model, tk_lf, tk_out, tk_gt, tk_init, tk_cfg); };
  });

  // ---- eval ----
  std::string ev_pred, ev_gt, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "score tracking results against ground truth");
  eval_cmd->add_option("--pred", ev_pred, "results file written by track")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", ev_gt, "ground-truth boxes file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev_out, "metrics report output path (flat key=value)");
  eval_cmd->footer("No run-config keys are read.\n");
  eval_cmd->callback([&] {
    runner = [&] { return cmd_eval(ev_pred, ev_gt, ev_out); };
  });

  // ---- gradcheck ----
  ConfigArgs gc_cfg;
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every trainable parameter");
  add_config_options(gradcheck_cmd, gc_cfg);
  gradcheck_cmd->footer(key_footer({"seed"}));
  gradcheck_cmd->callback([&] {
    runner = [&] { return cmd_gradcheck(gc_cfg); };
  });

  // ---- bench ----
  int bn_frames = 4, bn_size = 128, bn_reps = 3;
  ConfigArgs bn_cfg;
  auto* bench_cmd = app.add_subcommand("bench", "time structure-image extraction");
  bench_cmd->add_option("--frames", bn_frames, "synthetic video length");
  bench_cmd->add_option("--size", bn_size, "square frame side in pixels");
  bench_cmd->add_option("--reps", bn_reps, "repetitions to average over");
  add_config_options(bench_cmd, bn_cfg);
  bench_cmd->footer(key_footer(kEsiKeys) + "Honors LF_ESI_THREADS.\n");
  bench_cmd->callback([&] {
    runner = [&] { return cmd_bench(bn_cfg, bn_frames, bn_size, bn_reps); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags/paths are input errors
  }

  try {
    return runner();
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
