// rsc: command-line front end (edit, preview, synth, train-toy, report).

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rsc/pipeline.hpp"
#include "rsc/toy_scene.hpp"
#include "rsc/toy_training.hpp"

namespace {

using namespace rsc;

struct RunFlags {
  fs::path trajectory, prompt, out;
  std::optional<fs::path> config;
  std::optional<double> alpha, control_scale;
  std::optional<int> steps, workers, dilation;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend, providers, start_mode;
  std::optional<fs::path> weights;
  bool diagnostics = false, post_composite = false, ground_once = false;

  void add(CLI::App* cmd, const std::string& out_help) {
    cmd->add_option("--trajectory", trajectory, "input trajectory directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--prompt", prompt, "prompt spec JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, out_help)->required();
    cmd->add_option("--config", config, "rsc.toml with defaults for the flags below")->check(CLI::ExistingFile);
    cmd->add_option("--alpha", alpha, "blend decay rate in [0,1]");
    cmd->add_option("--steps", steps, "denoising steps T");
    cmd->add_option("--control-scale", control_scale, "pose residual scale (>= 0)");
    cmd->add_option("--seed", seed, "noise seed");
    cmd->add_option("--workers", workers, "parallel frame workers");
    cmd->add_option("--backend", backend, "analytic-gmm | trained-conv | external:<name>");
    cmd->add_option("--providers", providers, "provider suite name");
    cmd->add_option("--weights", weights, "trained-conv weights file");
    cmd->add_option("--start-mode", start_mode, "gaussian | anchor");
    cmd->add_option("--dilation", dilation, "editable-region dilation in pixels");
    cmd->add_flag("--diagnostics", diagnostics, "append per-step records to the manifest");
    cmd->add_flag("--post-composite", post_composite, "paste original pixels back into preserved regions");
    cmd->add_flag("--ground-once", ground_once, "ground the source object on the first frame only");
  }

  RunConfig resolve() const {
    ConfigLayer l;
    l.alpha = alpha;
    l.control_scale = control_scale;
    l.steps = steps;
    l.workers = workers;
    l.dilation = dilation;
    l.seed = seed;
    l.backend = backend;
    l.providers = providers;
    l.start_mode = start_mode;
    l.weights = weights;
    if (diagnostics) l.diagnostics = true;
    if (post_composite) l.post_composite = true;
    if (ground_once) l.ground_once = true;
    l.out = out;
    return resolve_config(config, l);
  }
};

int cmd_edit(const RunFlags& f) {
  const RunConfig config = f.resolve();
  const CloneResult r = run_clone(f.trajectory, f.prompt, config, &std::cerr);
  const std::size_t failed = r.manifest.failed_count();
  std::cout << "edited " << r.manifest.entries.size() - failed << " of " << r.manifest.entries.size()
            << " frames into " << config.out.string() << "\n";
  for (const auto& e : r.manifest.entries)
    if (e.status == FrameStatus::Failed) std::cerr << "frame " << e.index << ": " << e.error << "\n";
  return r.exit_code();
}

int cmd_preview(const RunFlags& f) {
  const RunConfig config = f.resolve();
  CloneResult r;
  const Tensor grid = run_preview(f.trajectory, f.prompt, config, &r);
  if (config.out.has_parent_path()) ensure_directory(config.out.parent_path());
  png::write_rgb(config.out, grid);
  std::cout << "wrote " << config.out.string() << "\n";
  for (const auto& e : r.manifest.entries)
    if (e.status == FrameStatus::Failed) std::cerr << "frame " << e.index << ": " << e.error << "\n";
  return r.exit_code();
}

struct SynthFlags {
  int frames = 10;
  fs::path out;
  std::uint64_t seed = 7;
  std::string shape = "disk", color = "red";
  double radius = 6.0;
  std::string prompt_shape = "disk", prompt_color = "blue";
};

Rgb named_color(const std::string& name) {
  for (const auto& c : toy::palette())
    if (name == c.name) return c.rgb;
  throw Error(ErrorKind::InvalidArgument, "unknown colour '" + name + "'");
}

int cmd_synth(const SynthFlags& f) {
  ToySceneSpec spec;
  spec.shape = parse_shape(f.shape);
  spec.color = named_color(f.color);
  spec.label = f.color + " " + f.shape;
  spec.radius = f.radius;
  const TrajectoryRecord traj = make_toy_scene(spec, f.frames, f.seed);
  save_trajectory(traj, f.out);
  png::write_rgb(f.out / "prompt.png", render_prompt_image(parse_shape(f.prompt_shape), named_color(f.prompt_color)));
  write_json(f.out / "prompt.json", {{"prompt_image", "prompt.png"},
                                     {"text", f.prompt_color + " " + f.prompt_shape},
                                     {"source_object_text", spec.label},
                                     {"placement", "auto"}});
  std::cout << "wrote " << f.frames << " frames and a sample prompt to " << f.out.string() << "\n";
  return 0;
}

struct TrainFlags {
  fs::path out;
  toy::TrainingConfig config;
  int channels = toy::ToyConvConfig{}.channels;
  bool quiet = false;
};

int cmd_train(TrainFlags& f) {
  if (!f.quiet)
    f.config.progress = [](int it, double loss) { std::cout << "iter " << it << " loss " << loss << std::endl; };
  toy::ToyConvConfig net_cfg;
  net_cfg.channels = f.channels;
  toy::ToyConvNet net(net_cfg, toy::ToyConvParams::seeded(net_cfg, f.config.seed));
  const auto s = toy::train_toy(net, f.config);
  if (f.out.has_parent_path()) ensure_directory(f.out.parent_path());
  toy::save_weights(f.out, net);
  std::cout << "trained " << f.config.iterations << " iterations on " << f.config.frames << " frames in " << s.seconds
            << " s, loss " << s.first_loss << " -> " << s.final_loss << "; wrote " << f.out.string() << "\n";
  return 0;
}

int cmd_report(const fs::path& edited, const std::optional<fs::path>& original, const ReportOptions& options) {
  const ReportResult r = run_report(edited, original, options);
  const auto& a = r.report;
  std::cout << "frames " << a.frames.size() << "  mean preserved PSNR " << a.mean_psnr << " dB (min " << a.min_psnr
            << ")  mean change " << a.mean_change << "  mean IoU " << a.mean_iou << "\n"
            << "wrote " << (edited / "report.json").string() << " and " << (edited / "preview.png").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robotic scene cloning: visual-prompt editing of demonstration trajectories"};
  app.require_subcommand(1);

  RunFlags edit_flags, preview_flags;
  edit_flags.add(app.add_subcommand("edit", "clone a trajectory with a visual prompt"), "output directory");
  preview_flags.add(app.add_subcommand("preview", "edit first/middle/last frames into a grid image"), "grid PNG path");

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic toy trajectory and a sample prompt");
  synth_cmd->add_option("--frames", synth.frames, "frame count")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth.out, "output trajectory directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "render seed");
  synth_cmd->add_option("--shape", synth.shape, "disk | square | bar");
  synth_cmd->add_option("--color", synth.color, "object colour name");
  synth_cmd->add_option("--radius", synth.radius, "object radius in pixels");
  synth_cmd->add_option("--prompt-shape", synth.prompt_shape, "shape shown by the sample prompt");
  synth_cmd->add_option("--prompt-color", synth.prompt_color, "colour shown by the sample prompt");

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train-toy", "train the trained-conv toy denoiser");
  train_cmd->add_option("--out", train.out, "weights file")->required();
  train_cmd->add_option("--frames", train.config.frames, "synthetic training frames")->check(CLI::PositiveNumber);
  train_cmd->add_option("--iterations", train.config.iterations, "optimizer steps")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", train.config.batch, "batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train.config.learning_rate, "peak learning rate");
  train_cmd->add_option("--seed", train.config.seed, "data and init seed");
  train_cmd->add_option("--channels", train.channels, "hidden width")->check(CLI::PositiveNumber);
  train_cmd->add_option("--time-power", train.config.time_power, "noise-level sampling exponent (>1 favours low noise)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--quiet", train.quiet, "no progress lines");

  fs::path report_edited;
  std::optional<fs::path> report_original;
  ReportOptions report_options;
  auto* report_cmd = app.add_subcommand("report", "score an edit output directory");
  report_cmd->add_option("--edited", report_edited, "edit output directory")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--original", report_original, "source trajectory (default: manifest input_root)");
  report_cmd->add_option("--margin", report_options.margin, "extra dilation before preserved-region metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("edit")) return cmd_edit(edit_flags);
    if (app.got_subcommand("preview")) return cmd_preview(preview_flags);
    if (app.got_subcommand("synth")) return cmd_synth(synth);
    if (app.got_subcommand("train-toy")) return cmd_train(train);
    if (app.got_subcommand("report")) return cmd_report(report_edited, report_original, report_options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
