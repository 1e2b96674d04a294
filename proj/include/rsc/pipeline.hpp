#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rsc/backend.hpp"
#include "rsc/condition_generator.hpp"
#include "rsc/eval_metrics.hpp"
#include "rsc/providers.hpp"
#include "rsc/scene_model.hpp"
#include "rsc/visual_prompt_editor.hpp"

namespace rsc {

struct RunConfig {
  std::string backend = "trained-conv";
  std::string providers = "synthetic";
  std::optional<fs::path> weights;
  double alpha = 0.3;
  int steps = 50;
  double control_scale = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;
  bool diagnostics = false;
  bool post_composite = false;
  bool ground_once = false;
  StartMode start_mode = StartMode::Gaussian;
  int dilation = kDefaultDilation;
  fs::path out;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0,1]");
    require(steps >= 1, ErrorKind::InvalidArgument, "steps must be >= 1");
    require(std::isfinite(control_scale) && control_scale >= 0.0, ErrorKind::InvalidArgument,
            "control_scale must be >= 0");
    require(workers >= 1, ErrorKind::InvalidArgument, "workers must be >= 1");
    require(dilation >= 0, ErrorKind::InvalidArgument, "dilation must be >= 0");
  }
};

// Partial RunConfig from one source; unset fields fall through to the next source.
struct ConfigLayer {
  std::optional<std::string> backend, providers, start_mode;
  std::optional<fs::path> weights, out;
  std::optional<double> alpha, control_scale;
  std::optional<int> steps, workers, dilation;
  std::optional<std::uint64_t> seed;
  std::optional<bool> diagnostics, post_composite, ground_once;
};

inline void apply(RunConfig& c, const ConfigLayer& l) {
  if (l.backend) c.backend = *l.backend;
  if (l.providers) c.providers = *l.providers;
  if (l.start_mode) c.start_mode = parse_start_mode(*l.start_mode);
  if (l.weights) c.weights = *l.weights;
  if (l.out) c.out = *l.out;
  if (l.alpha) c.alpha = *l.alpha;
  if (l.control_scale) c.control_scale = *l.control_scale;
  if (l.steps) c.steps = *l.steps;
  if (l.workers) c.workers = *l.workers;
  if (l.dilation) c.dilation = *l.dilation;
  if (l.seed) c.seed = *l.seed;
  if (l.diagnostics) c.diagnostics = *l.diagnostics;
  if (l.post_composite) c.post_composite = *l.post_composite;
  if (l.ground_once) c.ground_once = *l.ground_once;
}

// rsc.toml: flat `key = value` lines, strings optionally quoted, `#` comments. Relative paths
// resolve against the file's directory.
inline ConfigLayer load_config_file(const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::InvalidArgument, "config " + path.string() + ": " + e.message());
  }
  auto text = [](std::string v) {
    if (const auto hash = v.find(" #"); hash != std::string::npos) v.erase(hash);
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.pop_back();
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
    return v;
  };
  auto number = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      require(used == v.size(), ErrorKind::InvalidArgument, "");
      return d;
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "config key '" + key + "' expects a number, got '" + v + "'");
    }
  };
  auto boolean = [&](const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw Error(ErrorKind::InvalidArgument, "config key '" + key + "' expects true or false, got '" + v + "'");
  };
  const fs::path base = path.parent_path();
  ConfigLayer l;
  for (const auto& [key, node] : tree) {
    require(node.empty(), ErrorKind::InvalidArgument, "config sections are not supported ([" + key + "])");
    const std::string v = text(node.data());
    if (key == "backend") l.backend = v;
    else if (key == "providers") l.providers = v;
    else if (key == "start_mode") l.start_mode = v;
    else if (key == "weights") l.weights = base / v;
    else if (key == "out") l.out = base / v;
    else if (key == "alpha") l.alpha = number(key, v);
    else if (key == "control_scale") l.control_scale = number(key, v);
    else if (key == "steps") l.steps = static_cast<int>(number(key, v));
    else if (key == "workers") l.workers = static_cast<int>(number(key, v));
    else if (key == "dilation") l.dilation = static_cast<int>(number(key, v));
    else if (key == "seed") l.seed = static_cast<std::uint64_t>(number(key, v));
    else if (key == "diagnostics") l.diagnostics = boolean(key, v);
    else if (key == "post_composite") l.post_composite = boolean(key, v);
    else if (key == "ground_once") l.ground_once = boolean(key, v);
    else throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
  }
  return l;
}

// defaults < config file < RSC_BACKEND < command line.
inline RunConfig resolve_config(const std::optional<fs::path>& file, const ConfigLayer& cli) {
  RunConfig c;
  if (file) apply(c, load_config_file(*file));
  if (const char* env = std::getenv("RSC_BACKEND"); env && *env) c.backend = env;
  apply(c, cli);
  c.validate();
  return c;
}

inline Backend make_backend(const RunConfig& config) {
  BackendOptions o;
  o.steps = config.steps;
  o.seed = config.seed;
  o.weights = config.weights;
  return BackendRegistry::instance().make(config.backend, o);
}

inline ConditionModels condition_models_for(const Backend& backend, int dilation) {
  const ConditioningSpec& s = backend.conditioning;
  ConditionModels m = default_condition_models(backend.denoiser->injection_sites(), s.queries, s.token_width,
                                               s.resampler_seed, s.adapter_seed);
  m.layout.dilation = dilation;
  return m;
}

inline std::string prompt_hash(const VisualPromptSpec& spec) {
  Hasher h;
  h.i64(spec.prompt_image.channels()).i64(spec.prompt_image.height()).i64(spec.prompt_image.width());
  h.span(spec.prompt_image.values()).str(spec.text).str(spec.source_object_text);
  if (spec.placement) h.str("box").f64(spec.placement->x0).f64(spec.placement->y0).f64(spec.placement->x1).f64(spec.placement->y1);
  else h.str("auto");
  return h.hex();
}

// Covers prompt image, text, placement, alpha, T, control scale, seed and the backend/provider identities.
inline std::string condition_hash(const VisualPromptSpec& spec, const RunConfig& config, int frame_index) {
  Hasher h;
  h.str(prompt_hash(spec)).f64(config.alpha).i64(config.steps).f64(config.control_scale).u64(config.seed);
  h.str(config.backend).str(config.weights ? config.weights->string() : "").str(config.providers);
  h.str(to_string(config.start_mode)).i64(config.dilation).i64(frame_index);
  return h.hex();
}

// Per-frame noise seed, decorrelated across frames but fixed by (seed, index).
inline std::uint64_t frame_seed(std::uint64_t seed, int index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Runs fn(i) for i in [0, n) on `workers` threads; each index is claimed exactly once.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

struct FrameOutcome {
  ManifestEntry entry;
  Tensor edited;
  Mask layout;
};

// Everything shared read-only by the frame workers of one run.
struct CloneContext {
  RunConfig config;
  VisualPromptSpec prompt;
  Backend backend;
  ProviderSuite suite;
  ConditionModels models;
};

inline CloneContext make_context(const VisualPromptSpec& prompt, const RunConfig& config) {
  config.validate();
  CloneContext ctx{config, prompt, make_backend(config), ProviderRegistry::instance().make(config.providers), {}};
  require(ctx.suite.token_width == ctx.backend.conditioning.token_width, ErrorKind::ShapeMismatch,
          "provider token width " + std::to_string(ctx.suite.token_width) + " vs backend " +
              std::to_string(ctx.backend.conditioning.token_width));
  ctx.models = condition_models_for(ctx.backend, config.dilation);
  return ctx;
}

inline FrameOutcome edit_one(const FrameRecord& frame, const CloneContext& ctx,
                             const std::optional<NormalizedBox>& fixed_box) {
  const RunConfig& c = ctx.config;
  FrameOutcome out;
  ManifestEntry& e = out.entry;
  e.index = frame.index;
  e.input_path = "frames/" + frame_name(frame.index);
  e.output_path = "frames/" + frame_name(frame.index);
  e.mask_path = "masks/" + frame_name(frame.index);
  e.params = {c.alpha, c.steps, c.control_scale, c.seed};
  e.condition_hash = condition_hash(ctx.prompt, c, frame.index);
  try {
    ConditionModels models = ctx.models;
    if (fixed_box) models.layout.resolved_box = fixed_box;
    const ConditionBundle bundle = build_condition_bundle(frame, ctx.prompt, ctx.suite, models, c.control_scale);
    EditOptions options;
    options.post_composite = c.post_composite;
    const EditResult r = edit_frame(frame, bundle, ctx.backend, {c.alpha, frame_seed(c.seed, frame.index), c.start_mode},
                                    options);
    out.edited = r.edited_image;
    out.layout = bundle.c_layout;
    e.status = FrameStatus::Edited;
    e.placement_box = bundle.placement_box;
    e.flags = bundle.flags;
    e.flags.insert(e.flags.end(), r.flags.begin(), r.flags.end());
    const FrameFidelity f = frame_fidelity(frame.image, r.edited_image, bundle.c_layout, bundle.placement_box);
    e.metrics = {{"preserved_psnr", f.preserved_psnr},
                 {"preserved_mae", f.preserved_mae},
                 {"change_magnitude", f.change_magnitude},
                 {"boundary_gradient", f.boundary_gradient},
                 {"placement_iou", f.placement_iou}};
    if (c.diagnostics) {
      e.diagnostics = json::array();
      for (const auto& d : r.diagnostics) e.diagnostics.push_back(to_json(d));
    }
  } catch (const std::exception& ex) {
    e.status = FrameStatus::Failed;
    e.error = ex.what();
    e.flags.push_back("failed");
    out.edited = frame.image;
    out.layout = Mask(frame.height(), frame.width(), 1);
  }
  return out;
}

struct CloneResult {
  EditManifest manifest;
  std::vector<Tensor> edits;
  std::vector<Mask> layouts;
  int exit_code() const { return manifest.failed_count() == 0 ? 0 : 1; }
};

// Edits the chosen frames (all when `subset` is empty) without touching the disk.
inline CloneResult clone_frames(const TrajectoryRecord& traj, const CloneContext& ctx,
                                const std::vector<std::size_t>& subset = {}) {
  std::vector<std::size_t> which = subset;
  if (which.empty())
    for (std::size_t i = 0; i < traj.size(); ++i) which.push_back(i);

  std::optional<NormalizedBox> fixed_box;
  std::optional<std::string> grounding_error;
  if (ctx.config.ground_once) {
    try {
      fixed_box = resolve_placement(traj.frames[which.front()], ctx.prompt, ctx.suite);
    } catch (const Error& e) {
      grounding_error = e.what();
    }
  }

  std::vector<FrameOutcome> outcomes(which.size());
  parallel_for(which.size(), ctx.config.workers, [&](std::size_t k) {
    const FrameRecord& f = traj.frames[which[k]];
    if (grounding_error) {
      FrameOutcome o;
      o.entry.index = f.index;
      o.entry.status = FrameStatus::Failed;
      o.entry.error = *grounding_error;
      o.entry.flags = {"failed"};
      o.entry.input_path = o.entry.output_path = "frames/" + frame_name(f.index);
      o.entry.mask_path = "masks/" + frame_name(f.index);
      o.entry.params = {ctx.config.alpha, ctx.config.steps, ctx.config.control_scale, ctx.config.seed};
      o.entry.condition_hash = condition_hash(ctx.prompt, ctx.config, f.index);
      o.edited = f.image;
      o.layout = Mask(f.height(), f.width(), 1);
      outcomes[k] = std::move(o);
      return;
    }
    outcomes[k] = edit_one(f, ctx, fixed_box);
  });

  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.entry.index < b.entry.index; });
  CloneResult r;
  r.manifest.header.source_id = traj.source_id;
  r.manifest.header.prompt_hash = prompt_hash(ctx.prompt);
  r.manifest.header.backend = ctx.backend.name;
  r.manifest.header.provider_suite = ctx.suite.name;
  for (auto& o : outcomes) {
    r.manifest.entries.push_back(std::move(o.entry));
    r.edits.push_back(std::move(o.edited));
    r.layouts.push_back(std::move(o.layout));
  }
  return r;
}

// Load → per-frame conditions and edits → outputs and manifest under config.out.
inline CloneResult run_clone(const fs::path& traj_root, const fs::path& prompt_path, const RunConfig& config,
                             std::ostream* log = nullptr) {
  require(!config.out.empty(), ErrorKind::InvalidArgument, "no output directory given");
  const TrajectoryRecord traj = load_trajectory(traj_root);
  const VisualPromptSpec prompt = load_prompt_spec(prompt_path);
  const CloneContext ctx = make_context(prompt, config);
  if (log && !ctx.backend.trained)
    *log << "warning: " << ctx.backend.name << " is running on untrained seeded weights\n";
  CloneResult r = clone_frames(traj, ctx);
  r.manifest.header.input_root = fs::absolute(traj_root).lexically_normal().string();
  save_edited_trajectory(traj, r.edits, r.manifest, config.out, r.layouts);
  return r;
}

// First, middle and last frames: rows of (original | edited | layout mask).
inline Tensor run_preview(const fs::path& traj_root, const fs::path& prompt_path, const RunConfig& config,
                          CloneResult* result = nullptr) {
  const TrajectoryRecord traj = load_trajectory(traj_root);
  const CloneContext ctx = make_context(load_prompt_spec(prompt_path), config);
  std::vector<std::size_t> picks{0, traj.size() / 2, traj.size() - 1};
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  CloneResult r = clone_frames(traj, ctx, picks);
  std::vector<std::vector<Tensor>> rows;
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const FrameRecord& f = traj.frames[picks[k]];
    Tensor mask_img(3, f.height(), f.width());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) mask_img(c, y, x) = r.layouts[k](y, x) ? 1.0 : 0.0;
    rows.push_back({f.image, r.edits[k], mask_img});
  }
  if (result) *result = std::move(r);
  return image_grid(rows);
}

struct ReportResult {
  FidelityReport report;
  Tensor grid;
};

// Reads an edit output directory (and its source trajectory) and scores it.
inline ReportResult run_report(const fs::path& edited_root, const std::optional<fs::path>& original_root = {},
                               const ReportOptions& options = {}) {
  const EditManifest manifest = load_manifest(edited_root / "manifest.json");
  const fs::path source = original_root ? *original_root : fs::path(manifest.header.input_root);
  const TrajectoryRecord original = load_trajectory(source);
  const TrajectoryRecord edited = load_trajectory(edited_root);
  require(manifest.entries.size() == original.size(), ErrorKind::InconsistentGeometry,
          "manifest covers " + std::to_string(manifest.entries.size()) + " of " + std::to_string(original.size()) +
              " frames");
  std::vector<Mask> layouts;
  std::vector<std::optional<NormalizedBox>> boxes;
  for (const auto& e : manifest.entries) {
    const fs::path mask = edited_root / e.mask_path;
    layouts.push_back(fs::exists(mask) ? png::read_mask(mask) : Mask(original.height(), original.width(), 1));
    boxes.push_back(e.placement_box);
  }
  ReportResult r;
  r.report = fidelity_report(original, edited, layouts, boxes, options);
  std::vector<std::vector<Tensor>> rows;
  for (std::size_t i = 0; i < original.size(); ++i) rows.push_back({original.frames[i].image, edited.frames[i].image});
  r.grid = image_grid(rows);
  write_json(edited_root / "report.json", to_json(r.report));
  png::write_rgb(edited_root / "preview.png", r.grid);
  return r;
}

}  // namespace rsc
