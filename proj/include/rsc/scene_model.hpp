#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsc/error.hpp"
#include "rsc/geometry.hpp"
#include "rsc/png_io.hpp"
#include "rsc/tensor.hpp"

namespace rsc {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kToolVersion = "rsc 0.3.0";

struct FrameRecord {
  int index = 0;
  Tensor image;                 // 3×H×W, values in [0,1]
  std::vector<double> action;   // opaque, copied through
  std::string action_line;      // verbatim actions.jsonl record, empty if built in memory
  json metadata = json::object();

  int height() const { return image.height(); }
  int width() const { return image.width(); }
};

struct TrajectoryRecord {
  std::vector<FrameRecord> frames;
  std::string task_text;
  std::string source_id;
  json meta = json::object();  // meta.json contents minus per-frame annotations

  std::size_t size() const { return frames.size(); }
  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
};

struct VisualPromptSpec {
  Tensor prompt_image;
  std::string prompt_image_path;
  std::string text;
  std::string source_object_text;
  std::optional<NormalizedBox> placement;  // nullopt means "auto"

  bool auto_placement() const { return !placement.has_value(); }
};

inline std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d.png", index);
  return buf;
}

// Validates trajectory invariants: N ≥ 1, contiguous indices, fixed geometry, pixel range.
inline void validate(const TrajectoryRecord& traj) {
  require(!traj.frames.empty(), ErrorKind::MalformedDataset, "trajectory has no frames");
  const int h = traj.height(), w = traj.width();
  for (std::size_t i = 0; i < traj.frames.size(); ++i) {
    const auto& f = traj.frames[i];
    require(f.index == static_cast<int>(i), ErrorKind::MalformedDataset,
            "frame indices not contiguous at position " + std::to_string(i));
    require(f.image.channels() == 3, ErrorKind::InconsistentGeometry, "frame must have 3 channels");
    require(f.height() == h && f.width() == w, ErrorKind::InconsistentGeometry,
            "frame " + std::to_string(i) + " size differs from frame 0");
    for (double v : f.image.values())
      require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidArgument,
              "frame " + std::to_string(i) + " has pixel outside [0,1]");
  }
}

namespace detail {

inline std::optional<int> parse_frame_index(const fs::path& p) {
  if (p.extension() != ".png") return std::nullopt;
  const std::string stem = p.stem().string();
  if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), v);
  if (ec != std::errc() || ptr != stem.data() + stem.size()) return std::nullopt;
  return v;
}

struct Issues {
  std::vector<std::pair<ErrorKind, std::string>> items;
  void add(ErrorKind k, std::string msg) { items.emplace_back(k, std::move(msg)); }
  void throw_if_any() const {
    if (items.empty()) return;
    std::string all;
    for (const auto& [k, m] : items) {
      if (!all.empty()) all += "; ";
      all += std::string(to_string(k)) + ": " + m;
    }
    throw Error(items.front().first, all);
  }
};

}  // namespace detail

// Reads `<root>/frames/NNN.png`, `<root>/actions.jsonl` and optional `<root>/meta.json`.
// Every problem found is reported; the error kind is that of the first problem.
inline TrajectoryRecord load_trajectory(const fs::path& root) {
  detail::Issues issues;
  const fs::path frames_dir = root / "frames";
  if (!fs::is_directory(frames_dir)) throw Error(ErrorKind::MalformedDataset, "missing " + frames_dir.string());

  std::map<int, fs::path> files;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    if (auto idx = detail::parse_frame_index(entry.path())) files[*idx] = entry.path();
  }
  if (files.empty()) throw Error(ErrorKind::MalformedDataset, "no frames in " + frames_dir.string());
  int expect = 0;
  for (const auto& [idx, path] : files) {
    if (idx != expect) {
      issues.add(ErrorKind::MalformedDataset, "gap in frame indices at " + std::to_string(expect));
      break;
    }
    ++expect;
  }

  TrajectoryRecord traj;
  traj.source_id = root.filename().string();
  const fs::path meta_path = root / "meta.json";
  json annotations = json::object();
  if (fs::exists(meta_path)) {
    try {
      std::ifstream in(meta_path);
      json meta = json::parse(in);
      traj.task_text = meta.value("task_text", "");
      traj.source_id = meta.value("source_id", traj.source_id);
      if (meta.contains("annotations")) annotations = meta["annotations"];
      meta.erase("annotations");
      traj.meta = std::move(meta);
    } catch (const json::exception& e) {
      issues.add(ErrorKind::MalformedDataset, "meta.json: " + std::string(e.what()));
    }
  }

  for (const auto& [idx, path] : files) {
    FrameRecord f;
    f.index = idx;
    try {
      f.image = png::read_rgb(path);
    } catch (const Error& e) {
      issues.add(e.kind(), e.what());
      continue;
    }
    const std::string key = std::to_string(idx);
    if (annotations.contains(key)) f.metadata = annotations[key];
    traj.frames.push_back(std::move(f));
  }
  if (!traj.frames.empty()) {
    const int h = traj.frames.front().height(), w = traj.frames.front().width();
    for (const auto& f : traj.frames)
      if (f.height() != h || f.width() != w)
        issues.add(ErrorKind::InconsistentGeometry, "frame " + std::to_string(f.index) + " is " +
                                                        std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                                                        ", expected " + std::to_string(w) + "x" + std::to_string(h));
  }

  const fs::path actions_path = root / "actions.jsonl";
  std::vector<std::string> lines;
  if (!fs::exists(actions_path)) {
    issues.add(ErrorKind::MalformedDataset, "missing actions.jsonl");
  } else {
    std::ifstream in(actions_path, std::ios::binary);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(line);
    if (lines.size() != files.size())
      issues.add(ErrorKind::MalformedDataset, "actions.jsonl has " + std::to_string(lines.size()) +
                                                  " records for " + std::to_string(files.size()) + " frames");
  }
  issues.throw_if_any();

  for (std::size_t i = 0; i < traj.frames.size(); ++i) {
    auto& f = traj.frames[i];
    try {
      json rec = json::parse(lines[i]);
      const json& action = rec.is_array() ? rec : rec.at("action");
      if (rec.is_object() && rec.contains("index"))
        require(rec["index"].get<int>() == f.index, ErrorKind::MalformedDataset,
                "actions.jsonl record " + std::to_string(i) + " has index " + rec["index"].dump());
      f.action = action.get<std::vector<double>>();
      f.action_line = lines[i];
    } catch (const json::exception& e) {
      issues.add(ErrorKind::MalformedDataset, "actions.jsonl line " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      issues.add(e.kind(), e.what());
    }
  }
  issues.throw_if_any();
  validate(traj);
  return traj;
}

inline std::string action_record(const FrameRecord& f) {
  if (!f.action_line.empty()) return f.action_line;
  return json{{"index", f.index}, {"action", f.action}}.dump();
}

inline json meta_document(const TrajectoryRecord& traj) {
  json meta = traj.meta.is_object() ? traj.meta : json::object();
  meta["task_text"] = traj.task_text;
  meta["source_id"] = traj.source_id;
  json ann = json::object();
  for (const auto& f : traj.frames)
    if (!f.metadata.empty()) ann[std::to_string(f.index)] = f.metadata;
  if (!ann.empty()) meta["annotations"] = ann;
  return meta;
}

inline void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedDataset, path.string() + ": " + e.what());
  }
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());
}

inline void save_trajectory(const TrajectoryRecord& traj, const fs::path& root) {
  validate(traj);
  ensure_directory(root / "frames");
  for (const auto& f : traj.frames) png::write_rgb(root / "frames" / frame_name(f.index), f.image);
  std::ofstream actions(root / "actions.jsonl", std::ios::binary);
  require(static_cast<bool>(actions), ErrorKind::Io, "cannot write actions.jsonl");
  for (const auto& f : traj.frames) actions << action_record(f) << '\n';
  write_json(root / "meta.json", meta_document(traj));
}

// Row-major run lengths, alternating clear/set and starting with a clear run.
inline json mask_to_rle(const Mask& m) {
  json runs = json::array();
  std::uint8_t current = 0;
  std::size_t run = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != current) {
      runs.push_back(run);
      run = 0;
      current = m[i];
    }
    ++run;
  }
  runs.push_back(run);
  return json{{"height", m.height()}, {"width", m.width()}, {"runs", runs}};
}

inline Mask mask_from_rle(const json& j) {
  Mask m(j.at("height").get<int>(), j.at("width").get<int>());
  std::size_t pos = 0;
  bool value = false;
  for (const auto& r : j.at("runs")) {
    const auto n = r.get<std::size_t>();
    require(pos + n <= m.size(), ErrorKind::MalformedDataset, "mask runs exceed mask size");
    for (std::size_t k = 0; k < n; ++k) m.set(pos + k, value);
    pos += n;
    value = !value;
  }
  require(pos == m.size(), ErrorKind::MalformedDataset, "mask runs do not cover the mask");
  return m;
}

// ---------------------------------------------------------------------------
// Edit manifest

struct EditParams {
  double alpha = 0.0;
  int steps = 50;
  double control_scale = 1.0;
  std::uint64_t seed = 0;
  bool operator==(const EditParams&) const = default;
};

enum class FrameStatus { Edited, Failed };

struct ManifestEntry {
  int index = 0;
  FrameStatus status = FrameStatus::Edited;
  std::string error;
  std::string input_path;
  std::string output_path;
  std::string mask_path;
  std::string condition_hash;
  EditParams params;
  std::optional<NormalizedBox> placement_box;
  std::vector<std::string> flags;
  std::map<std::string, double> metrics;
  json diagnostics;  // null unless requested
};

struct ManifestHeader {
  std::string source_id;
  std::string prompt_hash;
  std::string tool_version = kToolVersion;
  std::string input_root;
  std::string backend;
  std::string provider_suite;
};

struct EditManifest {
  ManifestHeader header;
  std::vector<ManifestEntry> entries;

  std::size_t failed_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                  [](const auto& e) { return e.status == FrameStatus::Failed; }));
  }
};

inline json to_json(const NormalizedBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

inline NormalizedBox box_from_json(const json& j) {
  require(j.is_array() && j.size() == 4, ErrorKind::InvalidArgument, "box must be [x0,y0,x1,y1]");
  NormalizedBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  validate_box(b);
  return b;
}

inline json to_json(const EditManifest& m) {
  json frames = json::array();
  for (const auto& e : m.entries) {
    json je{{"index", e.index},
            {"status", e.status == FrameStatus::Edited ? "edited" : "failed"},
            {"input_path", e.input_path},
            {"output_path", e.output_path},
            {"mask_path", e.mask_path},
            {"condition_hash", e.condition_hash},
            {"params",
             {{"alpha", e.params.alpha},
              {"steps", e.params.steps},
              {"control_scale", e.params.control_scale},
              {"seed", e.params.seed}}},
            {"flags", e.flags},
            {"metrics", e.metrics}};
    if (!e.error.empty()) je["error"] = e.error;
    if (e.placement_box) je["placement_box"] = to_json(*e.placement_box);
    if (!e.diagnostics.is_null()) je["diagnostics"] = e.diagnostics;
    frames.push_back(std::move(je));
  }
  return json{{"header",
               {{"source_id", m.header.source_id},
                {"prompt_hash", m.header.prompt_hash},
                {"tool_version", m.header.tool_version},
                {"input_root", m.header.input_root},
                {"backend", m.header.backend},
                {"provider_suite", m.header.provider_suite}}},
              {"frames", frames}};
}

inline EditManifest manifest_from_json(const json& j) {
  EditManifest m;
  const json& h = j.at("header");
  m.header.source_id = h.value("source_id", "");
  m.header.prompt_hash = h.value("prompt_hash", "");
  m.header.tool_version = h.value("tool_version", "");
  m.header.input_root = h.value("input_root", "");
  m.header.backend = h.value("backend", "");
  m.header.provider_suite = h.value("provider_suite", "");
  for (const auto& jf : j.at("frames")) {
    ManifestEntry e;
    e.index = jf.at("index").get<int>();
    e.status = jf.at("status").get<std::string>() == "edited" ? FrameStatus::Edited : FrameStatus::Failed;
    e.error = jf.value("error", "");
    e.input_path = jf.value("input_path", "");
    e.output_path = jf.value("output_path", "");
    e.mask_path = jf.value("mask_path", "");
    e.condition_hash = jf.value("condition_hash", "");
    const json& p = jf.at("params");
    e.params = {p.at("alpha").get<double>(), p.at("steps").get<int>(), p.at("control_scale").get<double>(),
                p.at("seed").get<std::uint64_t>()};
    if (jf.contains("placement_box")) e.placement_box = box_from_json(jf["placement_box"]);
    e.flags = jf.value("flags", std::vector<std::string>{});
    e.metrics = jf.value("metrics", std::map<std::string, double>{});
    if (jf.contains("diagnostics")) e.diagnostics = jf["diagnostics"];
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline EditManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedDataset, path.string() + ": " + e.what());
  }
}

// Writes the edited frames, verbatim action records, meta.json, optional layout masks
// (`masks/NNN.png`, 255 = preserve) and manifest.json.
inline void save_edited_trajectory(const TrajectoryRecord& traj, const std::vector<Tensor>& edits,
                                   const EditManifest& manifest, const fs::path& out,
                                   const std::vector<Mask>& masks = {}) {
  require(edits.size() == traj.size(), ErrorKind::InvalidArgument,
          "length mismatch: " + std::to_string(edits.size()) + " edits for " + std::to_string(traj.size()) + " frames");
  require(manifest.entries.size() == traj.size(), ErrorKind::InvalidArgument,
          "manifest covers " + std::to_string(manifest.entries.size()) + " of " + std::to_string(traj.size()) +
              " frames");
  require(masks.empty() || masks.size() == traj.size(), ErrorKind::InvalidArgument, "mask count mismatch");
  for (std::size_t i = 0; i < edits.size(); ++i) {
    require(edits[i].shape() == traj.frames[i].image.shape(), ErrorKind::InconsistentGeometry,
            "edit " + std::to_string(i) + " has shape " + edits[i].shape().str());
    require(manifest.entries[i].index == traj.frames[i].index, ErrorKind::InvalidArgument,
            "manifest entry " + std::to_string(i) + " has index " + std::to_string(manifest.entries[i].index));
  }

  ensure_directory(out / "frames");
  if (!masks.empty()) ensure_directory(out / "masks");
  for (std::size_t i = 0; i < edits.size(); ++i) {
    png::write_rgb(out / "frames" / frame_name(traj.frames[i].index), edits[i]);
    if (!masks.empty()) png::write_mask(out / "masks" / frame_name(traj.frames[i].index), masks[i]);
  }
  {
    std::ofstream actions(out / "actions.jsonl", std::ios::binary);
    require(static_cast<bool>(actions), ErrorKind::Io, "cannot write " + (out / "actions.jsonl").string());
    for (const auto& f : traj.frames) actions << action_record(f) << '\n';
  }
  write_json(out / "meta.json", meta_document(traj));
  write_json(out / "manifest.json", to_json(manifest));
}

// ---------------------------------------------------------------------------
// Prompt spec file: {"prompt_image": path, "text": ..., "source_object_text": ..., "placement": "auto" | [x0,y0,x1,y1]}

inline VisualPromptSpec parse_prompt_spec(const json& j, const fs::path& base_dir) {
  VisualPromptSpec spec;
  try {
    spec.prompt_image_path = j.at("prompt_image").get<std::string>();
    spec.text = j.value("text", "");
    spec.source_object_text = j.value("source_object_text", "");
    const json& placement = j.contains("placement") ? j["placement"] : json("auto");
    if (placement.is_string()) {
      require(placement.get<std::string>() == "auto", ErrorKind::InvalidArgument,
              "placement must be \"auto\" or a box");
    } else {
      spec.placement = box_from_json(placement);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("prompt spec: ") + e.what());
  }
  fs::path img = spec.prompt_image_path;
  if (img.is_relative()) img = base_dir / img;
  spec.prompt_image = png::read_rgb(img);
  if (spec.auto_placement())
    require(!spec.source_object_text.empty(), ErrorKind::InvalidArgument,
            "auto placement needs source_object_text");
  return spec;
}

inline VisualPromptSpec load_prompt_spec(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
  }
  return parse_prompt_spec(j, path.parent_path());
}

inline json prompt_spec_json(const VisualPromptSpec& spec) {
  return json{{"prompt_image", spec.prompt_image_path},
              {"text", spec.text},
              {"source_object_text", spec.source_object_text},
              {"placement", spec.placement ? to_json(*spec.placement) : json("auto")}};
}

}  // namespace rsc
