#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rsc/error.hpp"
#include "rsc/geometry.hpp"
#include "rsc/hash.hpp"
#include "rsc/tensor.hpp"

namespace rsc {

// n × d token matrix, one token per row.
using Tokens = RowMatrix<double>;

// A denoiser activation that accepts an additive conditioning residual.
struct InjectionSite {
  std::string name;
  Shape3 shape;
  bool operator==(const InjectionSite&) const = default;
};

// The (c_visual, c_layout, c_pose) triple that drives one frame edit.
struct ConditionBundle {
  Tokens c_visual;                      // n_q × d
  Mask c_layout;                        // 1 = preserve, 0 = editable
  std::map<std::string, Tensor> c_pose; // residual per injection site, already scaled
  double control_scale = 1.0;

  std::optional<NormalizedBox> placement_box;
  std::vector<std::string> flags;

  bool has_visual() const { return c_visual.rows() > 0; }

  // Throws if the bundle violates its invariants.
  void validate(bool edit_requested = true) const {
    require(control_scale >= 0.0, ErrorKind::InvalidArgument, "control_scale must be >= 0");
    require(c_layout.size() > 0, ErrorKind::InvalidArgument, "empty layout mask");
    for (auto v : c_layout.values()) require(v == 0 || v == 1, ErrorKind::InvalidArgument, "layout not binary");
    if (edit_requested)
      require(!c_layout.all(), ErrorKind::InvalidArgument, "no editable region");
    for (const auto& [site, r] : c_pose) {
      for (double v : r.values()) require(std::isfinite(v), ErrorKind::InvalidArgument, "non-finite residual");
      if (control_scale == 0.0)
        for (double v : r.values())
          require(v == 0.0, ErrorKind::InvalidArgument, "nonzero residual at control_scale 0 (" + site + ")");
    }
  }

  std::string digest() const {
    Hasher h;
    h.i64(c_visual.rows()).i64(c_visual.cols());
    h.bytes(c_visual.data(), static_cast<std::size_t>(c_visual.size()) * sizeof(double));
    h.i64(c_layout.height()).i64(c_layout.width()).span(c_layout.values());
    for (const auto& [site, r] : c_pose) h.str(site).span(r.values());
    h.f64(control_scale);
    return h.hex();
  }
};

// Records which residuals a denoiser evaluation actually consumed.
struct InjectionTrace {
  struct Record {
    std::string site;
    std::string kind;  // "pose" or "visual"
    Shape3 shape;
    double max_abs = 0.0;
  };
  std::vector<Record> records;
};

}  // namespace rsc
