#pragma once

#include <cmath>
#include <map>
#include <string>

#include "rsc/conditions.hpp"
#include "rsc/error.hpp"
#include "rsc/tensor.hpp"

namespace rsc {

// Projections of the masked cross-attention that writes c_visual into an activation.
// Queries come from the C-channel activation, keys/values from d-wide visual tokens.
template <typename Scalar>
struct CrossAttentionWeights {
  RowMatrix<Scalar> wq;  // a × C
  RowMatrix<Scalar> wk;  // a × d
  RowMatrix<Scalar> wv;  // a × d
  RowMatrix<Scalar> wo;  // C × a

  int channels() const { return static_cast<int>(wq.cols()); }
  int token_width() const { return static_cast<int>(wk.cols()); }
  int attn_width() const { return static_cast<int>(wq.rows()); }

  void validate() const {
    require(wk.rows() == wq.rows() && wv.rows() == wq.rows() && wo.cols() == wq.rows() && wv.cols() == wk.cols() &&
                wo.rows() == wq.cols(),
            ErrorKind::ShapeMismatch, "cross-attention weight shapes disagree");
  }
};

// Maps a layout mask onto an h×w activation grid. A cell is editable if any layout pixel
// in its footprint is editable ("editable wins"); identical grids map one to one.
inline Mask downsample_layout(const Mask& layout, int h, int w) {
  require(h > 0 && w > 0 && layout.height() > 0 && layout.width() > 0, ErrorKind::InvalidArgument,
          "empty grid");
  if (h == layout.height() && w == layout.width()) return layout;
  const int H = layout.height(), W = layout.width();
  Mask out(h, w, 1);
  for (int i = 0; i < h; ++i) {
    const int y0 = i * H / h, y1 = std::max(y0 + 1, ((i + 1) * H + h - 1) / h);
    for (int j = 0; j < w; ++j) {
      const int x0 = j * W / w, x1 = std::max(x0 + 1, ((j + 1) * W + w - 1) / w);
      bool editable = false;
      for (int y = y0; y < std::min(y1, H) && !editable; ++y)
        for (int x = x0; x < std::min(x1, W) && !editable; ++x) editable = layout(y, x) == 0;
      out.set(i, j, !editable);
    }
  }
  return out;
}

// Cross-attention from activation cells to visual tokens with additive mask M′: 0 at
// editable cells, −∞ at preserved ones. A fully masked row has no defined softmax and
// contributes an exactly-zero residual. Returns the residual to add to `activations`.
template <typename Scalar>
BasicTensor<Scalar> masked_visual_attention(const BasicTensor<Scalar>& activations, const RowMatrix<Scalar>& c_visual,
                                            const Mask& c_layout, const CrossAttentionWeights<Scalar>& w) {
  w.validate();
  require(activations.channels() == w.channels(), ErrorKind::ShapeMismatch,
          "activation width " + std::to_string(activations.channels()) + " vs attention " +
              std::to_string(w.channels()));
  BasicTensor<Scalar> residual(activations.shape());
  if (c_visual.rows() == 0) return residual;
  require(c_visual.cols() == w.token_width(), ErrorKind::ShapeMismatch,
          "visual token width " + std::to_string(c_visual.cols()) + " vs " + std::to_string(w.token_width()));

  const Mask grid = downsample_layout(c_layout, activations.height(), activations.width());
  const int cells = activations.plane_size();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(w.attn_width()));
  const RowMatrix<Scalar> keys = c_visual * w.wk.transpose();    // n × a
  const RowMatrix<Scalar> values = c_visual * w.wv.transpose();  // n × a
  const RowMatrix<Scalar> queries = w.wq * activations.matrix(); // a × P

  auto out = residual.matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> logits(keys.rows());
  for (int p = 0; p < cells; ++p) {
    if (grid[static_cast<std::size_t>(p)] != 0) continue;
    logits.noalias() = keys * queries.col(p);
    logits *= scale;
    const Scalar mx = logits.maxCoeff();
    logits = (logits.array() - mx).exp();
    logits /= logits.sum();
    out.col(p).noalias() = w.wo * (values.transpose() * logits);
  }
  return residual;
}

template <typename Scalar>
void add_residual(BasicTensor<Scalar>& activation, const Tensor& residual, const std::string& site) {
  require_same_shape(activation.shape(), residual.shape(), "residual at site " + site);
  for (std::size_t i = 0; i < activation.size(); ++i) activation[i] += static_cast<Scalar>(residual[i]);
}

// z_ctrl = z̃ + c_pose at every configured site. Every residual must name a known site.
template <typename Scalar>
void inject_pose(std::map<std::string, BasicTensor<Scalar>>& site_activations,
                 const std::map<std::string, Tensor>& c_pose) {
  for (const auto& [site, residual] : c_pose) {
    auto it = site_activations.find(site);
    require(it != site_activations.end(), ErrorKind::ShapeMismatch, "no injection site named " + site);
    add_residual(it->second, residual, site);
  }
}

}  // namespace rsc
