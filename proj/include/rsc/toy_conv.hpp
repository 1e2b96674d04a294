#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rsc/diffusion.hpp"
#include "rsc/injection.hpp"

namespace rsc::toy {

using MatF = RowMatrix<float>;
using VecF = Eigen::VectorXf;
using TensorF = BasicTensor<float>;

inline constexpr int kTimeFeatures = 8;
inline constexpr int kSkipWindow = 9;  // keeps the receptive radius at 4
inline constexpr int kSkipTaps = 3 * kSkipWindow * kSkipWindow;
inline constexpr const char* kSiteMid = "mid";
inline constexpr const char* kSiteDec = "dec";
inline constexpr const char* kSiteInner = "inner";

struct ToyConvConfig {
  int height = 32;
  int width = 32;
  int channels = 32;     // hidden width C
  int attn_width = 16;   // cross-attention width
  int token_width = 32;  // d of c_visual
  int queries = 4;       // n_q the resampler emits
  std::array<float, 3> data_mean{0.5f, 0.5f, 0.5f};
  float data_var = 0.08f;
  std::uint64_t adapter_seed = 17;
  std::uint64_t resampler_seed = 23;
  bool trained = false;

  bool operator==(const ToyConvConfig&) const = default;
};

// [1, √ᾱ, √(1−ᾱ), λ/8, sin(λ/4), cos(λ/4), sin(λ/8), cos(λ/8)] with λ = clamp(log-SNR, ±20).
inline std::array<float, kTimeFeatures> time_features(double alpha_bar) {
  const double a = std::clamp(alpha_bar, 0.0, 1.0);
  double lambda = 20.0;
  if (a < 1.0) lambda = a <= 0.0 ? -20.0 : std::clamp(std::log(a / (1.0 - a)), -20.0, 20.0);
  return {1.0f,
          static_cast<float>(std::sqrt(a)),
          static_cast<float>(std::sqrt(1.0 - a)),
          static_cast<float>(lambda / 8.0),
          static_cast<float>(std::sin(lambda / 4.0)),
          static_cast<float>(std::cos(lambda / 4.0)),
          static_cast<float>(std::sin(lambda / 8.0)),
          static_cast<float>(std::cos(lambda / 8.0))};
}

// k×k (k odd), stride 1, zero-padded. Row index = ci*k*k + ky*k + kx, column = y*W + x.
inline void im2col(const float* in, int channels, int h, int w, int k, MatF& col) {
  const int r = k / 2;
  col.resize(static_cast<Eigen::Index>(channels) * k * k, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float* row = col.row((c * k + ky) * k + kx).data();
        const float* plane = in + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < h; ++y) {
          const int yy = y + ky - r;
          for (int x = 0; x < w; ++x) {
            const int xx = x + kx - r;
            row[y * w + x] = (yy >= 0 && yy < h && xx >= 0 && xx < w) ? plane[yy * w + xx] : 0.0f;
          }
        }
      }
}

inline void im2col3(const float* in, int channels, int h, int w, MatF& col) { im2col(in, channels, h, w, 3, col); }

inline void col2im3(const MatF& col, int channels, int h, int w, float* out) {
  std::fill(out, out + static_cast<std::size_t>(channels) * h * w, 0.0f);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = col.row(c * 9 + ky * 3 + kx).data();
        float* plane = out + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < h; ++y) {
          const int yy = y + ky - 1;
          if (yy < 0 || yy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int xx = x + kx - 1;
            if (xx >= 0 && xx < w) plane[yy * w + xx] += row[y * w + x];
          }
        }
      }
}

inline float silu(float v) { return v / (1.0f + std::exp(-v)); }
inline float silu_grad(float v) {
  const float s = 1.0f / (1.0f + std::exp(-v));
  return s * (1.0f + v * (1.0f - s));
}

struct ConvLayer {
  MatF weight;  // Cout × Cin·9
  VecF bias;    // Cout
  MatF time;    // Cout × kTimeFeatures
  MatF gain;    // Cout × kTimeFeatures; output scaled by 1 + gain·φ (convs only)
};

struct ToyConvParams {
  std::array<ConvLayer, 4> conv;
  ConvLayer skip;  // 9×9 linear path from the normalized input; weight = [W_1 … W_8], mixed by φ
  MatF position;   // C × H·W learned bias added to conv0's output
  CrossAttentionWeights<float> attn;

  // Visits every parameter array in serialization order.
  template <typename F>
  void for_each(F&& f) {
    for (auto& l : conv) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
      f(l.time.data(), static_cast<std::size_t>(l.time.size()));
    }
    f(attn.wq.data(), static_cast<std::size_t>(attn.wq.size()));
    f(attn.wk.data(), static_cast<std::size_t>(attn.wk.size()));
    f(attn.wv.data(), static_cast<std::size_t>(attn.wv.size()));
    f(attn.wo.data(), static_cast<std::size_t>(attn.wo.size()));
    f(skip.weight.data(), static_cast<std::size_t>(skip.weight.size()));
    f(skip.bias.data(), static_cast<std::size_t>(skip.bias.size()));
    f(skip.time.data(), static_cast<std::size_t>(skip.time.size()));
    for (auto& l : conv) f(l.gain.data(), static_cast<std::size_t>(l.gain.size()));
    f(position.data(), static_cast<std::size_t>(position.size()));
  }

  std::size_t count() {
    std::size_t n = 0;
    for_each([&](float*, std::size_t k) { n += k; });
    return n;
  }

  static ToyConvParams zeros_like(const ToyConvConfig& cfg) {
    ToyConvParams p;
    const int C = cfg.channels;
    const std::array<std::pair<int, int>, 4> io{{{3, C}, {C, C}, {C, C}, {C, 3}}};
    for (std::size_t i = 0; i < 4; ++i) {
      p.conv[i].weight = MatF::Zero(io[i].second, io[i].first * 9);
      p.conv[i].bias = VecF::Zero(io[i].second);
      p.conv[i].time = MatF::Zero(io[i].second, kTimeFeatures);
      p.conv[i].gain = MatF::Zero(io[i].second, kTimeFeatures);
    }
    p.skip.weight = MatF::Zero(3, kSkipTaps * kTimeFeatures);
    p.skip.bias = VecF::Zero(3);
    p.skip.time = MatF::Zero(3, kTimeFeatures);
    p.position = MatF::Zero(C, cfg.height * cfg.width);
    p.attn.wq = MatF::Zero(cfg.attn_width, C);
    p.attn.wk = MatF::Zero(cfg.attn_width, cfg.token_width);
    p.attn.wv = MatF::Zero(cfg.attn_width, cfg.token_width);
    p.attn.wo = MatF::Zero(C, cfg.attn_width);
    return p;
  }

  static ToyConvParams seeded(const ToyConvConfig& cfg, std::uint64_t seed) {
    ToyConvParams p = zeros_like(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto fill = [&](MatF& m, float stddev) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
    };
    for (std::size_t i = 0; i < 3; ++i) fill(p.conv[i].weight, std::sqrt(2.0f / p.conv[i].weight.cols()));
    fill(p.conv[3].weight, 0.01f);
    fill(p.attn.wq, 1.0f / std::sqrt(static_cast<float>(cfg.channels)));
    fill(p.attn.wk, 1.0f / std::sqrt(static_cast<float>(cfg.token_width)));
    fill(p.attn.wv, 1.0f / std::sqrt(static_cast<float>(cfg.token_width)));
    fill(p.attn.wo, 0.01f);
    return p;
  }
};

// Everything one evaluation needs besides the parameters.
struct NetInput {
  const TensorF* latent = nullptr;        // 3×H×W
  double alpha_bar = 1.0;
  const TensorF* pose_mid = nullptr;      // C×H×W or null
  const TensorF* pose_dec = nullptr;
  const RowMatrix<float>* visual = nullptr;  // n × d or null
  const Mask* layout = nullptr;           // required when visual is set
};

struct NetCache {
  std::array<float, kTimeFeatures> phi{};
  float c_in = 1.0f;
  float c_out = 1.0f;
  std::array<MatF, 4> cols;      // im2col inputs of each conv
  MatF skip_cols;                // 9×9 im2col of the normalized input
  std::array<MatF, 4> raw;       // weight·cols before the time gain
  std::array<VecF, 4> gain;      // 1 + gain·φ per conv
  std::array<MatF, 3> pre;       // pre-activations of hidden convs, C × P
  MatF h2;                       // inner activation before the visual residual
  std::vector<int> editable;     // inner-grid cells that attend
  MatF q, att, attn_out;         // a×Pe, n×Pe, a×Pe
  MatF keys, values;             // n × a
  MatF visual;                   // n × d tokens attended to
};

// The ε-predictor: four 3×3 convolutions at full resolution (receptive radius 4) with
// pose residuals after conv1 ("mid") and conv3 ("dec") and masked cross-attention to the
// visual tokens after conv2 ("inner"), plus a linear 9×9 skip from input to output and a learned
// per-pixel bias after conv0. It predicts a correction to the per-pixel
// Gaussian-optimal ε̂ implied by the training-set mean and variance.
class ToyConvNet {
 public:
  ToyConvNet() = default;
  ToyConvNet(ToyConvConfig cfg, ToyConvParams params) : cfg_(cfg), params_(std::move(params)) {}

  const ToyConvConfig& config() const { return cfg_; }
  ToyConvConfig& config() { return cfg_; }
  const ToyConvParams& params() const { return params_; }
  ToyConvParams& params() { return params_; }

  float input_scale(double alpha_bar) const {
    return static_cast<float>(1.0 / std::sqrt(alpha_bar * cfg_.data_var + (1.0 - alpha_bar)));
  }

  // Gain on the learned correction: √ᾱ·σ_d·c_in, which keeps its effect on x̂_0 bounded as ᾱ → 0.
  float output_scale(double alpha_bar) const {
    return static_cast<float>(std::sqrt(alpha_bar * cfg_.data_var)) * input_scale(alpha_bar);
  }

  // Returns ε̂ (3×H×W). Fills `cache` for backprop when given.
  TensorF forward(const NetInput& in, NetCache* cache = nullptr, InjectionTrace* trace = nullptr) const {
    const TensorF& z = *in.latent;
    require(z.channels() == 3, ErrorKind::ShapeMismatch, "toy denoiser expects 3 latent channels");
    const int h = z.height(), w = z.width(), P = h * w, C = cfg_.channels;
    NetCache local;
    NetCache& c = cache ? *cache : local;
    c.phi = time_features(in.alpha_bar);
    const Eigen::Map<const Eigen::Matrix<float, kTimeFeatures, 1>> phi(c.phi.data());
    const float sa = static_cast<float>(std::sqrt(in.alpha_bar));
    c.c_in = input_scale(in.alpha_bar);
    c.c_out = output_scale(in.alpha_bar);

    TensorF x(z.shape());
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < P; ++p)
        x.data()[ch * P + p] = c.c_in * (z.data()[ch * P + p] - sa * cfg_.data_mean[ch]);

    auto conv = [&](int layer, const float* input, int cin) {
      im2col3(input, cin, h, w, c.cols[layer]);
      const ConvLayer& l = params_.conv[layer];
      c.raw[layer].noalias() = l.weight * c.cols[layer];
      c.gain[layer] = VecF::Ones(l.weight.rows()) + l.gain * phi;
      MatF out = c.gain[layer].asDiagonal() * c.raw[layer];
      out.colwise() += l.bias + l.time * phi;
      return out;
    };
    auto activate = [&](const MatF& pre) {
      TensorF hidden(C, h, w);
      auto m = hidden.matrix();
      for (Eigen::Index i = 0; i < pre.size(); ++i) m.data()[i] = silu(pre.data()[i]);
      return hidden;
    };
    auto site = [&](TensorF& act, const TensorF* residual, const char* name) {
      if (!residual) return;
      require_same_shape(act.shape(), residual->shape(), std::string("pose residual at ") + name);
      act.matrix() += residual->matrix();
      if (trace) trace->records.push_back({name, "pose", residual->shape(), residual->matrix().cwiseAbs().maxCoeff()});
    };

    require(params_.position.cols() == P, ErrorKind::ShapeMismatch, "toy denoiser trained for another image size");
    c.pre[0] = conv(0, x.data(), 3);
    c.pre[0] += params_.position;
    TensorF h1 = activate(c.pre[0]);
    site(h1, in.pose_mid, kSiteMid);

    c.pre[1] = conv(1, h1.data(), C);
    TensorF h2 = activate(c.pre[1]);
    c.h2 = h2.matrix();
    c.editable.clear();
    if (in.visual && in.visual->rows() > 0) {
      require(in.layout != nullptr, ErrorKind::InvalidArgument, "visual condition without layout");
      if (cache) {
        attend_cached(h2, *in.visual, *in.layout, c);
      } else {
        const TensorF r = masked_visual_attention(h2, *in.visual, *in.layout, params_.attn);
        h2.matrix() += r.matrix();
        if (trace) trace->records.push_back({kSiteInner, "visual", r.shape(), r.matrix().cwiseAbs().maxCoeff()});
      }
    }

    c.pre[2] = conv(2, h2.data(), C);
    TensorF h3 = activate(c.pre[2]);
    site(h3, in.pose_dec, kSiteDec);

    MatF out = conv(3, h3.data(), C);
    {
      const ConvLayer& l = params_.skip;
      im2col(x.data(), 3, h, w, kSkipWindow, c.skip_cols);
      MatF mixed = MatF::Zero(3, kSkipTaps);
      for (int k = 0; k < kTimeFeatures; ++k) mixed += c.phi[k] * l.weight.middleCols(kSkipTaps * k, kSkipTaps);
      out.noalias() += mixed * c.skip_cols;
      out.colwise() += l.bias + l.time * phi;
    }
    TensorF eps(3, h, w);
    const float base_gain = static_cast<float>(std::sqrt(1.0 - in.alpha_bar)) * c.c_in;
    for (int i = 0; i < 3 * P; ++i) eps.data()[i] = base_gain * x.data()[i] + c.c_out * out.data()[i];
    return eps;
  }

  // Accumulates parameter gradients for dL/dε̂ = `grad_eps` into `grads`.
  void backward(const NetCache& c, const TensorF& grad_eps, int h, int w, ToyConvParams& grads) const {
    const Eigen::Map<const Eigen::Matrix<float, kTimeFeatures, 1>> phi(c.phi.data());
    MatF d_out = c.c_out * grad_eps.matrix();

    auto conv_back = [&](int layer, const MatF& d_pre, bool need_input) {
      ConvLayer& g = grads.conv[layer];
      const VecF row_sum = d_pre.rowwise().sum();
      g.bias += row_sum;
      g.time.noalias() += row_sum * phi.transpose();
      const VecF d_gain = d_pre.cwiseProduct(c.raw[layer]).rowwise().sum();
      g.gain.noalias() += d_gain * phi.transpose();
      const MatF d_raw = c.gain[layer].asDiagonal() * d_pre;
      g.weight.noalias() += d_raw * c.cols[layer].transpose();
      MatF d_in;
      if (need_input) {
        const MatF d_col = params_.conv[layer].weight.transpose() * d_raw;
        d_in.resize(d_col.rows() / 9, static_cast<Eigen::Index>(h) * w);
        col2im3(d_col, static_cast<int>(d_col.rows() / 9), h, w, d_in.data());
      }
      return d_in;
    };
    auto through_silu = [](MatF d, const MatF& pre) {
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] *= silu_grad(pre.data()[i]);
      return d;
    };

    {
      const VecF row_sum = d_out.rowwise().sum();
      const MatF g = d_out * c.skip_cols.transpose();
      for (int k = 0; k < kTimeFeatures; ++k) grads.skip.weight.middleCols(kSkipTaps * k, kSkipTaps) += c.phi[k] * g;
      grads.skip.bias += row_sum;
      grads.skip.time.noalias() += row_sum * phi.transpose();
    }
    MatF d_h3 = conv_back(3, d_out, true);
    MatF d_h2 = conv_back(2, through_silu(std::move(d_h3), c.pre[2]), true);
    if (!c.editable.empty()) attend_backward(c, d_h2, grads);
    MatF d_h1 = conv_back(1, through_silu(std::move(d_h2), c.pre[1]), true);
    const MatF d_pre0 = through_silu(std::move(d_h1), c.pre[0]);
    grads.position += d_pre0;
    conv_back(0, d_pre0, false);
  }

 private:
  // Same arithmetic as masked_visual_attention, vectorized over editable cells with caches.
  void attend_cached(TensorF& h2, const RowMatrix<float>& visual, const Mask& layout, NetCache& c) const {
    const auto& a = params_.attn;
    const Mask grid = downsample_layout(layout, h2.height(), h2.width());
    for (int p = 0; p < h2.plane_size(); ++p)
      if (grid[static_cast<std::size_t>(p)] == 0) c.editable.push_back(p);
    if (c.editable.empty()) return;
    const int Pe = static_cast<int>(c.editable.size());
    const float scale = 1.0f / std::sqrt(static_cast<float>(a.attn_width()));
    c.visual = visual;
    c.keys = visual * a.wk.transpose();
    c.values = visual * a.wv.transpose();
    MatF he(h2.channels(), Pe);
    for (int i = 0; i < Pe; ++i) he.col(i) = c.h2.col(c.editable[i]);
    c.q = a.wq * he;
    MatF logits = (c.keys * c.q) * scale;
    for (int i = 0; i < Pe; ++i) {
      auto col = logits.col(i);
      col = (col.array() - col.maxCoeff()).exp();
      col /= col.sum();
    }
    c.att = std::move(logits);
    c.attn_out = c.values.transpose() * c.att;
    const MatF r = a.wo * c.attn_out;
    auto m = h2.matrix();
    for (int i = 0; i < Pe; ++i) m.col(c.editable[i]) += r.col(i);
  }

  void attend_backward(const NetCache& c, MatF& d_h2, ToyConvParams& grads) const {
    const auto& a = params_.attn;
    const int Pe = static_cast<int>(c.editable.size());
    const float scale = 1.0f / std::sqrt(static_cast<float>(a.attn_width()));
    MatF g(d_h2.rows(), Pe), he(d_h2.rows(), Pe);
    for (int i = 0; i < Pe; ++i) {
      g.col(i) = d_h2.col(c.editable[i]);
      he.col(i) = c.h2.col(c.editable[i]);
    }
    grads.attn.wo.noalias() += g * c.attn_out.transpose();
    const MatF d_o = a.wo.transpose() * g;                 // a × Pe
    const MatF d_att = c.values * d_o;                     // n × Pe
    const MatF d_values = c.att * d_o.transpose();         // n × a
    MatF d_logits = c.att.cwiseProduct(d_att);
    const Eigen::RowVectorXf dots = d_logits.colwise().sum();
    d_logits = c.att.cwiseProduct(d_att - Eigen::VectorXf::Ones(d_att.rows()) * dots);
    const MatF d_q = scale * (c.keys.transpose() * d_logits);   // a × Pe
    const MatF d_keys = scale * (d_logits * c.q.transpose());   // n × a
    grads.attn.wq.noalias() += d_q * he.transpose();
    grads.attn.wk.noalias() += d_keys.transpose() * c.visual;
    grads.attn.wv.noalias() += d_values.transpose() * c.visual;
    const MatF d_he = a.wq.transpose() * d_q;
    for (int i = 0; i < Pe; ++i) d_h2.col(c.editable[i]) += d_he.col(i);
  }

 private:
  ToyConvConfig cfg_;
  ToyConvParams params_;
};

}  // namespace rsc::toy
