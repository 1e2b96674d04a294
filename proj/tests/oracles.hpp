// Independent test-side oracles: plain loops, no library arithmetic.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rsc/analytic_gmm.hpp"
#include "rsc/condition_generator.hpp"
#include "rsc/visual_prompt_editor.hpp"

namespace rsc::test {

inline Tokens random_tokens(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tokens t(n, d);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
  return t;
}

// Plain loops, no matrix products: v·M for a row vector v.
inline std::vector<double> vec_mat(const std::vector<double>& v, const RowMatrix<double>& m) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()), 0.0);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(i)] * m(i, j);
  return out;
}

inline std::vector<double> row_of(const RowMatrix<double>& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(r, j);
  return out;
}

struct OracleOut {
  std::vector<std::vector<double>> tokens, attention;
};

inline OracleOut dense_resampler_oracle(const Tokens& f_v, const Tokens& f_t, const NormalizedBox& box, int bands,
                                 const ResamplerWeights& w) {
  const int d = w.d;
  std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index r = 0; r < f_t.rows(); ++r)
    for (int j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += f_t(r, j) / static_cast<double>(f_t.rows());
  std::vector<double> fourier;
  for (double c : {box.x0, box.y0, box.x1, box.y1})
    for (int k = 0; k < bands; ++k) {
      fourier.push_back(std::sin(std::pow(2.0, k) * M_PI * c));
      fourier.push_back(std::cos(std::pow(2.0, k) * M_PI * c));
    }
  const auto projected = vec_mat(fourier, w.box_proj);
  std::vector<double> cat = pooled;
  cat.insert(cat.end(), projected.begin(), projected.end());
  const auto flat = vec_mat(cat, w.query_init);
  std::vector<std::vector<double>> queries, kv;
  for (Eigen::Index r = 0; r < f_v.rows(); ++r) kv.push_back(row_of(f_v, r));
  for (int i = 0; i < w.n_q; ++i) {
    queries.emplace_back(flat.begin() + i * d, flat.begin() + (i + 1) * d);
    kv.push_back(queries.back());
  }
  OracleOut out;
  for (const auto& qin : queries) {
    const auto q = vec_mat(qin, w.wq);
    std::vector<double> logits;
    for (const auto& row : kv) {
      const auto k = vec_mat(row, w.wk);
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += q[static_cast<std::size_t>(j)] * k[static_cast<std::size_t>(j)];
      logits.push_back(dot / std::sqrt(static_cast<double>(d)));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (double& l : logits) l /= z;
    std::vector<double> mixed(static_cast<std::size_t>(d), 0.0);
    for (std::size_t s = 0; s < kv.size(); ++s) {
      const auto v = vec_mat(kv[s], w.wv);
      for (int j = 0; j < d; ++j) mixed[static_cast<std::size_t>(j)] += logits[s] * v[static_cast<std::size_t>(j)];
    }
    out.tokens.push_back(vec_mat(mixed, w.wo));
    out.attention.push_back(logits);
  }
  return out;
}

inline NormalizedBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng), c = u(rng), e = u(rng);
  if (a == b) b = std::min(1.0, a + 0.01);
  if (c == e) e = std::min(1.0, c + 0.01);
  return {std::min(a, b), std::min(c, e), std::max(a, b), std::max(c, e)};
}

inline Mask random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  Mask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, bit(rng));
  return m;
}

inline CrossAttentionWeights<double> random_attention(int C, int a, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int r, int c) {
    RowMatrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  return {draw(a, C), draw(a, d), draw(a, d), draw(C, a)};
}

// Unmasked attention at one cell with explicit loops.
inline std::vector<double> attention_cell_oracle(const Tensor& act, int y, int x, const RowMatrix<double>& tokens,
                                          const CrossAttentionWeights<double>& w) {
  const int C = act.channels(), a = w.attn_width(), n = static_cast<int>(tokens.rows()), d = static_cast<int>(tokens.cols());
  std::vector<double> q(static_cast<std::size_t>(a), 0.0);
  for (int i = 0; i < a; ++i)
    for (int c = 0; c < C; ++c) q[static_cast<std::size_t>(i)] += w.wq(i, c) * act(c, y, x);
  std::vector<double> logit(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < a; ++i) {
      double k = 0.0;
      for (int e = 0; e < d; ++e) k += w.wk(i, e) * tokens(j, e);
      logit[static_cast<std::size_t>(j)] += q[static_cast<std::size_t>(i)] * k;
    }
    logit[static_cast<std::size_t>(j)] /= std::sqrt(static_cast<double>(a));
  }
  const double mx = *std::max_element(logit.begin(), logit.end());
  double z = 0.0;
  for (double& l : logit) z += (l = std::exp(l - mx));
  std::vector<double> mixed(static_cast<std::size_t>(a), 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < a; ++i) {
      double v = 0.0;
      for (int e = 0; e < d; ++e) v += w.wv(i, e) * tokens(j, e);
      mixed[static_cast<std::size_t>(i)] += logit[static_cast<std::size_t>(j)] / z * v;
    }
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < a; ++i) out[static_cast<std::size_t>(c)] += w.wo(c, i) * mixed[static_cast<std::size_t>(i)];
  return out;
}

// Independent log p_t for the noised mixture, summed in long double.
inline long double log_density(const GaussianMixture& m, const std::vector<double>& z, double ab) {
  long double total = 0.0L;
  for (int k = 0; k < m.components(); ++k) {
    const long double s2 = ab * m.variances[k] + (1.0 - ab);
    long double sq = 0.0L;
    for (int i = 0; i < m.dim(); ++i) {
      const long double d = z[i] - std::sqrt(static_cast<long double>(ab)) * m.means[k][i];
      sq += d * d;
    }
    total += m.weights[k] * std::pow(2.0L * M_PIl * s2, -0.5L * m.dim()) * std::exp(-0.5L * sq / s2);
  }
  return std::log(total);
}

}  // namespace rsc::test
