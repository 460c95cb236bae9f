#pragma once

// Straight-line double-precision decoder used as an oracle. Written from the
// architecture description only; shares no code with the library.

#include <cmath>
#include <vector>

#include "loclin/model.hpp"

namespace loclin::ref {

using DVec = std::vector<double>;
using DSeq = std::vector<DVec>;

inline DVec rms(const DVec& x, const Vec& w, double eps) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  DVec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = w[i] * x[i] / std::sqrt(ms + eps);
  return out;
}

inline DVec matvec(const Matrix& m, const DVec& x) {
  DVec out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r] += m(r, c) * x[c];
  return out;
}

inline double gate(double u, Activation a) {
  if (a == Activation::geglu) {
    const double k = std::sqrt(2.0 / M_PI);
    return 0.5 * u * (1.0 + std::tanh(k * (u + 0.044715 * u * u * u)));
  }
  return u / (1.0 + std::exp(-u));
}

inline void rope(DVec& v, std::size_t offset, std::size_t dh, std::size_t pos, double theta) {
  const std::size_t half = dh / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
    const double a = static_cast<double>(pos) * freq;
    const double x0 = v[offset + i], x1 = v[offset + i + half];
    v[offset + i] = x0 * std::cos(a) - x1 * std::sin(a);
    v[offset + i + half] = x0 * std::sin(a) + x1 * std::cos(a);
  }
}

/// Returns the attention output for every position; probs[h][i][j] optional.
inline DSeq attention(const DSeq& xn, const LayerWeights& l, const ModelConfig& c,
                      std::vector<std::vector<DVec>>* probs = nullptr) {
  const std::size_t k = xn.size(), dh = c.d_head, group = c.n_heads / c.n_kv_heads;
  DSeq q(k), kk(k), v(k);
  for (std::size_t p = 0; p < k; ++p) {
    q[p] = matvec(l.wq, xn[p]);
    kk[p] = matvec(l.wk, xn[p]);
    v[p] = matvec(l.wv, xn[p]);
    for (std::size_t h = 0; h < c.n_heads; ++h) rope(q[p], h * dh, dh, p, c.rope_theta);
    for (std::size_t h = 0; h < c.n_kv_heads; ++h) rope(kk[p], h * dh, dh, p, c.rope_theta);
  }
  if (probs) probs->assign(c.n_heads, std::vector<DVec>(k, DVec(k, 0.0)));
  DSeq concat(k, DVec(c.q_width(), 0.0));
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t i = 0; i < k; ++i) {
      DVec s(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e) dot += q[i][h * dh + e] * kk[j][kvh * dh + e];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double total = 0.0;
      for (double& x : s) total += (x = std::exp(x - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        const double pr = s[j] / total;
        if (probs) (*probs)[h][i][j] = pr;
        for (std::size_t e = 0; e < dh; ++e) concat[i][h * dh + e] += pr * v[j][kvh * dh + e];
      }
    }
  }
  DSeq out(k);
  for (std::size_t p = 0; p < k; ++p) out[p] = matvec(l.wo, concat[p]);
  return out;
}

inline DVec mlp(const DVec& xn, const LayerWeights& l, Activation a) {
  const DVec g = matvec(l.w_gate, xn), z = matvec(l.w_up, xn);
  DVec hidden(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) hidden[i] = gate(g[i], a) * z[i];
  return matvec(l.w_down, hidden);
}

inline DVec forward(const ModelBundle& b, const Matrix& x) {
  const auto& c = b.config;
  DSeq h(x.rows());
  for (std::size_t p = 0; p < x.rows(); ++p) h[p].assign(x.row(p).begin(), x.row(p).end());
  for (const auto& l : b.layers) {
    DSeq xn(h.size());
    for (std::size_t p = 0; p < h.size(); ++p) xn[p] = rms(h[p], l.attn_norm, c.norm_eps);
    const DSeq a = attention(xn, l, c);
    for (std::size_t p = 0; p < h.size(); ++p)
      for (std::size_t i = 0; i < c.d_model; ++i) h[p][i] += a[p][i];
    for (std::size_t p = 0; p < h.size(); ++p) {
      const DVec m = mlp(rms(h[p], l.mlp_norm, c.norm_eps), l, c.activation);
      for (std::size_t i = 0; i < c.d_model; ++i) h[p][i] += m[i];
    }
  }
  return rms(h.back(), b.final_norm, c.norm_eps);
}

}  // namespace loclin::ref
