#include "loclin/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace loclin {

namespace {

struct Thin {
  DMatrix u;  // m x n, m >= n
  std::vector<double> s;
  DMatrix v;  // n x n
};

// Hestenes one-sided Jacobi: rotate column pairs of A until they are mutually
// orthogonal. The rotations accumulate into V, the column norms are S.
Thin jacobi_tall(const DMatrix& a, const SvdOptions& opt) {
  const std::size_t m = a.rows(), n = a.cols();
  Thin t{a, std::vector<double>(n), DMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) t.v(i, i) = 1.0;
  DMatrix& u = t.u;
  double off = 0.0;
  std::size_t sweep = 0;
  for (; sweep < opt.max_sweeps; ++sweep) {
    off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += u(i, p) * u(i, p);
          beta += u(i, q) * u(i, q);
          gamma += u(i, p) * u(i, q);
        }
        if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
        const double cosine = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, cosine);
        if (cosine <= opt.tolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double tau = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, tau);
        const double s = c * tau;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u(i, p), uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = t.v(i, p), vq = t.v(i, q);
          t.v(i, p) = c * vp - s * vq;
          t.v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off <= opt.tolerance) break;
  }
  if (sweep == opt.max_sweeps) {
    std::ostringstream msg;
    msg << "svd did not converge after " << opt.max_sweeps
        << " sweeps; largest column cosine " << off;
    fail(ErrorCode::numeric, msg.str());
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) s2 += u(i, j) * u(i, j);
    t.s[j] = std::sqrt(s2);
  }
  return t;
}

// Replaces the listed columns of u with unit vectors orthogonal to all other
// columns (classical Gram-Schmidt over the standard basis, applied twice).
void complete_basis(DMatrix& u, const std::vector<bool>& valid) {
  const std::size_t m = u.rows(), n = u.cols();
  std::vector<bool> have = valid;
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (have[j]) continue;
    for (; candidate < m; ++candidate) {
      std::vector<double> e(m, 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!have[c]) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += u(i, c) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= proj * u(i, c);
        }
      }
      const double nrm = norm2(std::span<const double>(e));
      if (nrm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = e[i] / nrm;
        have[j] = true;
        ++candidate;
        break;
      }
    }
  }
}

}  // namespace

SvdSummary svd(const DMatrix& m, std::size_t retain, std::string source,
               const SvdOptions& options) {
  const std::size_t rows = m.rows(), cols = m.cols();
  require(rows > 0 && cols > 0, ErrorCode::shape, "svd: empty matrix");
  const std::size_t n = std::min(rows, cols);
  require(retain >= 1 && retain <= n, ErrorCode::usage,
          "svd: retain count must be in [1, " + std::to_string(n) + "]");
  for (double v : m.values())
    require(std::isfinite(v), ErrorCode::numeric, "svd: matrix has non-finite entries");

  const bool wide = rows < cols;
  Thin t = jacobi_tall(wide ? transpose(m) : m, options);
  // For a tall input u spans the column space of m; for a wide one the roles
  // of u and v swap back at the end.

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t.s[a] > t.s[b]; });

  const double smax = t.s[order.front()];
  const std::size_t tall_rows = t.u.rows();
  DMatrix left(tall_rows, n), right(n, n);
  std::vector<double> s(n);
  std::vector<bool> valid(n, true);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    double sj = t.s[src];
    if (smax == 0.0 || sj <= 1e-12 * smax) {
      sj = 0.0;
      valid[j] = false;
    }
    s[j] = sj;
    for (std::size_t i = 0; i < tall_rows; ++i)
      left(i, j) = valid[j] ? t.u(i, src) / t.s[src] : 0.0;
    for (std::size_t i = 0; i < n; ++i) right(i, j) = t.v(i, src);
  }
  complete_basis(left, valid);

  DMatrix& u_full = wide ? right : left;
  DMatrix& v_full = wide ? left : right;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < u_full.rows(); ++i)
      if (std::abs(u_full(i, j)) > std::abs(u_full(arg, j))) arg = i;
    if (u_full(arg, j) < 0.0) {
      for (std::size_t i = 0; i < u_full.rows(); ++i) u_full(i, j) = -u_full(i, j);
      for (std::size_t i = 0; i < v_full.rows(); ++i) v_full(i, j) = -v_full(i, j);
    }
  }

  SvdSummary out;
  out.singular_values = std::move(s);
  out.retained = retain;
  out.source = std::move(source);
  out.u_panel = DMatrix(rows, retain);
  out.v_panel = DMatrix(cols, retain);
  for (std::size_t j = 0; j < retain; ++j) {
    for (std::size_t i = 0; i < rows; ++i) out.u_panel(i, j) = u_full(i, j);
    for (std::size_t i = 0; i < cols; ++i) out.v_panel(i, j) = v_full(i, j);
  }
  return out;
}

SvdSummary svd(const Matrix& m, std::size_t retain, std::string source,
               const SvdOptions& options) {
  return svd(to_double(m), retain, std::move(source), options);
}

double stable_rank(std::span<const double> s) {
  require(!s.empty(), ErrorCode::undefined_result, "stable rank of an empty spectrum");
  double smax = 0.0, total = 0.0;
  for (double v : s) {
    require(v >= 0.0 && std::isfinite(v), ErrorCode::usage,
            "singular values must be finite and non-negative");
    smax = std::max(smax, v);
    total += v * v;
  }
  require(smax > 0.0, ErrorCode::undefined_result,
          "stable rank is undefined for an all-zero spectrum");
  return total / (smax * smax);
}

std::vector<double> normalized_by_max(std::span<const double> s) {
  double smax = 0.0;
  for (double v : s) smax = std::max(smax, v);
  std::vector<double> out(s.begin(), s.end());
  if (smax > 0.0)
    for (double& v : out) v /= smax;
  return out;
}

std::vector<double> normalized_by_frobenius(std::span<const double> s) {
  const double f = norm2(s);
  std::vector<double> out(s.begin(), s.end());
  if (f > 0.0)
    for (double& v : out) v /= f;
  return out;
}

std::array<std::array<double, 2>, 2> project_onto_final(const DMatrix& u_layer,
                                                        const DMatrix& u_final) {
  require(u_layer.rows() == u_final.rows(), ErrorCode::shape,
          "projection: panels have different vector dimensions");
  require(u_layer.cols() >= 2 && u_final.cols() >= 2, ErrorCode::usage,
          "projection: panels need at least two columns");
  std::array<std::array<double, 2>, 2> out{};
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < u_layer.rows(); ++i) acc += u_layer(i, a) * u_final(i, b);
      out[a][b] = std::abs(acc);
    }
  return out;
}

const char* to_string(Series s) {
  return s == Series::cumulative ? "cumulative" : "per-layer";
}

Matrix frozen_branch_block(const ModelBundle& bundle, const FrozenState& frozen,
                           std::size_t layer, TapPoint point,
                           const JacobianOptions& options) {
  require(layer < bundle.config.n_layers, ErrorCode::usage, "layer out of range");
  if (point == TapPoint::layer_out) return frozen_layer_block(bundle, frozen, layer, options);
  const std::size_t d = bundle.config.d_model;
  const std::size_t k = frozen.seq_len;
  RunOptions opts;
  opts.frozen = &frozen;
  opts.start_layer = layer;
  opts.stop = Tap{layer, point};
  auto blocks = probe_blocks(
      1, d, d,
      [&](const Matrix& basis) {
        Matrix input(k, d);
        std::copy(basis.row(0).begin(), basis.row(0).end(), input.row(k - 1).begin());
        const Matrix out = run_decoder(bundle, input, opts);
        auto last = out.row(k - 1);
        return Vec(last.begin(), last.end());
      },
      options);
  return std::move(blocks.front());
}

StableRankReport spectrum_profile(const ModelBundle& bundle, const EmbeddingSequence& x,
                                  const ProfileOptions& options) {
  StableRankReport report;
  auto add = [&](std::size_t layer, TapPoint point, Series series, std::size_t position,
                 const Matrix& block) {
    StableRankPoint p;
    p.layer = layer;
    p.point = point;
    p.series = series;
    p.position = position;
    p.singular_values = svd(block, 1).singular_values;
    // An all-zero block (a branch with zero weights) has no direction; it is
    // flagged and given the lower bound 1.
    p.zero_map = std::all_of(p.singular_values.begin(), p.singular_values.end(),
                             [](double v) { return v == 0.0; });
    p.stable_rank = p.zero_map ? 1.0 : stable_rank(p.singular_values);
    report.points.push_back(std::move(p));
  };

  const auto frozen = capture_frozen(bundle, x).frozen;
  for (std::size_t layer = 0; layer < bundle.config.n_layers; ++layer) {
    for (TapPoint point : options.points) {
      if (options.cumulative) {
        const auto j = layer_detached_jacobian(bundle, x, layer, point, options.jacobian);
        for (std::size_t i = 0; i < j.blocks.size(); ++i)
          add(layer, point, Series::cumulative, i, j.blocks[i]);
      }
      if (options.per_layer) {
        add(layer, point, Series::per_layer, x.length() - 1,
            frozen_branch_block(bundle, frozen, layer, point, options.jacobian));
      }
    }
  }
  return report;
}

}  // namespace loclin
