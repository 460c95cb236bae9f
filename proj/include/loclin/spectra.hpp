#pragma once

#include <array>
#include <set>
#include <string>

#include "loclin/jacobian.hpp"

namespace loclin {

struct SvdSummary {
  std::vector<double> singular_values;  // descending, all of them
  DMatrix u_panel;                      // rows x retained
  DMatrix v_panel;                      // cols x retained
  std::size_t retained = 0;
  std::string source;
};

struct SvdOptions {
  std::size_t max_sweeps = 100;
  double tolerance = 1e-15;
};

/// One-sided Jacobi SVD in double precision. Singular values below
/// 1e-12 * S_max are reported as exactly zero. Each pair (u_i, v_i) is
/// oriented so the largest-magnitude entry of u_i is positive.
SvdSummary svd(const DMatrix& m, std::size_t retain, std::string source = {},
               const SvdOptions& options = {});
SvdSummary svd(const Matrix& m, std::size_t retain, std::string source = {},
               const SvdOptions& options = {});

/// sum(S_i^2) / S_max^2.
double stable_rank(std::span<const double> singular_values);

std::vector<double> normalized_by_max(std::span<const double> s);
std::vector<double> normalized_by_frobenius(std::span<const double> s);

/// |<u_layer_a, u_final_b>| for the top two columns of each panel.
std::array<std::array<double, 2>, 2> project_onto_final(const DMatrix& u_layer,
                                                        const DMatrix& u_final);

enum class Series { cumulative, per_layer };
const char* to_string(Series s);

struct StableRankPoint {
  std::size_t layer = 0;
  TapPoint point = TapPoint::layer_out;
  Series series = Series::cumulative;
  std::size_t position = 0;
  double stable_rank = 1.0;
  bool zero_map = false;
  std::vector<double> singular_values;
};

struct StableRankReport {
  std::vector<StableRankPoint> points;
};

struct ProfileOptions {
  std::set<TapPoint> points = {TapPoint::layer_out};
  bool cumulative = true;
  bool per_layer = true;
  JacobianOptions jacobian;
};

/// Cumulative points use the detached Jacobian of each layer target (one
/// entry per input position). Per-layer points use the frozen map of that
/// layer alone at the last position, which is the full per-layer transform
/// for single-token input and its diagonal block otherwise.
StableRankReport spectrum_profile(const ModelBundle& bundle, const EmbeddingSequence& x,
                                  const ProfileOptions& options = {});

/// Frozen map of one layer (or its attention / MLP branch) from the residual
/// stream entering that layer, restricted to the last position.
Matrix frozen_branch_block(const ModelBundle& bundle, const FrozenState& frozen,
                           std::size_t layer, TapPoint point,
                           const JacobianOptions& options = {});

}  // namespace loclin
