#pragma once

#include <functional>
#include <optional>
#include <string>

#include "loclin/decoder.hpp"

namespace loclin {

enum class TargetKind { final_output, layer_out, attn_out, mlp_out };

/// The activation a Jacobian is taken of, always at the last position.
struct Target {
  TargetKind kind = TargetKind::final_output;
  std::size_t layer = 0;

  static Target final_output() { return {}; }
  static Target at(std::size_t layer, TapPoint point);

  std::optional<Tap> tap() const;
  std::string label() const;

  friend bool operator==(const Target&, const Target&) = default;
};

struct JacobianOptions {
  // Upper bound on d_model x sequence length probe evaluations.
  std::size_t max_probes = std::size_t{1} << 18;
  unsigned threads = 1;
  // Optional permutation of the flat probe indices (position * d + column).
  std::vector<std::size_t> probe_order;
};

struct DetachedJacobian {
  std::vector<Matrix> blocks;  // one d_model x d_model block per input position
  Target target;
  EmbeddingSequence anchor;
  FrozenState frozen;
  Vec anchor_output;  // target activation at the anchor
};

struct StandardJacobian {
  std::vector<Matrix> blocks;
  Target target;
  EmbeddingSequence anchor;
  double step = 0.0;
};

struct Reconstruction {
  Vec estimate;   // sum_i J_i x_i
  Vec reference;  // nonlinear target activation at x
  double rel_error = 0.0;
  bool off_anchor = false;  // x differs from the point the blocks were built at
};

/// Population std of (estimate - reference) over population std of reference.
double relative_error(std::span<const float> estimate, std::span<const float> reference);

/// Target activation at the last position; replays frozen quantities when
/// `frozen` is given.
Vec evaluate_target(const ModelBundle& bundle, const EmbeddingSequence& x,
                    const Target& target, const FrozenState* frozen = nullptr);

/// Assembles the blocks of a linear map from a k x d_in sequence to a vector
/// by feeding it one basis vector at a time. Each probe fills one column.
using LinearProbe = std::function<Vec(const Matrix& input)>;
std::vector<Matrix> probe_blocks(std::size_t seq_len, std::size_t d_in,
                                 std::size_t d_out, const LinearProbe& fn,
                                 const JacobianOptions& options);

DetachedJacobian detached_jacobian(const ModelBundle& bundle, const EmbeddingSequence& x,
                                   const Target& target = Target::final_output(),
                                   const JacobianOptions& options = {});

DetachedJacobian layer_detached_jacobian(const ModelBundle& bundle,
                                         const EmbeddingSequence& x, std::size_t layer,
                                         TapPoint point,
                                         const JacobianOptions& options = {});

/// Central differences of the unmodified nonlinear forward pass.
StandardJacobian numeric_jacobian_fd(const ModelBundle& bundle, const EmbeddingSequence& x,
                                     double step = 1e-3,
                                     const Target& target = Target::final_output(),
                                     const JacobianOptions& options = {});

Vec apply_blocks(const std::vector<Matrix>& blocks, const EmbeddingSequence& x);

Reconstruction reconstruct(const ModelBundle& bundle, const DetachedJacobian& j,
                           const EmbeddingSequence& x);
Reconstruction reconstruct(const ModelBundle& bundle, const StandardJacobian& j,
                           const EmbeddingSequence& x);

/// Frozen map of layer `layer` alone, from the residual stream entering it to
/// the residual stream leaving it, restricted to the last position. For a
/// single-token input this is the full per-layer transform.
Matrix frozen_layer_block(const ModelBundle& bundle, const FrozenState& frozen,
                          std::size_t layer, const JacobianOptions& options = {});

struct LayerTransform {
  std::size_t layer = 0;
  Matrix per_layer;   // W_layer
  Matrix cumulative;  // W_{0..layer}, probed end to end
};

/// Single-token only; longer sequences carry cross-token terms that a chain
/// of d x d factors cannot express.
LayerTransform per_layer_transform(const ModelBundle& bundle, const EmbeddingSequence& x,
                                   std::size_t layer, const JacobianOptions& options = {});

struct LayerFactorization {
  std::vector<Matrix> per_layer;  // W_0 .. W_{n-1}
  Matrix cumulative;              // W_{0..n-1}
  DMatrix product;                // W_{n-1} ... W_0
  double rel_frobenius = 0.0;
};

LayerFactorization layer_factorization(const ModelBundle& bundle,
                                       const EmbeddingSequence& x,
                                       const JacobianOptions& options = {});

}  // namespace loclin
