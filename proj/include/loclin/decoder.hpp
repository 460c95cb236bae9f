#pragma once

#include <functional>
#include <optional>

#include "loclin/frozen.hpp"

namespace loclin {

enum class TapPoint { layer_out, attn_out, mlp_out };

const char* to_string(TapPoint p);
TapPoint tap_point_from_string(const std::string& name);

/// An intermediate activation inside layer `layer`. attn_out and mlp_out are
/// taken before they are added to the residual stream.
struct Tap {
  std::size_t layer = 0;
  TapPoint point = TapPoint::layer_out;
};

struct RunOptions {
  // Replay with these frozen quantities instead of computing them.
  const FrozenState* frozen = nullptr;
  // Record the nonlinear quantities of a live run here.
  FrozenState* record = nullptr;
  // Return this activation instead of the final-normed output.
  std::optional<Tap> stop;
  // Treat the input as the residual stream entering this layer.
  std::size_t start_layer = 0;
  // Called with the residual stream after each layer; may rewrite it.
  std::function<void(std::size_t layer, Matrix& hidden)> after_layer;
};

/// Shared engine behind forward, capture_frozen and frozen_forward. Returns
/// one row per position at the requested point.
Matrix run_decoder(const ModelBundle& bundle, const Matrix& input,
                   const RunOptions& options);

}  // namespace loclin
