#pragma once

#include <cstdint>
#include <vector>

#include "loclin/model.hpp"

namespace loclin {

struct FrozenLayer {
  Vec attn_norm_divisor;     // one per position
  std::vector<Matrix> probs; // one k x k matrix per query head
  Vec mlp_norm_divisor;      // one per position
  Matrix gate;               // k x d_ff, g(W_gate * norm(h))

  friend bool operator==(const FrozenLayer&, const FrozenLayer&) = default;
};

/// Every nonlinear quantity of one forward pass, held fixed so the decoder
/// can be replayed as a linear function of its input.
struct FrozenState {
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  std::uint64_t anchor_hash = 0;  // FNV-1a of the embedding bytes at capture
  std::vector<FrozenLayer> layers;
  Vec final_norm_divisor;

  /// norms + MLP gates + attention heads per layer, plus the final norm.
  std::size_t entry_count() const;

  friend bool operator==(const FrozenState&, const FrozenState&) = default;
};

std::uint64_t embedding_hash(const EmbeddingSequence& x);

struct CaptureResult {
  FrozenState frozen;
  OutputEmbedding output;
};

CaptureResult capture_frozen(const ModelBundle& bundle, const EmbeddingSequence& x);

Vec frozen_rms_norm(std::span<const float> x, float divisor, std::span<const float> w);
Vec frozen_gated_mlp(std::span<const float> x, std::span<const float> gate,
                     const Matrix& w_up, const Matrix& w_down);
Matrix frozen_attention(const Matrix& x_seq, const std::vector<Matrix>& probs,
                        const Matrix& wv, const Matrix& wo,
                        const ModelConfig& config);

/// Replays the decoder with every nonlinearity replaced by its frozen value.
/// Linear in x. Throws stale_frozen_state if shapes do not match the capture.
OutputEmbedding frozen_forward(const ModelBundle& bundle, const FrozenState& frozen,
                               const EmbeddingSequence& x);

/// Throws stale_frozen_state unless frozen was captured from a bundle of this
/// shape for a sequence of this length.
void check_frozen_shape(const ModelBundle& bundle, const FrozenState& frozen,
                        std::size_t seq_len);

}  // namespace loclin
