#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loclin/tensor.hpp"

namespace loclin {

enum class Activation { swiglu, geglu, swish_glu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t d_head = 8;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 64;
  Activation activation = Activation::swiglu;
  double norm_eps = 1e-6;
  double rope_theta = 10000.0;
  bool tie_embeddings = false;
  // Multiply looked-up embeddings by sqrt(d_model).
  bool embed_scale = false;

  /// Throws ErrorCode::config when the dimensions are inconsistent.
  void validate() const;

  std::size_t q_width() const { return n_heads * d_head; }
  std::size_t kv_width() const { return n_kv_heads * d_head; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Vec attn_norm;
  Matrix wq;  // q_width x d_model
  Matrix wk;  // kv_width x d_model
  Matrix wv;  // kv_width x d_model
  Matrix wo;  // d_model x q_width
  Vec mlp_norm;
  Matrix w_gate;  // d_ff x d_model
  Matrix w_up;    // d_ff x d_model
  Matrix w_down;  // d_model x d_ff

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Zero-bias pre-norm decoder. Immutable once constructed and validated;
/// safe to share across threads for reading.
struct ModelBundle {
  ModelConfig config;
  Matrix embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
  Vec final_norm;
  Matrix unembedding;  // vocab x d_model, empty when tied

  const Matrix& unembed() const {
    return config.tie_embeddings ? embedding : unembedding;
  }

  /// Checks every tensor shape against the config and that all values are
  /// finite.
  void validate() const;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Builds a bundle of the right shapes with every weight zero and every norm
/// weight one.
ModelBundle zero_bundle(const ModelConfig& config);

using TokenId = std::int32_t;

struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t size() const { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// One row per position.
struct EmbeddingSequence {
  Matrix vectors;
  std::size_t length() const { return vectors.rows(); }
  std::size_t width() const { return vectors.cols(); }
};

struct OutputEmbedding {
  Vec y;
};

EmbeddingSequence embed(const ModelBundle& bundle, const TokenSequence& tokens);

/// Nonlinear reference forward pass; returns the final-normed hidden state at
/// the last position.
OutputEmbedding forward(const ModelBundle& bundle, const EmbeddingSequence& x);

/// Argmax over unembedding logits of forward(); ties go to the lowest id.
TokenId greedy_next_token(const ModelBundle& bundle, const TokenSequence& tokens);

/// Logits U_emb * y, accumulated in double.
std::vector<double> logits(const ModelBundle& bundle, std::span<const float> y);

// -- Layer primitives ------------------------------------------------------

/// sqrt(mean(x^2) + eps), rounded to float.
float rms_divisor(std::span<const float> x, double eps);
Vec rms_norm(std::span<const float> x, std::span<const float> w, double eps);

/// Swish(u) = u * sigmoid(u), or the tanh approximation of GELU.
double gate_activation(double u, Activation kind);

Vec gated_mlp(std::span<const float> x, const Matrix& w_gate, const Matrix& w_up,
              const Matrix& w_down, Activation kind);

/// Row-softmax of causally masked, rotated QK^T / sqrt(d_head), one k x k
/// matrix per query head.
std::vector<Matrix> attention_probabilities(const Matrix& x_seq,
                                            const LayerWeights& layer,
                                            const ModelConfig& config);

/// Full causal multi-head attention over the sequence (k x d_model in and
/// out). Optionally reports the per-head probability matrices it used.
Matrix attention(const Matrix& x_seq, const LayerWeights& layer,
                 const ModelConfig& config,
                 std::vector<Matrix>* probs_out = nullptr);

/// Rotates consecutive halves of each head in place (rotate-half layout).
void apply_rope(std::span<float> head, std::size_t position, double theta);

}  // namespace loclin
