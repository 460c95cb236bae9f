#pragma once

#include <optional>
#include <string>

#include "loclin/spectra.hpp"
#include "loclin/vocab.hpp"

namespace loclin {

enum class Space { input_embedding, output_unembedding };
enum class Metric { cosine, dot, euclidean };

const char* to_string(Space s);
const char* to_string(Metric m);
Metric metric_from_string(const std::string& name);

struct TokenScore {
  TokenId id = 0;
  std::string text;
  double score = 0.0;
};

struct TokenDecoding {
  std::vector<TokenScore> entries;  // best first
  Space space = Space::input_embedding;
  std::string source;
};

/// Top-k rows of the embedding table under `metric` (euclidean scores are
/// negated distances). Ties go to the lowest id.
TokenDecoding nearest_input_tokens(std::span<const double> v, const ModelBundle& bundle,
                                   const ToyVocab& vocab, std::size_t k,
                                   Metric metric = Metric::cosine, std::string source = {});

/// Top-k ids by raw logit U_emb * v. Ties go to the lowest id.
TokenDecoding decode_output_direction(std::span<const double> v, const ModelBundle& bundle,
                                      const ToyVocab& vocab, std::size_t k,
                                      std::string source = {});

/// Top-k ids by logit after scaling v with the final-norm weights, i.e. the
/// direction the final norm would hand to the unembedding.
TokenDecoding decode_logit_lens(std::span<const double> v, const ModelBundle& bundle,
                                const ToyVocab& vocab, std::size_t k,
                                std::string source = {});

struct RankedVector {
  std::size_t index = 0;
  double norm = 0.0;
  std::optional<TokenDecoding> decoding;  // empty for a zero vector
  bool zero_direction = false;
};

/// Rows ranked by Euclidean norm (ties: lower index), decoded in input space.
std::vector<RankedVector> top_rows_by_norm(const Matrix& j, std::size_t n,
                                           const ModelBundle& bundle, const ToyVocab& vocab,
                                           std::size_t k, Metric metric = Metric::cosine);

/// Columns ranked by Euclidean norm, decoded in output space.
std::vector<RankedVector> top_cols_by_norm(const Matrix& j, std::size_t n,
                                           const ModelBundle& bundle, const ToyVocab& vocab,
                                           std::size_t k);

struct PanelDecoding {
  std::size_t index = 0;
  double singular_value = 0.0;
  TokenDecoding u_pos, u_neg;  // output space
  TokenDecoding v_pos, v_neg;  // input space
};

/// Singular vectors carry an arbitrary sign, so both orientations are decoded.
std::vector<PanelDecoding> decode_svd_panels(const SvdSummary& s, const ModelBundle& bundle,
                                             const ToyVocab& vocab, std::size_t k,
                                             Metric metric = Metric::cosine);

/// Sorts (score desc, id asc) and keeps the first k.
std::vector<TokenScore> rank_scores(std::span<const double> scores, const ToyVocab& vocab,
                                    std::size_t k);

}  // namespace loclin
