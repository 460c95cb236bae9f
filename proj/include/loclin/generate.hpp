#pragma once

#include <cstdint>

#include "loclin/model.hpp"
#include "loclin/vocab.hpp"

namespace loclin {

/// SplitMix64. Integer-only state update, so a seed produces the same stream
/// on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Top 24 bits scaled to [0, 1); exactly representable as a float.
  double uniform01() { return static_cast<double>(next() >> 40) * 0x1.0p-24; }

  /// Uniform on [-a, a), rounded once to float.
  float symmetric(double a) { return static_cast<float>(a * (2.0 * uniform01() - 1.0)); }

 private:
  std::uint64_t state_;
};

struct TinyModelOptions {
  // Fit the unembedding to the bundled corpus so greedy continuations follow it.
  bool trained = false;
  std::size_t fit_iterations = 800;
  // Scales W_Q and W_K; larger values give sharper attention.
  double qk_gain = 2.0;
};

/// Seeded random zero-bias decoder. Weights are uniform with variance
/// 1/fan_in (embeddings: unit variance); norm weights lie in [0.8, 1.2].
ModelBundle make_tiny_model(std::uint64_t seed, const ModelConfig& config,
                            const TinyModelOptions& options = {});

struct CorpusExample {
  TokenSequence prefix;
  TokenId next = 0;
};

/// Every (prefix, next token) pair of the bundled corpus, each sentence
/// starting with <bos>.
std::vector<CorpusExample> corpus_examples(const ToyVocab& vocab);

/// Fraction of corpus prefixes whose greedy next token matches the corpus.
double corpus_accuracy(const ModelBundle& bundle);

}  // namespace loclin
