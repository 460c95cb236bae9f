#include "loclin/generate.hpp"

#include <cmath>
#include <sstream>

namespace loclin {

namespace {

void fill(Matrix& m, SplitMix64& rng, double a) {
  for (float& v : m.values()) v = rng.symmetric(a);
}

Vec norm_weights(std::size_t d, SplitMix64& rng) {
  Vec w(d);
  for (float& v : w) v = static_cast<float>(1.0 + 0.2 * (2.0 * rng.uniform01() - 1.0));
  return w;
}

double fan_in_bound(std::size_t fan_in) {
  return std::sqrt(3.0 / static_cast<double>(fan_in));
}

// Multinomial logistic regression of the next token on the final output
// embedding, by full-batch gradient descent on the unembedding rows.
void fit_unembedding(ModelBundle& b, const TinyModelOptions& options) {
  const ToyVocab vocab(b.config.vocab_size);
  const auto examples = corpus_examples(vocab);
  require(!examples.empty(), ErrorCode::config, "corpus produced no examples");
  const std::size_t d = b.config.d_model, v = b.config.vocab_size, n = examples.size();

  std::vector<std::vector<double>> feats;
  double mean_sq = 0.0;
  for (const auto& ex : examples) {
    const Vec y = forward(b, embed(b, ex.prefix)).y;
    feats.emplace_back(y.begin(), y.end());
    mean_sq += dot(std::span<const double>(feats.back()), std::span<const double>(feats.back()));
  }
  mean_sq /= static_cast<double>(n);
  const double lr = 2.0 / mean_sq;

  DMatrix w = to_double(b.unembedding);
  DMatrix grad(v, d);
  std::vector<double> z(v);
  for (std::size_t it = 0; it < options.fit_iterations; ++it) {
    std::fill(grad.values().begin(), grad.values().end(), 0.0);
    for (std::size_t e = 0; e < n; ++e) {
      double mx = -1e300;
      for (std::size_t t = 0; t < v; ++t) {
        z[t] = dot(w.row(t), std::span<const double>(feats[e]));
        mx = std::max(mx, z[t]);
      }
      double total = 0.0;
      for (std::size_t t = 0; t < v; ++t) total += (z[t] = std::exp(z[t] - mx));
      for (std::size_t t = 0; t < v; ++t) {
        const double g = z[t] / total -
                         (static_cast<TokenId>(t) == examples[e].next ? 1.0 : 0.0);
        if (g == 0.0) continue;
        auto gr = grad.row(t);
        for (std::size_t i = 0; i < d; ++i) gr[i] += g * feats[e][i];
      }
    }
    const double scale = lr / static_cast<double>(n);
    for (std::size_t i = 0; i < w.size(); ++i) w.values()[i] -= scale * grad.values()[i];
  }
  for (std::size_t i = 0; i < w.size(); ++i)
    b.unembedding.values()[i] = static_cast<float>(w.values()[i]);
}

}  // namespace

ModelBundle make_tiny_model(std::uint64_t seed, const ModelConfig& config,
                            const TinyModelOptions& options) {
  config.validate();
  require(!(options.trained && config.tie_embeddings), ErrorCode::config,
          "trained mode fits a separate unembedding; tie_embeddings must be false");
  SplitMix64 rng(seed);
  const std::size_t d = config.d_model;
  ModelBundle b = zero_bundle(config);
  fill(b.embedding, rng, std::sqrt(3.0));
  const double gate_gain = 2.0;
  for (auto& l : b.layers) {
    l.attn_norm = norm_weights(d, rng);
    fill(l.wq, rng, options.qk_gain * fan_in_bound(d));
    fill(l.wk, rng, options.qk_gain * fan_in_bound(d));
    fill(l.wv, rng, fan_in_bound(d));
    fill(l.wo, rng, fan_in_bound(config.q_width()));
    l.mlp_norm = norm_weights(d, rng);
    fill(l.w_gate, rng, gate_gain * fan_in_bound(d));
    fill(l.w_up, rng, fan_in_bound(d));
    fill(l.w_down, rng, fan_in_bound(config.d_ff));
  }
  b.final_norm = norm_weights(d, rng);
  if (!config.tie_embeddings) fill(b.unembedding, rng, fan_in_bound(d));
  if (options.trained) fit_unembedding(b, options);
  b.validate();
  return b;
}

std::vector<CorpusExample> corpus_examples(const ToyVocab& vocab) {
  std::vector<CorpusExample> out;
  for (const auto& sentence : toy_corpus()) {
    const TokenSequence seq = vocab.encode(sentence, true);
    for (std::size_t p = 1; p < seq.size(); ++p) {
      CorpusExample ex;
      ex.prefix.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(p));
      ex.next = seq.ids[p];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

double corpus_accuracy(const ModelBundle& bundle) {
  const auto examples = corpus_examples(ToyVocab(bundle.config.vocab_size));
  std::size_t hits = 0;
  for (const auto& ex : examples)
    if (greedy_next_token(bundle, ex.prefix) == ex.next) ++hits;
  return examples.empty() ? 0.0
                          : static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace loclin
