#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "loclin/frozen.hpp"
#include "loclin/generate.hpp"
#include "loclin/jacobian.hpp"

namespace loclin::test {

inline ModelConfig small_config(std::size_t d = 32, std::size_t layers = 2,
                                Activation act = Activation::swiglu) {
  ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.d_head = d / 4;
  c.d_ff = 2 * d;
  c.vocab_size = 64;
  c.activation = act;
  return c;
}

inline ModelBundle random_model(std::uint64_t seed, std::size_t d = 32, std::size_t layers = 2,
                                Activation act = Activation::swiglu) {
  return make_tiny_model(seed, small_config(d, layers, act));
}

inline TokenSequence random_tokens(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
  TokenSequence s;
  for (std::size_t i = 0; i < len; ++i) s.ids.push_back(pick(rng));
  return s;
}

inline EmbeddingSequence random_embeddings(std::mt19937_64& rng, std::size_t len,
                                           std::size_t d, double scale = 1.0) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
  EmbeddingSequence x{Matrix(len, d)};
  for (float& v : x.vectors.values()) v = n(rng);
  return x;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix m(rows, cols);
  for (float& v : m.values()) v = n(rng);
  return m;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline double max_abs(std::span<const float> a) {
  double m = 0.0;
  for (float v : a) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

/// ||a - b|| / ||b|| over flat vectors.
inline double rel_diff(std::span<const float> a, std::span<const float> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

/// Central differences of the frozen replay at x, one block per position.
/// The replay is linear, so any step is free of truncation error; larger
/// steps only reduce float32 cancellation.
inline std::vector<Matrix> frozen_fd_blocks(const ModelBundle& bundle, const FrozenState& frozen,
                                            const EmbeddingSequence& x, double h) {
  const std::size_t d = x.width();
  std::vector<Matrix> blocks(x.length(), Matrix(d, d));
  for (std::size_t p = 0; p < x.length(); ++p) {
    for (std::size_t c = 0; c < d; ++c) {
      EmbeddingSequence plus = x, minus = x;
      plus.vectors(p, c) = static_cast<float>(x.vectors(p, c) + h);
      minus.vectors(p, c) = static_cast<float>(x.vectors(p, c) - h);
      const double span = static_cast<double>(plus.vectors(p, c)) - minus.vectors(p, c);
      const Vec fp = frozen_forward(bundle, frozen, plus).y;
      const Vec fm = frozen_forward(bundle, frozen, minus).y;
      for (std::size_t r = 0; r < d; ++r)
        blocks[p](r, c) = static_cast<float>((static_cast<double>(fp[r]) - fm[r]) / span);
    }
  }
  return blocks;
}

/// Error code raised by fn, or nullopt when it returns normally.
inline std::optional<ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Unique scratch path under the system temp directory.
inline std::filesystem::path temp_path(const std::string& name) {
  static std::mt19937_64 rng{std::random_device{}()};
  auto dir = std::filesystem::temp_directory_path() / ("loclin-test-" + std::to_string(rng()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace loclin::test
