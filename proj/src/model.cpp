#include "loclin/model.hpp"

#include <cmath>
#include <numbers>

#include "loclin/decoder.hpp"

namespace loclin {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::swiglu: return "swiglu";
    case Activation::geglu: return "geglu";
    case Activation::swish_glu: return "swish-glu";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "swiglu") return Activation::swiglu;
  if (name == "geglu") return Activation::geglu;
  if (name == "swish-glu") return Activation::swish_glu;
  fail(ErrorCode::config, "unknown activation '" + name + "'");
}

void ModelConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && n_kv_heads > 0 && d_head > 0 &&
              d_ff > 0 && vocab_size > 0,
          ErrorCode::config, "config dimensions must be positive");
  require(d_model == n_heads * d_head, ErrorCode::config,
          "d_model must equal n_heads * d_head");
  require(n_heads % n_kv_heads == 0, ErrorCode::config,
          "n_heads must be divisible by n_kv_heads");
  require(d_head % 2 == 0, ErrorCode::config,
          "d_head must be even for rotary embeddings");
  require(norm_eps >= 0.0 && std::isfinite(norm_eps), ErrorCode::config,
          "norm_eps must be finite and >= 0");
  require(rope_theta > 0.0 && std::isfinite(rope_theta), ErrorCode::config,
          "rope_theta must be positive");
}

namespace {

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                 const std::string& name) {
  require(m.rows() == rows && m.cols() == cols, ErrorCode::config,
          "tensor " + name + " has shape [" + std::to_string(m.rows()) + "," +
              std::to_string(m.cols()) + "], expected [" +
              std::to_string(rows) + "," + std::to_string(cols) + "]");
  require(all_finite(m.values()), ErrorCode::numeric,
          "tensor " + name + " has non-finite values");
}

void check_shape(const Vec& v, std::size_t n, const std::string& name) {
  require(v.size() == n, ErrorCode::config,
          "tensor " + name + " has length " + std::to_string(v.size()) +
              ", expected " + std::to_string(n));
  require(all_finite(v), ErrorCode::numeric,
          "tensor " + name + " has non-finite values");
}

}  // namespace

void ModelBundle::validate() const {
  config.validate();
  const auto d = config.d_model;
  check_shape(embedding, config.vocab_size, d, "embedding");
  require(layers.size() == config.n_layers, ErrorCode::config,
          "layer count does not match config");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const auto p = "layers." + std::to_string(i) + ".";
    check_shape(l.attn_norm, d, p + "attn_norm");
    check_shape(l.wq, config.q_width(), d, p + "wq");
    check_shape(l.wk, config.kv_width(), d, p + "wk");
    check_shape(l.wv, config.kv_width(), d, p + "wv");
    check_shape(l.wo, d, config.q_width(), p + "wo");
    check_shape(l.mlp_norm, d, p + "mlp_norm");
    check_shape(l.w_gate, config.d_ff, d, p + "w_gate");
    check_shape(l.w_up, config.d_ff, d, p + "w_up");
    check_shape(l.w_down, d, config.d_ff, p + "w_down");
  }
  check_shape(final_norm, d, "final_norm");
  if (!config.tie_embeddings)
    check_shape(unembedding, config.vocab_size, d, "unembedding");
}

ModelBundle zero_bundle(const ModelConfig& config) {
  config.validate();
  const auto d = config.d_model;
  ModelBundle b;
  b.config = config;
  b.embedding = Matrix(config.vocab_size, d);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerWeights l;
    l.attn_norm = Vec(d, 1.0f);
    l.wq = Matrix(config.q_width(), d);
    l.wk = Matrix(config.kv_width(), d);
    l.wv = Matrix(config.kv_width(), d);
    l.wo = Matrix(d, config.q_width());
    l.mlp_norm = Vec(d, 1.0f);
    l.w_gate = Matrix(config.d_ff, d);
    l.w_up = Matrix(config.d_ff, d);
    l.w_down = Matrix(d, config.d_ff);
    b.layers.push_back(std::move(l));
  }
  b.final_norm = Vec(d, 1.0f);
  if (!config.tie_embeddings) b.unembedding = Matrix(config.vocab_size, d);
  return b;
}

EmbeddingSequence embed(const ModelBundle& bundle, const TokenSequence& tokens) {
  require(!tokens.ids.empty(), ErrorCode::invalid_token, "empty token sequence");
  const auto d = bundle.config.d_model;
  const double scale =
      bundle.config.embed_scale ? std::sqrt(static_cast<double>(d)) : 1.0;
  EmbeddingSequence x{Matrix(tokens.size(), d)};
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const auto id = tokens.ids[p];
    require(id >= 0 && static_cast<std::size_t>(id) < bundle.config.vocab_size,
            ErrorCode::invalid_token,
            "token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(bundle.config.vocab_size));
    auto src = bundle.embedding.row(static_cast<std::size_t>(id));
    auto dst = x.vectors.row(p);
    for (std::size_t j = 0; j < d; ++j)
      dst[j] = bundle.config.embed_scale
                   ? static_cast<float>(static_cast<double>(src[j]) * scale)
                   : src[j];
  }
  return x;
}

OutputEmbedding forward(const ModelBundle& bundle, const EmbeddingSequence& x) {
  Matrix out = run_decoder(bundle, x.vectors, RunOptions{});
  auto last = out.row(out.rows() - 1);
  return OutputEmbedding{Vec(last.begin(), last.end())};
}

std::vector<double> logits(const ModelBundle& bundle, std::span<const float> y) {
  const Matrix& u = bundle.unembed();
  require(y.size() == u.cols(), ErrorCode::shape, "logits: width mismatch");
  std::vector<double> out(u.rows());
  for (std::size_t t = 0; t < u.rows(); ++t) out[t] = dot(u.row(t), y);
  return out;
}

TokenId greedy_next_token(const ModelBundle& bundle, const TokenSequence& tokens) {
  const auto y = forward(bundle, embed(bundle, tokens)).y;
  const auto z = logits(bundle, y);
  std::size_t best = 0;
  for (std::size_t t = 1; t < z.size(); ++t)
    if (z[t] > z[best]) best = t;
  return static_cast<TokenId>(best);
}

float rms_divisor(std::span<const float> x, double eps) {
  return static_cast<float>(std::sqrt(mean_square(x) + eps));
}

Vec rms_norm(std::span<const float> x, std::span<const float> w, double eps) {
  require(x.size() == w.size(), ErrorCode::shape, "rms_norm: width mismatch");
  const float divisor = rms_divisor(x, eps);
  require(divisor > 0.0f, ErrorCode::numeric,
          "rms_norm: zero divisor (all-zero input with eps = 0)");
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(w[i]) *
                                static_cast<double>(x[i]) / divisor);
  return out;
}

double gate_activation(double u, Activation kind) {
  switch (kind) {
    case Activation::swiglu:
    case Activation::swish_glu:
      return u / (1.0 + std::exp(-u));
    case Activation::geglu: {
      constexpr double gamma = 0.044715;
      const double c = std::sqrt(2.0 / std::numbers::pi);
      return 0.5 * u * (1.0 + std::tanh(c * (u + gamma * u * u * u)));
    }
  }
  fail(ErrorCode::config, "unknown activation");
}

Vec gated_mlp(std::span<const float> x, const Matrix& w_gate, const Matrix& w_up,
              const Matrix& w_down, Activation kind) {
  const Vec pre = matvec(w_gate, x);
  Vec gate(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i)
    gate[i] = static_cast<float>(gate_activation(pre[i], kind));
  return frozen_gated_mlp(x, gate, w_up, w_down);
}

void apply_rope(std::span<float> head, std::size_t position, double theta) {
  const std::size_t half = head.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head.size()));
    const double angle = static_cast<double>(position) * freq;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = head[i], b = head[i + half];
    head[i] = static_cast<float>(a * c - b * s);
    head[i + half] = static_cast<float>(b * c + a * s);
  }
}

std::vector<Matrix> attention_probabilities(const Matrix& x_seq,
                                            const LayerWeights& layer,
                                            const ModelConfig& config) {
  const std::size_t k = x_seq.rows();
  const std::size_t dh = config.d_head;
  const std::size_t group = config.n_heads / config.n_kv_heads;
  Matrix q(k, config.q_width()), kk(k, config.kv_width());
  for (std::size_t p = 0; p < k; ++p) {
    matvec(layer.wq, x_seq.row(p), q.row(p));
    matvec(layer.wk, x_seq.row(p), kk.row(p));
    for (std::size_t h = 0; h < config.n_heads; ++h)
      apply_rope(q.row(p).subspan(h * dh, dh), p, config.rope_theta);
    for (std::size_t h = 0; h < config.n_kv_heads; ++h)
      apply_rope(kk.row(p).subspan(h * dh, dh), p, config.rope_theta);
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs;
  probs.reserve(config.n_heads);
  std::vector<double> scores(k);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const std::size_t kv = h / group;
    Matrix p_h(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = dot(q.row(i).subspan(h * dh, dh), kk.row(j).subspan(kv * dh, dh)) *
                    inv_sqrt;
        require(std::isfinite(scores[j]), ErrorCode::numeric,
                "attention: non-finite score");
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= i; ++j)
        p_h(i, j) = static_cast<float>(scores[j] / z);
    }
    probs.push_back(std::move(p_h));
  }
  return probs;
}

Matrix attention(const Matrix& x_seq, const LayerWeights& layer,
                 const ModelConfig& config, std::vector<Matrix>* probs_out) {
  auto probs = attention_probabilities(x_seq, layer, config);
  Matrix out = frozen_attention(x_seq, probs, layer.wv, layer.wo, config);
  if (probs_out) *probs_out = std::move(probs);
  return out;
}

}  // namespace loclin
