#include "loclin/frozen.hpp"

#include <bit>
#include <cstring>

#include "loclin/decoder.hpp"

namespace loclin {

std::size_t FrozenState::entry_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += (l.attn_norm_divisor.empty() ? 0 : 1) + (l.mlp_norm_divisor.empty() ? 0 : 1) +
         (l.gate.empty() ? 0 : 1) + l.probs.size();
  }
  return n + (final_norm_divisor.empty() ? 0 : 1);
}

std::uint64_t embedding_hash(const EmbeddingSequence& x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ULL;
    }
  };
  mix(x.vectors.rows());
  mix(x.vectors.cols());
  for (float v : x.vectors.values()) mix(std::bit_cast<std::uint32_t>(v));
  return h;
}

CaptureResult capture_frozen(const ModelBundle& bundle, const EmbeddingSequence& x) {
  CaptureResult result;
  RunOptions opts;
  opts.record = &result.frozen;
  const Matrix out = run_decoder(bundle, x.vectors, opts);
  auto last = out.row(out.rows() - 1);
  result.output.y.assign(last.begin(), last.end());
  return result;
}

Vec frozen_rms_norm(std::span<const float> x, float divisor, std::span<const float> w) {
  require(x.size() == w.size(), ErrorCode::shape, "frozen_rms_norm: width mismatch");
  require(divisor > 0.0f, ErrorCode::numeric, "frozen_rms_norm: divisor must be > 0");
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(w[i]) *
                                static_cast<double>(x[i]) / divisor);
  return out;
}

Vec frozen_gated_mlp(std::span<const float> x, std::span<const float> gate,
                     const Matrix& w_up, const Matrix& w_down) {
  require(gate.size() == w_up.rows() && w_down.cols() == w_up.rows(), ErrorCode::shape,
          "gated mlp: hidden width mismatch");
  const Vec up = matvec(w_up, x);
  Vec hidden(up.size());
  for (std::size_t i = 0; i < up.size(); ++i)
    hidden[i] = static_cast<float>(static_cast<double>(gate[i]) *
                                   static_cast<double>(up[i]));
  return matvec(w_down, hidden);
}

Matrix frozen_attention(const Matrix& x_seq, const std::vector<Matrix>& probs,
                        const Matrix& wv, const Matrix& wo, const ModelConfig& config) {
  const std::size_t k = x_seq.rows();
  const std::size_t dh = config.d_head;
  require(probs.size() == config.n_heads, ErrorCode::shape,
          "attention: expected one probability matrix per head");
  for (const auto& p : probs)
    require(p.rows() == k && p.cols() == k, ErrorCode::shape,
            "attention: probability matrix does not match sequence length");
  const std::size_t group = config.n_heads / config.n_kv_heads;

  Matrix v(k, wv.rows());
  for (std::size_t p = 0; p < k; ++p) matvec(wv, x_seq.row(p), v.row(p));

  Matrix mixed(k, config.q_width());
  std::vector<double> acc(dh);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const std::size_t kv = h / group;
    for (std::size_t i = 0; i < k; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j <= i; ++j) {
        const double pij = probs[h](i, j);
        if (pij == 0.0) continue;
        auto vj = v.row(j).subspan(kv * dh, dh);
        for (std::size_t c = 0; c < dh; ++c) acc[c] += pij * vj[c];
      }
      auto dst = mixed.row(i).subspan(h * dh, dh);
      for (std::size_t c = 0; c < dh; ++c) dst[c] = static_cast<float>(acc[c]);
    }
  }

  Matrix out(k, wo.rows());
  for (std::size_t p = 0; p < k; ++p) matvec(wo, mixed.row(p), out.row(p));
  return out;
}

void check_frozen_shape(const ModelBundle& bundle, const FrozenState& frozen,
                        std::size_t seq_len) {
  const auto& cfg = bundle.config;
  auto stale = [](const std::string& why) {
    fail(ErrorCode::stale_frozen_state, "frozen state does not fit: " + why);
  };
  if (frozen.d_model != cfg.d_model) stale("d_model differs");
  if (frozen.seq_len != seq_len)
    stale("captured for length " + std::to_string(frozen.seq_len) + ", got " +
          std::to_string(seq_len));
  if (frozen.layers.size() != cfg.n_layers) stale("layer count differs");
  if (frozen.final_norm_divisor.size() != seq_len) stale("final norm missing");
  for (const auto& l : frozen.layers) {
    if (l.attn_norm_divisor.size() != seq_len || l.mlp_norm_divisor.size() != seq_len ||
        l.gate.rows() != seq_len || l.gate.cols() != cfg.d_ff ||
        l.probs.size() != cfg.n_heads)
      stale("layer entries have the wrong shape");
  }
}

OutputEmbedding frozen_forward(const ModelBundle& bundle, const FrozenState& frozen,
                               const EmbeddingSequence& x) {
  RunOptions opts;
  opts.frozen = &frozen;
  const Matrix out = run_decoder(bundle, x.vectors, opts);
  auto last = out.row(out.rows() - 1);
  return OutputEmbedding{Vec(last.begin(), last.end())};
}

}  // namespace loclin
