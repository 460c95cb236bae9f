#include "loclin/decoder.hpp"

#include <cmath>

namespace loclin {

const char* to_string(TapPoint p) {
  switch (p) {
    case TapPoint::layer_out: return "layer-out";
    case TapPoint::attn_out: return "attn-out";
    case TapPoint::mlp_out: return "mlp-out";
  }
  return "unknown";
}

TapPoint tap_point_from_string(const std::string& name) {
  if (name == "layer-out") return TapPoint::layer_out;
  if (name == "attn-out") return TapPoint::attn_out;
  if (name == "mlp-out") return TapPoint::mlp_out;
  fail(ErrorCode::usage, "unknown tap point '" + name + "'");
}

namespace {

float norm_divisor(const Matrix& h, std::size_t p, double eps, const float* frozen,
                   Vec* record) {
  float divisor;
  if (frozen) {
    divisor = *frozen;
  } else {
    divisor = rms_divisor(h.row(p), eps);
    require(divisor > 0.0f && std::isfinite(divisor), ErrorCode::numeric,
            "rms_norm: divisor is zero or non-finite");
  }
  if (record) (*record)[p] = divisor;
  return divisor;
}

void add_into(Matrix& h, const Matrix& delta) {
  auto& hv = h.values();
  const auto& dv = delta.values();
  for (std::size_t i = 0; i < hv.size(); ++i) hv[i] += dv[i];
}

}  // namespace

Matrix run_decoder(const ModelBundle& bundle, const Matrix& input,
                   const RunOptions& options) {
  const auto& cfg = bundle.config;
  const std::size_t k = input.rows();
  const std::size_t d = cfg.d_model;
  require(k > 0, ErrorCode::shape, "empty input sequence");
  require(input.cols() == d, ErrorCode::shape,
          "input width " + std::to_string(input.cols()) + " does not match d_model " +
              std::to_string(d));
  require(bundle.layers.size() == cfg.n_layers, ErrorCode::config,
          "bundle layer count does not match config");
  require(options.start_layer <= cfg.n_layers, ErrorCode::usage,
          "start layer out of range");
  if (options.stop) {
    require(options.stop->layer >= options.start_layer &&
                options.stop->layer < cfg.n_layers,
            ErrorCode::usage,
            "layer " + std::to_string(options.stop->layer) + " out of range");
  }

  const FrozenState* frozen = options.frozen;
  if (frozen) check_frozen_shape(bundle, *frozen, k);
  FrozenState* rec = options.record;
  if (rec) {
    rec->seq_len = k;
    rec->d_model = d;
    rec->anchor_hash = embedding_hash(EmbeddingSequence{input});
    rec->layers.assign(cfg.n_layers, FrozenLayer{});
    rec->final_norm_divisor.clear();
  }

  Matrix h = input;
  Matrix normed(k, d);
  for (std::size_t li = options.start_layer; li < cfg.n_layers; ++li) {
    const LayerWeights& lw = bundle.layers[li];
    const FrozenLayer* fl = frozen ? &frozen->layers[li] : nullptr;
    FrozenLayer* rl = rec ? &rec->layers[li] : nullptr;
    const bool stop_here = options.stop && options.stop->layer == li;

    if (rl) rl->attn_norm_divisor.assign(k, 0.0f);
    for (std::size_t p = 0; p < k; ++p) {
      const float div =
          norm_divisor(h, p, cfg.norm_eps, fl ? &fl->attn_norm_divisor[p] : nullptr,
                       rl ? &rl->attn_norm_divisor : nullptr);
      const Vec n = frozen_rms_norm(h.row(p), div, lw.attn_norm);
      std::copy(n.begin(), n.end(), normed.row(p).begin());
    }
    Matrix attn = fl ? frozen_attention(normed, fl->probs, lw.wv, lw.wo, cfg)
                     : attention(normed, lw, cfg, rl ? &rl->probs : nullptr);
    if (stop_here && options.stop->point == TapPoint::attn_out) return attn;
    add_into(h, attn);

    if (rl) {
      rl->mlp_norm_divisor.assign(k, 0.0f);
      rl->gate = Matrix(k, cfg.d_ff);
    }
    Matrix mlp(k, d);
    Vec gate(cfg.d_ff);
    for (std::size_t p = 0; p < k; ++p) {
      const float div =
          norm_divisor(h, p, cfg.norm_eps, fl ? &fl->mlp_norm_divisor[p] : nullptr,
                       rl ? &rl->mlp_norm_divisor : nullptr);
      const Vec n = frozen_rms_norm(h.row(p), div, lw.mlp_norm);
      if (fl) {
        auto g = fl->gate.row(p);
        gate.assign(g.begin(), g.end());
      } else {
        const Vec pre = matvec(lw.w_gate, n);
        for (std::size_t j = 0; j < cfg.d_ff; ++j)
          gate[j] = static_cast<float>(gate_activation(pre[j], cfg.activation));
        if (rl) std::copy(gate.begin(), gate.end(), rl->gate.row(p).begin());
      }
      const Vec out = frozen_gated_mlp(n, gate, lw.w_up, lw.w_down);
      std::copy(out.begin(), out.end(), mlp.row(p).begin());
    }
    if (stop_here && options.stop->point == TapPoint::mlp_out) return mlp;
    add_into(h, mlp);

    require(all_finite(h.values()), ErrorCode::numeric,
            "non-finite activation after layer " + std::to_string(li));
    if (options.after_layer) options.after_layer(li, h);
    if (stop_here) return h;
  }

  Matrix out(k, d);
  if (rec) rec->final_norm_divisor.assign(k, 0.0f);
  for (std::size_t p = 0; p < k; ++p) {
    const float div = norm_divisor(
        h, p, cfg.norm_eps, frozen ? &frozen->final_norm_divisor[p] : nullptr,
        rec ? &rec->final_norm_divisor : nullptr);
    const Vec n = frozen_rms_norm(h.row(p), div, bundle.final_norm);
    std::copy(n.begin(), n.end(), out.row(p).begin());
  }
  require(all_finite(out.values()), ErrorCode::numeric, "non-finite output");
  return out;
}

}  // namespace loclin
