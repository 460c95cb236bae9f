#include "loclin/jacobian.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace loclin {

Target Target::at(std::size_t layer, TapPoint point) {
  switch (point) {
    case TapPoint::layer_out: return {TargetKind::layer_out, layer};
    case TapPoint::attn_out: return {TargetKind::attn_out, layer};
    case TapPoint::mlp_out: return {TargetKind::mlp_out, layer};
  }
  return {};
}

std::optional<Tap> Target::tap() const {
  switch (kind) {
    case TargetKind::final_output: return std::nullopt;
    case TargetKind::layer_out: return Tap{layer, TapPoint::layer_out};
    case TargetKind::attn_out: return Tap{layer, TapPoint::attn_out};
    case TargetKind::mlp_out: return Tap{layer, TapPoint::mlp_out};
  }
  return std::nullopt;
}

std::string Target::label() const {
  const auto t = tap();
  if (!t) return "final";
  return std::string(to_string(t->point)) + "@" + std::to_string(t->layer);
}

double relative_error(std::span<const float> estimate, std::span<const float> reference) {
  require(estimate.size() == reference.size(), ErrorCode::shape,
          "relative_error: length mismatch");
  std::vector<double> diff(estimate.size()), ref(reference.size());
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = static_cast<double>(estimate[i]) - static_cast<double>(reference[i]);
    ref[i] = reference[i];
  }
  const double num = population_std(diff);
  const double den = population_std(ref);
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

Vec evaluate_target(const ModelBundle& bundle, const EmbeddingSequence& x,
                    const Target& target, const FrozenState* frozen) {
  RunOptions opts;
  opts.frozen = frozen;
  opts.stop = target.tap();
  const Matrix out = run_decoder(bundle, x.vectors, opts);
  auto last = out.row(out.rows() - 1);
  return Vec(last.begin(), last.end());
}

std::vector<Matrix> probe_blocks(std::size_t seq_len, std::size_t d_in,
                                 std::size_t d_out, const LinearProbe& fn,
                                 const JacobianOptions& options) {
  const std::size_t total = seq_len * d_in;
  require(total <= options.max_probes, ErrorCode::resource,
          "Jacobian needs " + std::to_string(total) + " probes (sequence length " +
              std::to_string(seq_len) + " x width " + std::to_string(d_in) +
              "), above the budget of " + std::to_string(options.max_probes) +
              "; shorten the prompt or raise the probe budget");
  std::vector<std::size_t> order = options.probe_order;
  if (order.empty()) {
    order.resize(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
  } else {
    require(order.size() == total, ErrorCode::usage,
            "probe order must be a permutation of all probes");
    std::vector<bool> seen(total, false);
    for (auto idx : order) {
      require(idx < total && !seen[idx], ErrorCode::usage,
              "probe order must be a permutation of all probes");
      seen[idx] = true;
    }
  }

  std::vector<Matrix> blocks(seq_len, Matrix(d_out, d_in));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    Matrix input(seq_len, d_in);
    for (;;) {
      const std::size_t n = next.fetch_add(1);
      if (n >= total) return;
      const std::size_t idx = order[n];
      const std::size_t pos = idx / d_in, col = idx % d_in;
      try {
        input(pos, col) = 1.0f;
        const Vec out = fn(input);
        input(pos, col) = 0.0f;
        require(out.size() == d_out, ErrorCode::shape, "probe returned wrong width");
        // Each probe owns one column, so workers never write the same entry.
        for (std::size_t r = 0; r < d_out; ++r) blocks[pos](r, col) = out[r];
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(total);
        return;
      }
    }
  };

  const unsigned n_threads = std::max(1u, std::min<unsigned>(options.threads,
                                                             static_cast<unsigned>(total)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return blocks;
}

DetachedJacobian detached_jacobian(const ModelBundle& bundle, const EmbeddingSequence& x,
                                   const Target& target, const JacobianOptions& options) {
  DetachedJacobian j;
  j.target = target;
  j.anchor = x;
  j.frozen = capture_frozen(bundle, x).frozen;
  j.anchor_output = evaluate_target(bundle, x, target);
  const std::size_t d = bundle.config.d_model;
  const FrozenState& frozen = j.frozen;
  j.blocks = probe_blocks(
      x.length(), d, d,
      [&](const Matrix& input) {
        return evaluate_target(bundle, EmbeddingSequence{input}, target, &frozen);
      },
      options);
  return j;
}

DetachedJacobian layer_detached_jacobian(const ModelBundle& bundle,
                                         const EmbeddingSequence& x, std::size_t layer,
                                         TapPoint point, const JacobianOptions& options) {
  require(layer < bundle.config.n_layers, ErrorCode::usage,
          "layer " + std::to_string(layer) + " out of range [0, " +
              std::to_string(bundle.config.n_layers) + ")");
  return detached_jacobian(bundle, x, Target::at(layer, point), options);
}

StandardJacobian numeric_jacobian_fd(const ModelBundle& bundle, const EmbeddingSequence& x,
                                     double step, const Target& target,
                                     const JacobianOptions& options) {
  require(step > 0.0 && std::isfinite(step), ErrorCode::usage,
          "finite-difference step must be > 0");
  StandardJacobian j;
  j.target = target;
  j.anchor = x;
  j.step = step;
  const std::size_t d = bundle.config.d_model;
  // The probe receives a basis vector; turn it into +/- h perturbations of x.
  j.blocks = probe_blocks(
      x.length(), d, d,
      [&](const Matrix& basis) {
        EmbeddingSequence plus = x, minus = x;
        // Divide by the step float rounding actually produced.
        double span = 2.0 * step;
        for (std::size_t i = 0; i < basis.size(); ++i) {
          if (basis.values()[i] == 0.0f) continue;
          plus.vectors.values()[i] = static_cast<float>(x.vectors.values()[i] + step);
          minus.vectors.values()[i] = static_cast<float>(x.vectors.values()[i] - step);
          span = static_cast<double>(plus.vectors.values()[i]) - minus.vectors.values()[i];
        }
        const Vec fp = evaluate_target(bundle, plus, target);
        const Vec fm = evaluate_target(bundle, minus, target);
        Vec col(fp.size());
        for (std::size_t r = 0; r < col.size(); ++r) {
          col[r] = static_cast<float>((static_cast<double>(fp[r]) - fm[r]) / span);
          require(std::isfinite(col[r]), ErrorCode::numeric,
                  "non-finite finite-difference probe");
        }
        return col;
      },
      options);
  return j;
}

Vec apply_blocks(const std::vector<Matrix>& blocks, const EmbeddingSequence& x) {
  require(blocks.size() == x.length(), ErrorCode::shape,
          "Jacobian has " + std::to_string(blocks.size()) + " blocks but input has " +
              std::to_string(x.length()) + " positions");
  require(!blocks.empty(), ErrorCode::shape, "Jacobian has no blocks");
  const std::size_t rows = blocks.front().rows();
  std::vector<double> acc(rows, 0.0);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    require(blocks[i].cols() == x.width() && blocks[i].rows() == rows, ErrorCode::shape,
            "Jacobian block shape does not match input");
    for (std::size_t r = 0; r < rows; ++r) acc[r] += dot(blocks[i].row(r), x.vectors.row(i));
  }
  Vec out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = static_cast<float>(acc[r]);
  return out;
}

namespace {

Reconstruction reconstruct_blocks(const ModelBundle& bundle,
                                  const std::vector<Matrix>& blocks, const Target& target,
                                  const EmbeddingSequence& anchor,
                                  const EmbeddingSequence& x) {
  Reconstruction r;
  r.estimate = apply_blocks(blocks, x);
  r.reference = evaluate_target(bundle, x, target);
  r.rel_error = relative_error(r.estimate, r.reference);
  r.off_anchor = anchor.length() != x.length() || embedding_hash(anchor) != embedding_hash(x);
  return r;
}

}  // namespace

Reconstruction reconstruct(const ModelBundle& bundle, const DetachedJacobian& j,
                           const EmbeddingSequence& x) {
  return reconstruct_blocks(bundle, j.blocks, j.target, j.anchor, x);
}

Reconstruction reconstruct(const ModelBundle& bundle, const StandardJacobian& j,
                           const EmbeddingSequence& x) {
  return reconstruct_blocks(bundle, j.blocks, j.target, j.anchor, x);
}

Matrix frozen_layer_block(const ModelBundle& bundle, const FrozenState& frozen,
                          std::size_t layer, const JacobianOptions& options) {
  require(layer < bundle.config.n_layers, ErrorCode::usage, "layer out of range");
  const std::size_t d = bundle.config.d_model;
  const std::size_t k = frozen.seq_len;
  RunOptions opts;
  opts.frozen = &frozen;
  opts.start_layer = layer;
  opts.stop = Tap{layer, TapPoint::layer_out};
  // Probe only the last position; the other rows of the input stay zero.
  auto blocks = probe_blocks(
      1, d, d,
      [&](const Matrix& basis) {
        Matrix input(k, d);
        std::copy(basis.row(0).begin(), basis.row(0).end(), input.row(k - 1).begin());
        const Matrix out = run_decoder(bundle, input, opts);
        auto last = out.row(k - 1);
        return Vec(last.begin(), last.end());
      },
      options);
  return std::move(blocks.front());
}

namespace {

void require_single_token(const EmbeddingSequence& x) {
  require(x.length() == 1, ErrorCode::unsupported_input,
          "per-layer transforms are defined for single-token inputs only; a sequence "
          "of length " +
              std::to_string(x.length()) +
              " has cross-token terms that a product of per-layer matrices omits");
}

}  // namespace

LayerTransform per_layer_transform(const ModelBundle& bundle, const EmbeddingSequence& x,
                                   std::size_t layer, const JacobianOptions& options) {
  require_single_token(x);
  require(layer < bundle.config.n_layers, ErrorCode::usage, "layer out of range");
  LayerTransform t;
  t.layer = layer;
  const auto j = layer_detached_jacobian(bundle, x, layer, TapPoint::layer_out, options);
  t.per_layer = frozen_layer_block(bundle, j.frozen, layer, options);
  t.cumulative = j.blocks.front();
  return t;
}

LayerFactorization layer_factorization(const ModelBundle& bundle,
                                       const EmbeddingSequence& x,
                                       const JacobianOptions& options) {
  require_single_token(x);
  const std::size_t n = bundle.config.n_layers;
  require(n > 0, ErrorCode::usage, "model has no layers to factor");
  LayerFactorization f;
  const auto frozen = capture_frozen(bundle, x).frozen;
  for (std::size_t l = 0; l < n; ++l)
    f.per_layer.push_back(frozen_layer_block(bundle, frozen, l, options));
  f.cumulative =
      layer_detached_jacobian(bundle, x, n - 1, TapPoint::layer_out, options).blocks.front();
  f.product = to_double(f.per_layer.front());
  for (std::size_t l = 1; l < n; ++l) f.product = matmul(to_double(f.per_layer[l]), f.product);
  DMatrix diff = to_double(f.cumulative);
  const double denom = frobenius(diff);
  for (std::size_t i = 0; i < diff.size(); ++i) diff.values()[i] -= f.product.values()[i];
  f.rel_frobenius = denom == 0.0 ? frobenius(diff) : frobenius(diff) / denom;
  return f;
}

}  // namespace loclin
