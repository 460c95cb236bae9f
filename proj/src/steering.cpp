#include "loclin/steering.hpp"

#include <cmath>

namespace loclin {

const char* to_string(Alignment a) {
  switch (a) {
    case Alignment::clamp_last: return "clamp-last";
    case Alignment::truncate: return "truncate";
    case Alignment::last_position_only: return "last-position-only";
  }
  return "unknown";
}

Alignment alignment_from_string(const std::string& name) {
  if (name == "clamp-last") return Alignment::clamp_last;
  if (name == "truncate") return Alignment::truncate;
  if (name == "last-position-only") return Alignment::last_position_only;
  fail(ErrorCode::usage, "unknown alignment '" + name + "'");
}

const char* to_string(SteerSchedule s) {
  return s == SteerSchedule::every_step ? "every-step" : "first-step-only";
}

SteerSchedule schedule_from_string(const std::string& name) {
  if (name == "every-step") return SteerSchedule::every_step;
  if (name == "first-step-only") return SteerSchedule::first_step_only;
  fail(ErrorCode::usage, "unknown schedule '" + name + "'");
}

SteeringSpec build_steering(const ModelBundle& bundle, const TokenSequence& steer_prompt,
                            std::size_t layer, double lambda, Alignment alignment,
                            const JacobianOptions& options) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::usage, "lambda must lie in [0, 1]");
  SteeringSpec spec;
  spec.operator_ = layer_detached_jacobian(bundle, embed(bundle, steer_prompt), layer,
                                           TapPoint::layer_out, options);
  spec.steer_prompt = steer_prompt;
  spec.layer = layer;
  spec.lambda = lambda;
  spec.alignment = alignment;
  return spec;
}

SteeringTerm steering_term(const SteeringSpec& spec, const EmbeddingSequence& x) {
  const auto& blocks = spec.operator_.blocks;
  require(!blocks.empty(), ErrorCode::usage, "steering operator has no blocks");
  require(x.width() == blocks.front().cols(), ErrorCode::shape,
          "steering operator width does not match the prompt embeddings");
  const std::size_t n = x.length(), last_block = blocks.size() - 1;
  const std::size_t d = blocks.front().rows();
  SteeringTerm out{Matrix(n, d), std::vector<bool>(n, true)};

  std::vector<double> acc(d, 0.0);
  auto add_block = [&](std::size_t block, std::size_t pos) {
    const Matrix& j = blocks[block];
    for (std::size_t r = 0; r < d; ++r) acc[r] += dot(j.row(r), x.vectors.row(pos));
  };
  for (std::size_t p = 0; p < n; ++p) {
    switch (spec.alignment) {
      case Alignment::clamp_last:
        add_block(std::min(p, last_block), p);
        break;
      case Alignment::truncate:
        if (p <= last_block) add_block(p, p);
        break;
      case Alignment::last_position_only:
        out.steered[p] = p + 1 == n;
        if (out.steered[p]) add_block(last_block, p);
        break;
    }
    for (std::size_t r = 0; r < d; ++r) out.term(p, r) = static_cast<float>(acc[r]);
  }
  return out;
}

void blend_in_place(Matrix& activations, const SteeringTerm& term, double lambda) {
  require(activations.rows() == term.term.rows() && activations.cols() == term.term.cols(),
          ErrorCode::shape, "steering term does not match the activations");
  for (std::size_t p = 0; p < activations.rows(); ++p) {
    if (!term.steered[p]) continue;
    auto a = activations.row(p);
    auto t = term.term.row(p);
    for (std::size_t i = 0; i < a.size(); ++i)
      a[i] = static_cast<float>(lambda * a[i] + (1.0 - lambda) * t[i]);
  }
}

Matrix apply_steering(const ModelBundle& bundle, const TokenSequence& new_prompt,
                      const SteeringSpec& spec) {
  const auto x = embed(bundle, new_prompt);
  RunOptions opts;
  opts.stop = Tap{spec.layer, TapPoint::layer_out};
  Matrix act = run_decoder(bundle, x.vectors, opts);
  blend_in_place(act, steering_term(spec, x), spec.lambda);
  return act;
}

namespace {

TokenId argmax_token(const ModelBundle& bundle, const Matrix& out) {
  const auto z = logits(bundle, out.row(out.rows() - 1));
  std::size_t best = 0;
  for (std::size_t t = 1; t < z.size(); ++t)
    if (z[t] > z[best]) best = t;
  return static_cast<TokenId>(best);
}

}  // namespace

std::vector<TokenId> generate_greedy(const ModelBundle& bundle, const TokenSequence& prompt,
                                     std::size_t n_tokens) {
  require(n_tokens >= 1, ErrorCode::usage, "n_tokens must be at least 1");
  TokenSequence seq = prompt;
  std::vector<TokenId> out;
  for (std::size_t s = 0; s < n_tokens; ++s) {
    const TokenId next = greedy_next_token(bundle, seq);
    out.push_back(next);
    seq.ids.push_back(next);
  }
  return out;
}

SteeringTranscript generate_steered(const ModelBundle& bundle,
                                    const TokenSequence& new_prompt,
                                    const SteeringSpec& spec, std::size_t n_tokens) {
  require(n_tokens >= 1, ErrorCode::usage, "n_tokens must be at least 1");
  require(spec.layer < bundle.config.n_layers, ErrorCode::usage, "steering layer out of range");
  SteeringTranscript t;
  t.input = new_prompt;
  t.normal = generate_greedy(bundle, new_prompt, n_tokens);

  TokenSequence seq = new_prompt;
  for (std::size_t step = 0; step < n_tokens; ++step) {
    const auto x = embed(bundle, seq);
    RunOptions opts;
    SteeringTerm term;
    const bool steer = step == 0 || spec.schedule == SteerSchedule::every_step;
    if (steer) {
      term = steering_term(spec, x);
      opts.after_layer = [&](std::size_t layer, Matrix& h) {
        if (layer == spec.layer) blend_in_place(h, term, spec.lambda);
      };
    }
    const TokenId next = argmax_token(bundle, run_decoder(bundle, x.vectors, opts));
    t.steered.push_back(next);
    seq.ids.push_back(next);
  }
  return t;
}

}  // namespace loclin
