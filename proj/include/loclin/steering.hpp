#pragma once

#include <string>

#include "loclin/jacobian.hpp"

namespace loclin {

/// How positions of a new prompt pick a block of the steering Jacobian.
enum class Alignment {
  clamp_last,          // position i uses block min(i, k_steer)
  truncate,            // positions past the steer prompt contribute nothing
  last_position_only,  // only the last position is steered, with the last block
};

enum class SteerSchedule { every_step, first_step_only };

const char* to_string(Alignment a);
Alignment alignment_from_string(const std::string& name);
const char* to_string(SteerSchedule s);
SteerSchedule schedule_from_string(const std::string& name);

struct SteeringSpec {
  DetachedJacobian operator_;  // layer-out Jacobian of the steer prompt
  TokenSequence steer_prompt;
  std::size_t layer = 0;
  double lambda = 0.5;
  Alignment alignment = Alignment::clamp_last;
  SteerSchedule schedule = SteerSchedule::every_step;
};

SteeringSpec build_steering(const ModelBundle& bundle, const TokenSequence& steer_prompt,
                            std::size_t layer, double lambda = 0.5,
                            Alignment alignment = Alignment::clamp_last,
                            const JacobianOptions& options = {});

/// Steering term per position: row p is the sum over i <= p of
/// J_{align(i)} x_i, so the last row is the full operator applied to the
/// prompt. Rows that the alignment leaves unsteered are empty in `steered`.
struct SteeringTerm {
  Matrix term;
  std::vector<bool> steered;
};

SteeringTerm steering_term(const SteeringSpec& spec, const EmbeddingSequence& x);

/// lambda * f_L(x) + (1 - lambda) * term, applied in place to every steered row.
void blend_in_place(Matrix& activations, const SteeringTerm& term, double lambda);

/// Layer-L residual stream of the new prompt after blending, one row per
/// position.
Matrix apply_steering(const ModelBundle& bundle, const TokenSequence& new_prompt,
                      const SteeringSpec& spec);

struct SteeringTranscript {
  TokenSequence input;
  std::vector<TokenId> normal;
  std::vector<TokenId> steered;
};

/// Greedy generation with and without the blended layer-L activations fed
/// through the remaining layers.
SteeringTranscript generate_steered(const ModelBundle& bundle,
                                    const TokenSequence& new_prompt,
                                    const SteeringSpec& spec, std::size_t n_tokens);

std::vector<TokenId> generate_greedy(const ModelBundle& bundle, const TokenSequence& prompt,
                                     std::size_t n_tokens);

}  // namespace loclin
