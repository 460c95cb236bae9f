#pragma once

#include <optional>
#include <string>

#include "loclin/decode.hpp"
#include "loclin/steering.hpp"

namespace loclin {

// Reports are JSON documents. Every report carries "command", a "summary"
// object of scalars and a "table" {columns, rows} that front ends can render
// as CSV or Markdown without knowing the report type. Some add "grids", extra
// {title, columns, rows} tables meant for Markdown.

struct ReportOptions {
  std::size_t top_k = 5;
  std::size_t retain = 8;     // singular directions decoded per block
  std::size_t n_vectors = 3;  // rows / columns decoded per block
  double fd_step = 1e-3;
  Metric metric = Metric::cosine;
  std::optional<std::size_t> layer;  // restricts layers / selects the svd target
  JacobianOptions jacobian;
};

std::string verify_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options);

std::string svd_report(const ModelBundle& bundle, const ToyVocab& vocab,
                       const TokenSequence& tokens, const ReportOptions& options);

std::string layers_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options);

std::string decode_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options);

struct SteerRequest {
  TokenSequence steer_prompt;
  std::vector<TokenSequence> inputs;
  std::size_t layer = 0;
  double lambda = 0.5;
  std::size_t n_tokens = 8;
  Alignment alignment = Alignment::clamp_last;
  SteerSchedule schedule = SteerSchedule::every_step;
};

std::string steer_report(const ModelBundle& bundle, const ToyVocab& vocab,
                         const SteerRequest& request, const ReportOptions& options);

}  // namespace loclin
