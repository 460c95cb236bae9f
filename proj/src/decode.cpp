#include "loclin/decode.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace loclin {

const char* to_string(Space s) {
  return s == Space::input_embedding ? "input-embedding" : "output-unembedding";
}

const char* to_string(Metric m) {
  switch (m) {
    case Metric::cosine: return "cosine";
    case Metric::dot: return "dot";
    case Metric::euclidean: return "euclidean";
  }
  return "unknown";
}

Metric metric_from_string(const std::string& name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "dot") return Metric::dot;
  if (name == "euclidean") return Metric::euclidean;
  fail(ErrorCode::usage, "unknown metric '" + name + "'");
}

std::vector<TokenScore> rank_scores(std::span<const double> scores, const ToyVocab& vocab,
                                    std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<TokenScore> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto id = static_cast<TokenId>(order[i]);
    out.push_back({id, vocab.text(id), scores[order[i]]});
  }
  return out;
}

namespace {

double row_dot(std::span<const float> row, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(row[i]) * v[i];
  return acc;
}

}  // namespace

TokenDecoding nearest_input_tokens(std::span<const double> v, const ModelBundle& bundle,
                                   const ToyVocab& vocab, std::size_t k, Metric metric,
                                   std::string source) {
  const Matrix& e = bundle.embedding;
  require(v.size() == e.cols(), ErrorCode::shape,
          "decode: vector length does not match d_model");
  const double vnorm = norm2(v);
  require(vnorm > 0.0 || metric != Metric::cosine, ErrorCode::undefined_result,
          "decode: zero vector has no direction");
  std::vector<double> scores(e.rows());
  for (std::size_t t = 0; t < e.rows(); ++t) {
    auto row = e.row(t);
    switch (metric) {
      case Metric::cosine: {
        const double rn = norm2(row);
        scores[t] = rn == 0.0 ? 0.0 : row_dot(row, v) / (rn * vnorm);
        break;
      }
      case Metric::dot:
        scores[t] = row_dot(row, v);
        break;
      case Metric::euclidean: {
        double d2 = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double diff = static_cast<double>(row[i]) - v[i];
          d2 += diff * diff;
        }
        scores[t] = -std::sqrt(d2);
        break;
      }
    }
  }
  return {rank_scores(scores, vocab, k), Space::input_embedding, std::move(source)};
}

TokenDecoding decode_output_direction(std::span<const double> v, const ModelBundle& bundle,
                                      const ToyVocab& vocab, std::size_t k,
                                      std::string source) {
  const Matrix& u = bundle.unembed();
  require(v.size() == u.cols(), ErrorCode::shape,
          "decode: vector length does not match d_model");
  std::vector<double> scores(u.rows());
  for (std::size_t t = 0; t < u.rows(); ++t) scores[t] = row_dot(u.row(t), v);
  return {rank_scores(scores, vocab, k), Space::output_unembedding, std::move(source)};
}

TokenDecoding decode_logit_lens(std::span<const double> v, const ModelBundle& bundle,
                                const ToyVocab& vocab, std::size_t k, std::string source) {
  require(v.size() == bundle.final_norm.size(), ErrorCode::shape,
          "decode: vector length does not match d_model");
  std::vector<double> scaled(v.begin(), v.end());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= bundle.final_norm[i];
  return decode_output_direction(scaled, bundle, vocab, k, std::move(source));
}

namespace {

std::vector<RankedVector> rank_by_norm(std::vector<std::vector<double>> vectors,
                                       std::size_t n, const std::string& kind,
                                       const std::function<TokenDecoding(
                                           std::span<const double>, std::string)>& decode) {
  std::vector<double> norms(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) norms[i] = norm2(vectors[i]);
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  n = std::min(n, order.size());
  std::vector<RankedVector> out;
  for (std::size_t r = 0; r < n; ++r) {
    RankedVector rv;
    rv.index = order[r];
    rv.norm = norms[rv.index];
    if (rv.norm == 0.0) {
      rv.zero_direction = true;
    } else {
      rv.decoding = decode(vectors[rv.index], kind + " " + std::to_string(rv.index));
    }
    out.push_back(std::move(rv));
  }
  return out;
}

}  // namespace

std::vector<RankedVector> top_rows_by_norm(const Matrix& j, std::size_t n,
                                           const ModelBundle& bundle, const ToyVocab& vocab,
                                           std::size_t k, Metric metric) {
  require(n <= j.rows(), ErrorCode::usage, "top_rows_by_norm: n exceeds row count");
  std::vector<std::vector<double>> rows(j.rows());
  for (std::size_t r = 0; r < j.rows(); ++r) rows[r].assign(j.row(r).begin(), j.row(r).end());
  return rank_by_norm(std::move(rows), n, "row",
                      [&](std::span<const double> v, std::string src) {
                        return nearest_input_tokens(v, bundle, vocab, k, metric,
                                                    std::move(src));
                      });
}

std::vector<RankedVector> top_cols_by_norm(const Matrix& j, std::size_t n,
                                           const ModelBundle& bundle, const ToyVocab& vocab,
                                           std::size_t k) {
  require(n <= j.cols(), ErrorCode::usage, "top_cols_by_norm: n exceeds column count");
  std::vector<std::vector<double>> cols(j.cols());
  for (std::size_t c = 0; c < j.cols(); ++c) {
    const auto col = j.column(c);
    cols[c].assign(col.begin(), col.end());
  }
  return rank_by_norm(std::move(cols), n, "col",
                      [&](std::span<const double> v, std::string src) {
                        return decode_output_direction(v, bundle, vocab, k, std::move(src));
                      });
}

std::vector<PanelDecoding> decode_svd_panels(const SvdSummary& s, const ModelBundle& bundle,
                                             const ToyVocab& vocab, std::size_t k,
                                             Metric metric) {
  std::vector<PanelDecoding> out;
  for (std::size_t c = 0; c < s.retained; ++c) {
    PanelDecoding p;
    p.index = c;
    p.singular_value = s.singular_values[c];
    std::vector<double> u = s.u_panel.column(c), v = s.v_panel.column(c);
    const std::string tag = s.source.empty() ? "" : s.source + " ";
    p.u_pos = decode_output_direction(u, bundle, vocab, k, tag + "U+" + std::to_string(c));
    p.v_pos = nearest_input_tokens(v, bundle, vocab, k, metric, tag + "V+" + std::to_string(c));
    for (double& x : u) x = -x;
    for (double& x : v) x = -x;
    p.u_neg = decode_output_direction(u, bundle, vocab, k, tag + "U-" + std::to_string(c));
    p.v_neg = nearest_input_tokens(v, bundle, vocab, k, metric, tag + "V-" + std::to_string(c));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace loclin
