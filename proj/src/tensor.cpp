#include "loclin/tensor.hpp"

#include <cmath>

namespace loclin {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::config: return "config";
    case ErrorCode::invalid_token: return "invalid-token";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::stale_frozen_state: return "stale-frozen-state";
    case ErrorCode::resource: return "resource";
    case ErrorCode::unsupported_input: return "unsupported-input";
    case ErrorCode::undefined_result: return "undefined-result";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
  }
  return "unknown";
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void matvec(const Matrix& w, std::span<const float> x, std::span<float> out) {
  require(w.cols() == x.size() && w.rows() == out.size(), ErrorCode::shape,
          "matvec: shape mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r)
    out[r] = static_cast<float>(dot(w.row(r), x));
}

Vec matvec(const Matrix& w, std::span<const float> x) {
  Vec out(w.rows());
  matvec(w, x, out);
  return out;
}

double mean_square(std::span<const float> x) {
  if (x.empty()) return 0.0;
  return dot(x, x) / static_cast<double>(x.size());
}

double norm2(std::span<const float> x) { return std::sqrt(dot(x, x)); }
double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double population_std(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(x.size()));
}

DMatrix to_double(const Matrix& m) {
  DMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = m.values()[i];
  return out;
}

DMatrix matmul(const DMatrix& a, const DMatrix& b) {
  require(a.cols() == b.rows(), ErrorCode::shape, "matmul: shape mismatch");
  DMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

DMatrix transpose(const DMatrix& a) {
  DMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

double frobenius(const DMatrix& a) { return norm2(std::span(a.values())); }

bool all_finite(std::span<const float> x) {
  for (float v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace loclin
