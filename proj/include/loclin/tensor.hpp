#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "loclin/error.hpp"

namespace loclin {

using Vec = std::vector<float>;

/// Dense row-major matrix. Used for weights (float), analysis results
/// (double) and sequences of vectors (one row per position).
template <class T>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T> column(std::size_t c) const {
    std::vector<T> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using DMatrix = BasicMatrix<double>;

// All reductions accumulate in double and round once at the end.

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);

/// out = W x, with W of shape (out.size() x x.size()).
void matvec(const Matrix& w, std::span<const float> x, std::span<float> out);
Vec matvec(const Matrix& w, std::span<const float> x);

double mean_square(std::span<const float> x);
double norm2(std::span<const float> x);
double norm2(std::span<const double> x);

/// Population standard deviation over the entries.
double population_std(std::span<const double> x);

DMatrix to_double(const Matrix& m);
DMatrix matmul(const DMatrix& a, const DMatrix& b);
DMatrix transpose(const DMatrix& a);
double frobenius(const DMatrix& a);

bool all_finite(std::span<const float> x);

}  // namespace loclin
