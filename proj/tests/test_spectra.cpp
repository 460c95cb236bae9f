#include <gtest/gtest.h>

#include <Eigen/SVD>

#include "loclin/spectra.hpp"
#include "support.hpp"

namespace loclin {
namespace {

using test::code_of;

DMatrix random_dmatrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  DMatrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

Eigen::MatrixXd to_eigen(const DMatrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

double max_offdiag_gram_error(const DMatrix& panel) {
  double worst = 0.0;
  for (std::size_t a = 0; a < panel.cols(); ++a)
    for (std::size_t b = 0; b < panel.cols(); ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < panel.rows(); ++i) acc += panel(i, a) * panel(i, b);
      worst = std::max(worst, std::abs(acc - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

double reconstruction_error(const DMatrix& m, const SvdSummary& s) {
  double num = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s.retained; ++i)
        acc += s.u_panel(r, i) * s.singular_values[i] * s.v_panel(c, i);
      num += (acc - m(r, c)) * (acc - m(r, c));
    }
  return std::sqrt(num) / frobenius(m);
}

TEST(Svd, DiagonalMatrix) {
  DMatrix m(3, 3);
  m(0, 0) = 3;
  m(1, 1) = 2;
  m(2, 2) = 1;
  const auto s = svd(m, 3);
  ASSERT_EQ(s.singular_values.size(), 3u);
  EXPECT_NEAR(s.singular_values[0], 3.0, 1e-12);
  EXPECT_NEAR(s.singular_values[1], 2.0, 1e-12);
  EXPECT_NEAR(s.singular_values[2], 1.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(s.u_panel(i, i), 1.0, 1e-12);
    EXPECT_NEAR(s.v_panel(i, i), 1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(stable_rank(s.singular_values), 14.0 / 9.0);
}

TEST(Svd, IdentityHasFullStableRank) {
  DMatrix m(5, 5);
  for (std::size_t i = 0; i < 5; ++i) m(i, i) = 1.0;
  const auto s = svd(m, 5);
  for (double v : s.singular_values) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_NEAR(stable_rank(s.singular_values), 5.0, 1e-12);
}

TEST(Svd, MatchesEigenOnRandomSquare) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = random_dmatrix(rng, 32, 32);
    const auto s = svd(m, 32);
    const Eigen::VectorXd expected = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(m)).singularValues();
    for (std::size_t i = 0; i < 32; ++i)
      EXPECT_LE(std::abs(s.singular_values[i] - expected(i)), 1e-8 * expected(0));
    EXPECT_LE(max_offdiag_gram_error(s.u_panel), 1e-5);
    EXPECT_LE(max_offdiag_gram_error(s.v_panel), 1e-5);
    EXPECT_LE(reconstruction_error(m, s), 1e-5);
  }
}

TEST(Svd, RectangularShapes) {
  std::mt19937_64 rng(12);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{7, 4}, {4, 9}}) {
    const auto m = random_dmatrix(rng, r, c);
    const std::size_t n = std::min(r, c);
    const auto s = svd(m, n);
    ASSERT_EQ(s.singular_values.size(), n);
    EXPECT_EQ(s.u_panel.rows(), r);
    EXPECT_EQ(s.v_panel.rows(), c);
    const Eigen::VectorXd expected = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(m)).singularValues();
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(s.singular_values[i], expected(i), 1e-10);
    EXPECT_LE(reconstruction_error(m, s), 1e-8);
  }
}

TEST(Svd, DescendingAndSignConvention) {
  std::mt19937_64 rng(13);
  const auto s = svd(random_dmatrix(rng, 10, 10), 10);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_GE(s.singular_values[i - 1], s.singular_values[i]);
  for (std::size_t c = 0; c < 10; ++c) {
    std::size_t best = 0;
    for (std::size_t r = 0; r < 10; ++r)
      if (std::abs(s.u_panel(r, c)) > std::abs(s.u_panel(best, c))) best = r;
    EXPECT_GT(s.u_panel(best, c), 0.0);
  }
}

TEST(Svd, RankDeficientReportsExactZeros) {
  std::mt19937_64 rng(14);
  const auto a = random_dmatrix(rng, 8, 2), b = random_dmatrix(rng, 2, 8);
  const auto m = matmul(a, b);
  const auto s = svd(m, 8);
  EXPECT_GT(s.singular_values[1], 0.0);
  for (std::size_t i = 2; i < 8; ++i) EXPECT_EQ(s.singular_values[i], 0.0);
  EXPECT_LE(max_offdiag_gram_error(s.u_panel), 1e-8);
  EXPECT_LE(max_offdiag_gram_error(s.v_panel), 1e-8);
  EXPECT_LE(stable_rank(s.singular_values), 2.0 + 1e-9);
}

TEST(Svd, RetainRangeAndBadInput) {
  DMatrix m(3, 2, 1.0);
  EXPECT_EQ(code_of([&] { svd(m, 0); }), ErrorCode::usage);
  EXPECT_EQ(code_of([&] { svd(m, 3); }), ErrorCode::usage);
  EXPECT_EQ(code_of([&] { svd(DMatrix{}, 1); }), ErrorCode::shape);
  m(0, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { svd(m, 1); }), ErrorCode::numeric);
  const auto s = svd(DMatrix(3, 2, 1.0), 1);
  EXPECT_EQ(s.retained, 1u);
  EXPECT_EQ(s.u_panel.cols(), 1u);
  EXPECT_EQ(s.singular_values.size(), 2u);
}

TEST(Svd, FloatOverloadAgrees) {
  std::mt19937_64 rng(15);
  const Matrix m = test::random_matrix(rng, 6, 6);
  const auto a = svd(m, 3), b = svd(to_double(m), 3);
  EXPECT_EQ(a.singular_values, b.singular_values);
}

TEST(StableRank, ExactCases) {
  EXPECT_DOUBLE_EQ(stable_rank(std::vector<double>{1, 1, 1}), 3.0);
  EXPECT_DOUBLE_EQ(stable_rank(std::vector<double>{1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(stable_rank(std::vector<double>{2, 1}), 1.25);
  EXPECT_DOUBLE_EQ(stable_rank(std::vector<double>{1, 2}), 1.25);
}

TEST(StableRank, UndefinedAndInvalid) {
  EXPECT_EQ(code_of([] { stable_rank(std::vector<double>{0, 0}); }), ErrorCode::undefined_result);
  EXPECT_EQ(code_of([] { stable_rank(std::vector<double>{}); }), ErrorCode::undefined_result);
  EXPECT_EQ(code_of([] { stable_rank(std::vector<double>{1, -1}); }), ErrorCode::usage);
}

TEST(StableRank, ScaleInvariantAndBounded) {
  std::mt19937_64 rng(16);
  const auto s = svd(random_dmatrix(rng, 12, 12), 12).singular_values;
  const double r = stable_rank(s);
  for (double alpha : {3.0, 0.25, 1e4}) {
    std::vector<double> scaled(s);
    for (double& v : scaled) v *= alpha;
    EXPECT_NEAR(stable_rank(scaled), r, 1e-12 * r);
  }
  EXPECT_GE(r, 1.0);
  EXPECT_LE(r, 12.0);
  for (std::size_t rank = 1; rank <= 4; ++rank) {
    const auto m = matmul(random_dmatrix(rng, 12, rank), random_dmatrix(rng, rank, 12));
    EXPECT_LE(stable_rank(svd(m, 1).singular_values), static_cast<double>(rank) + 1e-9);
  }
}

TEST(Normalization, ByMaxAndFrobenius) {
  const std::vector<double> s{4, 3, 0};
  EXPECT_EQ(normalized_by_max(s), (std::vector<double>{1.0, 0.75, 0.0}));
  EXPECT_EQ(normalized_by_frobenius(s), (std::vector<double>{0.8, 0.6, 0.0}));
  EXPECT_EQ(normalized_by_max(std::vector<double>{0, 0}), (std::vector<double>{0, 0}));
}

TEST(ProjectOntoFinal, KnownPanels) {
  DMatrix a(3, 2), b(3, 2);
  a(0, 0) = 1;
  a(1, 1) = 1;
  b(0, 0) = -1;
  b(2, 1) = 1;
  auto p = project_onto_final(a, b);
  EXPECT_EQ(p[0][0], 1.0);
  EXPECT_EQ(p[0][1], 0.0);
  EXPECT_EQ(p[1][0], 0.0);
  EXPECT_EQ(p[1][1], 0.0);
  p = project_onto_final(a, a);
  EXPECT_EQ(p[0][0], 1.0);
  EXPECT_EQ(p[1][1], 1.0);

  std::mt19937_64 rng(17);
  const auto u1 = svd(random_dmatrix(rng, 9, 9), 3).u_panel;
  const auto u2 = svd(random_dmatrix(rng, 9, 9), 3).u_panel;
  for (const auto& row : project_onto_final(u1, u2))
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-9);
    }
  EXPECT_EQ(code_of([&] { project_onto_final(DMatrix(4, 2), DMatrix(3, 2)); }), ErrorCode::shape);
  EXPECT_EQ(code_of([&] { project_onto_final(DMatrix(3, 1), DMatrix(3, 2)); }), ErrorCode::usage);
}

ModelBundle zero_branch_model() {
  auto b = test::random_model(3, 32, 3);
  for (auto& l : b.layers) {
    std::fill(l.wo.values().begin(), l.wo.values().end(), 0.0f);
    std::fill(l.w_down.values().begin(), l.w_down.values().end(), 0.0f);
  }
  return b;
}

TEST(SpectrumProfile, ZeroBranchesKeepCumulativeRankConstant) {
  const auto b = zero_branch_model();
  ProfileOptions opts;
  opts.points = {TapPoint::layer_out, TapPoint::attn_out, TapPoint::mlp_out};
  const auto report = spectrum_profile(b, embed(b, {{3, 7}}), opts);
  for (const auto& p : report.points) {
    if (p.point == TapPoint::layer_out && p.series == Series::cumulative) {
      if (p.position == 1) {
        EXPECT_NEAR(p.stable_rank, 32.0, 1e-9);
      } else {
        EXPECT_TRUE(p.zero_map);
      }
    }
    if (p.point != TapPoint::layer_out) {
      EXPECT_TRUE(p.zero_map);
      EXPECT_EQ(p.stable_rank, 1.0);
    }
    if (p.point == TapPoint::layer_out && p.series == Series::per_layer) {
      EXPECT_NEAR(p.stable_rank, 32.0, 1e-9);
    }
  }
}

TEST(SpectrumProfile, CoversEveryLayerPointAndSeries) {
  const auto b = test::random_model(5, 32, 3);
  ProfileOptions opts;
  opts.points = {TapPoint::layer_out, TapPoint::mlp_out};
  const auto report = spectrum_profile(b, embed(b, {{1, 2, 3}}), opts);
  // cumulative: 3 positions; per-layer: 1 block
  EXPECT_EQ(report.points.size(), 3u * 2u * (3u + 1u));
  for (const auto& p : report.points) {
    EXPECT_GE(p.stable_rank, 1.0);
    EXPECT_LE(p.stable_rank, 32.0 + 1e-9);
    EXPECT_EQ(p.singular_values.size(), 32u);
  }
}

TEST(SpectrumProfile, MatchesDirectComputation) {
  const auto b = test::random_model(6, 32, 2);
  const auto x = embed(b, {{9, 4}});
  const auto report = spectrum_profile(b, x);
  const auto j = layer_detached_jacobian(b, x, 1, TapPoint::layer_out);
  const auto expected = stable_rank(svd(j.blocks[1], 1).singular_values);
  bool found = false;
  for (const auto& p : report.points)
    if (p.layer == 1 && p.series == Series::cumulative && p.position == 1) {
      EXPECT_DOUBLE_EQ(p.stable_rank, expected);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(FrozenBranchBlock, LayerOutIsIdentityPlusBranches) {
  const auto b = test::random_model(7, 32, 2);
  const auto x = embed(b, {{5}});
  const auto f = capture_frozen(b, x).frozen;
  const Matrix whole = frozen_branch_block(b, f, 0, TapPoint::layer_out);
  EXPECT_EQ(whole, frozen_layer_block(b, f, 0));
  const Matrix attn = frozen_branch_block(b, f, 0, TapPoint::attn_out);
  EXPECT_EQ(attn.rows(), 32u);
  EXPECT_EQ(code_of([&] { frozen_branch_block(b, f, 2, TapPoint::attn_out); }), ErrorCode::usage);
}

}  // namespace
}  // namespace loclin
