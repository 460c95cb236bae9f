#include <gtest/gtest.h>

#include <numeric>

#include "loclin/jacobian.hpp"
#include "support.hpp"

namespace loclin {
namespace {

using test::max_abs;
using test::max_abs_diff;

ModelBundle zero_branch_model(std::uint64_t seed, std::size_t layers = 2) {
  auto b = test::random_model(seed, 32, layers);
  for (auto& l : b.layers)
    for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down})
      std::fill(m->values().begin(), m->values().end(), 0.0f);
  return b;
}

void zero_layer(ModelBundle& b, std::size_t layer) {
  auto& l = b.layers[layer];
  for (Matrix* m : {&l.wo, &l.w_down}) std::fill(m->values().begin(), m->values().end(), 0.0f);
}

TEST(ProbeBlocks, LinearMapIsRecoveredExactly) {
  std::mt19937_64 rng(1);
  const Matrix w = test::random_matrix(rng, 6, 6);
  const auto blocks = probe_blocks(1, 6, 6, [&](const Matrix& in) { return matvec(w, in.row(0)); }, {});
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0], w);
}

TEST(ProbeBlocks, BudgetIsEnforcedWithAdvice) {
  const auto b = test::random_model(1);
  JacobianOptions o;
  o.max_probes = 63;
  try {
    detached_jacobian(b, embed(b, {{1, 2}}), Target::final_output(), o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::resource);
    EXPECT_NE(std::string(e.what()).find("budget"), std::string::npos);
  }
}

TEST(ProbeBlocks, OrderAndThreadsDoNotChangeResult) {
  const auto b = test::random_model(2);
  const auto x = embed(b, {{1, 2, 3}});
  const auto base = detached_jacobian(b, x);
  JacobianOptions o;
  o.probe_order.resize(3 * 32);
  std::iota(o.probe_order.begin(), o.probe_order.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(o.probe_order.begin(), o.probe_order.end(), rng);
  EXPECT_EQ(detached_jacobian(b, x, Target::final_output(), o).blocks, base.blocks);
  o.threads = 3;
  EXPECT_EQ(detached_jacobian(b, x, Target::final_output(), o).blocks, base.blocks);
  o.probe_order.pop_back();
  EXPECT_THROW(detached_jacobian(b, x, Target::final_output(), o), Error);
}

TEST(Detached, ZeroBranchSingleTokenIsScaledDiagonal) {
  const auto b = zero_branch_model(4);
  const auto x = embed(b, {{9}});
  const auto j = detached_jacobian(b, x);
  const float div = rms_divisor(x.vectors.row(0), b.config.norm_eps);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c)
      EXPECT_FLOAT_EQ(j.blocks[0](r, c), r == c ? b.final_norm[r] / div : 0.0f);
}

TEST(Detached, ShapeContract) {
  const auto b = test::random_model(5);
  const auto j = detached_jacobian(b, embed(b, {{1, 2, 3, 4}}));
  ASSERT_EQ(j.blocks.size(), 4u);
  for (const auto& m : j.blocks) {
    EXPECT_EQ(m.rows(), 32u);
    EXPECT_EQ(m.cols(), 32u);
  }
  EXPECT_EQ(j.frozen.seq_len, 4u);
}

TEST(Detached, MatchesFiniteDifferencesOfFrozenReplay) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto b = test::random_model(seed, 32, 2 + seed % 2);
    const auto x = embed(b, test::random_tokens(rng, 1 + seed, 64));
    const auto j = detached_jacobian(b, x);
    const auto fd = test::frozen_fd_blocks(b, j.frozen, x, 0.1);
    for (std::size_t p = 0; p < fd.size(); ++p) {
      EXPECT_LE(max_abs_diff(j.blocks[p].values(), fd[p].values()), 1e-4);
      EXPECT_LE(max_abs_diff(j.blocks[p].values(), fd[p].values()),
                1e-4 * std::max(1.0, max_abs(j.blocks[p].values())));
    }
  }
}

TEST(Reconstruct, DetachedIsExactAtAnchor) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto b = test::random_model(seed, seed % 2 ? 64 : 32, 2 + seed % 3,
                                      seed % 3 == 2 ? Activation::geglu : Activation::swiglu);
    const auto x = embed(b, test::random_tokens(rng, 1 + seed, 64));
    const auto r = reconstruct(b, detached_jacobian(b, x), x);
    EXPECT_LE(r.rel_error, 1e-5);
    EXPECT_FALSE(r.off_anchor);
    EXPECT_EQ(r.reference, forward(b, x).y);
  }
}

TEST(Reconstruct, StandardJacobianIsFarWorse) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto b = test::random_model(seed);
    const auto x = embed(b, test::random_tokens(rng, 3, 64));
    const auto rd = reconstruct(b, detached_jacobian(b, x), x);
    const auto rs = reconstruct(b, numeric_jacobian_fd(b, x), x);
    EXPECT_GE(rs.rel_error, 10 * rd.rel_error);
  }
}

TEST(Reconstruct, OffAnchorIsFlagged) {
  const auto b = test::random_model(9);
  const auto j = detached_jacobian(b, embed(b, {{1, 2}}));
  const auto r = reconstruct(b, j, embed(b, {{3, 4}}));
  EXPECT_TRUE(r.off_anchor);
  EXPECT_GT(r.rel_error, 1e-3);
  EXPECT_THROW(reconstruct(b, j, embed(b, {{3, 4, 5}})), Error);
}

TEST(RelativeError, PopulationStdRatio) {
  // std of (1,-1,1,-1) residual is 1; std of (2,0,2,0) is 1.
  EXPECT_DOUBLE_EQ(relative_error(Vec{3, -1, 3, -1}, Vec{2, 0, 2, 0}), 1.0);
  EXPECT_DOUBLE_EQ(relative_error(Vec{2, 0, 2, 0}, Vec{2, 0, 2, 0}), 0.0);
}

TEST(NumericFd, FrozenReplayFdAgreesWithProbing) {
  // FD over the frozen replay is exact up to rounding, so a larger step is
  // used to keep float32 cancellation out of the comparison.
  const auto b = test::random_model(10);
  const auto x = embed(b, {{5, 6}});
  const auto j = detached_jacobian(b, x);
  const auto fd = test::frozen_fd_blocks(b, j.frozen, x, 0.5);
  for (std::size_t p = 0; p < 2; ++p)
    EXPECT_LE(max_abs_diff(j.blocks[p].values(), fd[p].values()), 1e-5);
}

TEST(NumericFd, ErrorShrinksWithStep) {
  // A model and prompt whose curvature sits well above the float32 noise
  // floor (~1e-4 max-abs at h = 5e-3); on flatter anchors rounding hides the
  // trend.
  const auto b = test::random_model(4);
  const auto x = embed(b, {{5, 6}});
  auto diff = [&](double h1, double h2) {
    const auto a = numeric_jacobian_fd(b, x, h1), c = numeric_jacobian_fd(b, x, h2);
    double m = 0.0;
    for (std::size_t p = 0; p < a.blocks.size(); ++p)
      m = std::max(m, max_abs_diff(a.blocks[p].values(), c.blocks[p].values()));
    return m;
  };
  const double coarse = diff(2e-2, 1e-2), fine = diff(1e-2, 5e-3);
  EXPECT_LT(fine, coarse);
  // Second-order: halving h cuts the difference by about 4.
  EXPECT_LT(fine, 0.5 * coarse);
}

TEST(NumericFd, RejectsNonPositiveStep) {
  const auto b = test::random_model(0);
  EXPECT_THROW(numeric_jacobian_fd(b, embed(b, {{1}}), 0.0), Error);
}

TEST(LayerJacobian, LastLayerPlusFinalNormIsFinalTarget) {
  const auto b = test::random_model(11, 32, 3);
  const auto x = embed(b, {{2, 7, 1}});
  const auto final_j = detached_jacobian(b, x);
  const auto layer_j = layer_detached_jacobian(b, x, 2, TapPoint::layer_out);
  const float div = final_j.frozen.final_norm_divisor.back();
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c)
        EXPECT_NEAR(layer_j.blocks[p](r, c) * b.final_norm[r] / div, final_j.blocks[p](r, c),
                    1e-6 * std::max(1.0f, std::abs(final_j.blocks[p](r, c))));
}

TEST(LayerJacobian, ZeroWeightLayerPassesResidualThrough) {
  auto b = test::random_model(12, 32, 3);
  zero_layer(b, 1);
  const auto x = embed(b, {{2, 7}});
  EXPECT_EQ(layer_detached_jacobian(b, x, 1, TapPoint::layer_out).blocks,
            layer_detached_jacobian(b, x, 0, TapPoint::layer_out).blocks);
}

TEST(LayerJacobian, ReconstructsLoggedIntermediates) {
  std::mt19937_64 rng(13);
  const auto b = test::random_model(13, 32, 3);
  const auto x = embed(b, test::random_tokens(rng, 4, 64));
  for (std::size_t l = 0; l < 3; ++l)
    for (auto point : {TapPoint::layer_out, TapPoint::attn_out, TapPoint::mlp_out}) {
      const auto j = layer_detached_jacobian(b, x, l, point);
      RunOptions o;
      o.stop = Tap{l, point};
      const Matrix logged = run_decoder(b, x.vectors, o);
      const auto r = reconstruct(b, j, x);
      EXPECT_TRUE(std::ranges::equal(r.reference, logged.row(3)));
      EXPECT_LE(r.rel_error, 1e-5) << "layer " << l << " " << to_string(point);
    }
}

TEST(LayerJacobian, InvalidLayerIsRejected) {
  const auto b = test::random_model(13);
  EXPECT_THROW(layer_detached_jacobian(b, embed(b, {{1}}), 2, TapPoint::layer_out), Error);
}

TEST(PerLayer, ZeroWeightLayersAreIdentity) {
  const auto b = zero_branch_model(14, 3);
  const auto x = embed(b, {{4}});
  for (std::size_t l = 0; l < 3; ++l) {
    const auto t = per_layer_transform(b, x, l);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c)
        EXPECT_EQ(t.per_layer(r, c), r == c ? 1.0f : 0.0f);
  }
  const auto f = layer_factorization(b, x);
  EXPECT_EQ(f.rel_frobenius, 0.0);
}

TEST(PerLayer, ProductMatchesCumulative) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto b = test::random_model(seed, 32, 2 + seed % 3);
    const auto f = layer_factorization(b, embed(b, {{static_cast<TokenId>(seed + 3)}}));
    EXPECT_LE(f.rel_frobenius, 1e-4) << "seed " << seed;
  }
}

TEST(PerLayer, FirstLayerEqualsLayerJacobian) {
  const auto b = test::random_model(15, 32, 1);
  const auto x = embed(b, {{8}});
  const auto t = per_layer_transform(b, x, 0);
  const auto j = layer_detached_jacobian(b, x, 0, TapPoint::layer_out);
  EXPECT_LE(max_abs_diff(t.per_layer.values(), j.blocks[0].values()), 1e-6);
  EXPECT_EQ(t.cumulative, j.blocks[0]);
}

TEST(PerLayer, MultiTokenIsUnsupported) {
  const auto b = test::random_model(15);
  try {
    per_layer_transform(b, embed(b, {{8, 9}}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_input);
  }
}

}  // namespace
}  // namespace loclin
