#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pdemix/pde.hpp"

using namespace pdemix;

namespace {

ScalarField delta3() {
  ScalarField f(3, 3);
  f(1, 1) = 1.0;
  return f;
}

}  // namespace

TEST(Reaction, ShapesAtHalf) {
  // 0.1 * 0.25 for u(1-u); the squared variants carry an extra factor 1/2.
  const ScalarField u(4, 4, 0.5);
  const ScalarField r0 = reaction_term(ReactionKind::Logistic0, u, 0.1);
  for (double v : r0.values()) EXPECT_NEAR(v, 0.025, 1e-15);
  for (auto k : {ReactionKind::Logistic1, ReactionKind::Logistic2}) {
    const ScalarField r = reaction_term(k, u, 0.1);
    for (double v : r.values()) EXPECT_NEAR(v, 0.0125, 1e-15) << to_string(k);
  }
}

TEST(Reaction, ZeroIsFixedPoint) {
  ScalarField zero(3, 3, 0.0);
  for (auto k : kAllReactionKinds) {
    const ScalarField r = reaction_term(k, zero, 0.1);
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Reaction, NoneIsIdenticallyZero) {
  ScalarField u = oracle::random_field(5, 4, 3);
  const ScalarField r = reaction_term(ReactionKind::None, u, 0.0);
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Reaction, MatchesTextbookFormulas) {
  for (int k = 0; k < 4; ++k)
    for (double u = -0.2; u <= 1.2; u += 0.05)
      EXPECT_NEAR(reaction_shape(ReactionKind(k), u), oracle::reaction(k, u), 1e-15);
}

TEST(Reaction, DerivativeMatchesCentralDifference) {
  const double h = 1e-6;
  for (auto k : kAllReactionKinds)
    for (double u = -0.1; u <= 1.1; u += 0.01) {
      const double fd = (reaction_shape(k, u + h) - reaction_shape(k, u - h)) / (2 * h);
      EXPECT_NEAR(reaction_shape_derivative(k, u), fd, 1e-8) << to_string(k) << " u=" << u;
    }
}

TEST(Reaction, NamesRoundTrip) {
  for (auto k : kAllReactionKinds) EXPECT_EQ(reaction_kind_from_string(to_string(k)), k);
  EXPECT_FALSE(parse_reaction_kind("Logistic3").has_value());
  EXPECT_THROW(reaction_kind_from_string("logistic0"), std::invalid_argument);
}

TEST(Laplacian, ConstantGivesZero) {
  const ScalarField l = laplacian_neumann(ScalarField(6, 5, 0.37));
  for (double v : l.values()) EXPECT_EQ(v, 0.0);
}

TEST(Laplacian, DeltaOnThreeByThree) {
  // Hand-applied stencil; every ghost repeats the edge cell it faces.
  const std::vector<double> expected{0, 1, 0, 1, -4, 1, 0, 1, 0};
  ScalarField out = laplacian_neumann(delta3());
  for (std::size_t n = 0; n < 9; ++n) EXPECT_DOUBLE_EQ(out.values()[n], expected[n]);
}

TEST(Laplacian, RampMatchesPaddedOracle) {
  ScalarField ramp(7, 6);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 6; ++j) ramp(i, j) = double(i);
  ScalarField out = laplacian_neumann(ramp);
  EXPECT_EQ(max_abs_diff(out, oracle::padded_laplacian(ramp)), 0.0);
  for (std::size_t i = 1; i + 1 < 7; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out(i, j), 0.0);
  // Edge rows keep only the one-sided difference toward the interior.
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(out(0, j), 1.0);
    EXPECT_EQ(out(6, j), -1.0);
  }
}

TEST(Laplacian, RandomFieldsMatchPaddedOracle) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const std::size_t h = 3 + seed % 7, w = 3 + (seed * 5) % 9;
    ScalarField u = oracle::random_field(h, w, seed, -1.0, 2.0);
    EXPECT_LE(max_abs_diff(laplacian_neumann(u), oracle::padded_laplacian(u)), 1e-14);
  }
}

TEST(Laplacian, SumsToZero) {
  for (unsigned seed = 0; seed < 25; ++seed) {
    ScalarField u = oracle::random_field(3 + seed % 11, 3 + seed % 13, 100 + seed);
    double abs_sum = 0.0;
    ScalarField l = laplacian_neumann(u);
    for (double v : l.values()) abs_sum += std::abs(v);
    EXPECT_LE(std::abs(l.sum()), 1e-10 * std::max(abs_sum, 1.0));
  }
}

TEST(Laplacian, IsLinear) {
  ScalarField u = oracle::random_field(8, 9, 1), v = oracle::random_field(8, 9, 2);
  const double a = 0.7, b = -1.3;
  ScalarField combo(8, 9);
  for (std::size_t n = 0; n < combo.size(); ++n) combo.values()[n] = a * u.values()[n] + b * v.values()[n];
  ScalarField lhs = laplacian_neumann(combo);
  ScalarField lu = laplacian_neumann(u), lv = laplacian_neumann(v);
  for (std::size_t n = 0; n < combo.size(); ++n)
    EXPECT_NEAR(lhs.values()[n], a * lu.values()[n] + b * lv.values()[n], 1e-14);
}

TEST(Laplacian, RejectsTinyGrids) {
  EXPECT_THROW(laplacian_neumann(ScalarField(2, 5)), std::invalid_argument);
  EXPECT_THROW(laplacian_neumann(ScalarField(5, 1)), std::invalid_argument);
  EXPECT_NO_THROW(laplacian_neumann(ScalarField(3, 3)));
}

TEST(Rhs, PureDiffusionOfConstantIsZero) {
  const ScalarField r = rhs({0.4, 0.0, ReactionKind::None}, ScalarField(5, 5, 0.8));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Rhs, LogisticOfConstantHalf) {
  const ScalarField r = rhs({0.9, 0.1, ReactionKind::Logistic0}, ScalarField(4, 6, 0.5));
  for (double v : r.values()) EXPECT_NEAR(v, 0.025, 1e-15);
}

TEST(Rhs, MatchesComponentwiseOracle) {
  ScalarField u = oracle::random_field(6, 7, 9);
  for (int k = 0; k < 4; ++k) {
    const double z_r = k == 3 ? 0.0 : 0.08;
    ScalarField got = rhs({0.3, z_r, ReactionKind(k)}, u);
    EXPECT_LE(max_abs_diff(got, oracle::rhs(k, 0.3, z_r, u)), 1e-15);
  }
}

TEST(PdeParams, Validation) {
  EXPECT_NO_THROW((PdeParams{0.1, 0.05, ReactionKind::Logistic1}.validate()));
  EXPECT_NO_THROW((PdeParams{0.0, 0.1, ReactionKind::Logistic0}.validate()));
  EXPECT_THROW((PdeParams{-0.1, 0.0, ReactionKind::None}.validate()), std::invalid_argument);
  EXPECT_THROW((PdeParams{0.1, -0.01, ReactionKind::Logistic0}.validate()), std::invalid_argument);
  EXPECT_THROW((PdeParams{0.1, 0.01, ReactionKind::None}.validate()), std::invalid_argument);
  EXPECT_THROW((PdeParams{NAN, 0.0, ReactionKind::None}.validate()), std::invalid_argument);
}

TEST(ScalarField, ShapeAndStats) {
  ScalarField f(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(f(1, 2), 6.0);
  EXPECT_EQ(f.sum(), 21.0);
  EXPECT_EQ(f.min(), 1.0);
  EXPECT_EQ(f.max(), 6.0);
  EXPECT_TRUE(f.all_finite());
  f(0, 0) = INFINITY;
  EXPECT_FALSE(f.all_finite());
  EXPECT_THROW(ScalarField(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(max_abs_diff(ScalarField(2, 2), ScalarField(2, 3)), std::invalid_argument);
}
