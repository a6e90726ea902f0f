#include <gtest/gtest.h>

#include <cmath>

#include "aslp/loss.hpp"
#include "aslp/perturb.hpp"
#include "support.hpp"

using namespace aslp;

namespace {

// Direct per-pixel cross entropy without the library's helpers.
double bce_oracle(const Grid& f, const Grid& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += -t[i] * std::log(f[i]) - (1 - t[i]) * std::log(1 - f[i]);
  return s / static_cast<double>(f.size());
}

}  // namespace

TEST(Bce, ClosedForms) {
  const auto half = test::constant(3, 3, 0.5);
  const auto nine = test::constant(3, 3, 0.9);
  const auto ones = test::constant(3, 3, 1.0);
  const auto zeros = test::constant(3, 3, 0.0);
  EXPECT_NEAR(bce(half, ones), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(half, zeros), 0.693147, 1e-6);
  EXPECT_NEAR(bce(nine, ones), 0.105361, 1e-6);
  EXPECT_NEAR(bce(nine, half), 1.203973, 1e-6);
}

TEST(Bce, MatchesOracle) {
  auto& g = test::rng();
  for (int k = 0; k < 100; ++k) {
    const auto f = test::random_probabilities(5, 4, g);
    const auto t = test::random_probabilities(5, 4, g);
    EXPECT_NEAR(bce(f, t), bce_oracle(f, t), 1e-12);
  }
}

TEST(Bce, ShapeMismatch) {
  EXPECT_THROW(bce(Grid(2, 2, 0.5), Grid(2, 3, 1.0)), ShapeError);
}

TEST(Bce, ClampsExtremes) {
  const double v = bce(test::constant(1, 1, 0.0), test::constant(1, 1, 1.0));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-7), 1e-6);
}

TEST(ScBce, SampledBranches) {
  auto& g = test::rng();
  const auto f = test::random_probabilities(4, 4, g);
  const auto y = test::random_hard(4, 4, g);
  const auto hi = PerturbationSpec::make(Technique::HardInversion);
  EXPECT_EQ(sc_bce_sampled(f, y, false, hi), bce(f, y));
  EXPECT_EQ(sc_bce_sampled(f, y, true, PerturbationSpec::make(Technique::LabelSmoothing, 0.0)), bce(f, y));
  EXPECT_NEAR(sc_bce_sampled(test::constant(2, 2, 0.9), test::constant(2, 2, 1.0), true, hi), 2.302585, 1e-6);
}

TEST(ScBce, FactoredBranches) {
  const auto nine = test::constant(2, 2, 0.9);
  const auto ones = test::constant(2, 2, 1.0);
  EXPECT_EQ(sc_bce_factored(nine, ones, false, 2.0), bce(nine, ones));
  EXPECT_NEAR(sc_bce_factored(nine, ones, true, 2.0), -std::log(0.1), 1e-9);
  const auto half = test::constant(2, 2, 0.5);
  auto& g = test::rng();
  EXPECT_NEAR(sc_bce_factored(half, test::random_hard(2, 2, g), true, 1.0), std::log(2.0), 1e-12);
}

TEST(ScBce, FactoredIdentityProperty) {
  auto& g = test::rng();
  std::uniform_real_distribution<double> beta_dist(0.0, 2.0);
  for (int k = 0; k < 500; ++k) {
    const auto f = test::random_probabilities(6, 6, g);
    const auto y = test::random_hard(6, 6, g);
    const double beta = beta_dist(g);
    const auto spec = PerturbationSpec{Technique::Moderation, beta, false};
    for (bool z : {false, true}) {
      EXPECT_NEAR(sc_bce_sampled(f, y, z, spec), sc_bce_factored(f, y, z, beta), 1e-9);
    }
  }
}

TEST(ScBce, UniformSplitProperty) {
  auto& g = test::rng();
  for (int k = 0; k < 200; ++k) {
    const auto f = test::random_probabilities(5, 5, g);
    const auto y = test::random_hard(5, 5, g);
    EXPECT_NEAR(bce(f, perturb_label(y, 2.0)) + bce(f, y), 2 * bce(f, test::constant(5, 5, 0.5)), 1e-9);
    EXPECT_NEAR(bce_uniform(f), bce(f, test::constant(5, 5, 0.5)), 1e-12);
  }
}

TEST(Entropy, ClosedForms) {
  EXPECT_NEAR(entropy(test::constant(2, 2, 0.5)), std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy(test::constant(2, 2, 0.9)), 0.325083, 1e-6);
  EXPECT_LT(entropy(test::constant(2, 2, 1.0 - 1e-9)), 1e-5);
}

TEST(Entropy, EqualsSelfCrossEntropy) {
  auto& g = test::rng();
  for (int k = 0; k < 100; ++k) {
    const auto f = test::random_probabilities(4, 4, g);
    EXPECT_NEAR(entropy(f), bce(f, f), 1e-12);
  }
}

TEST(SmoothedBce, ClosedForms) {
  auto& g = test::rng();
  const auto f = test::random_probabilities(3, 3, g);
  const auto y = test::random_hard(3, 3, g);
  EXPECT_EQ(smoothed_bce(f, y, 0.0), bce(f, y));
  const double expect = 0.985 * -std::log(0.9) + 0.015 * -std::log(0.1);
  EXPECT_NEAR(smoothed_bce(test::constant(1, 1, 0.9), test::constant(1, 1, 1.0), 0.03), expect, 1e-12);
  EXPECT_NEAR(expect, 0.138319, 1e-6);
  EXPECT_THROW(smoothed_bce(f, y, 1.0), DomainError);
  EXPECT_THROW(smoothed_bce(f, y, -0.1), DomainError);
}

TEST(SmoothedBce, ExpectationEquivalence) {
  auto& g = test::rng();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    const auto f = test::random_probabilities(6, 6, g);
    const auto y = test::random_hard(6, 6, g);
    const double beta = 2.0 * u(g);
    const double alpha = u(g) * std::min(1.0, 0.999 / std::max(beta, 1e-9));
    const double expectation = (1 - alpha) * bce(f, y) + alpha * bce(f, perturb_label(y, beta));
    EXPECT_NEAR(expectation, smoothed_bce(f, y, alpha * beta), 1e-9);
  }
}
