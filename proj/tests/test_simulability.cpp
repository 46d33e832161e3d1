#include <gtest/gtest.h>

#include <cmath>

#include "sqz/simulability.hpp"

using namespace sqz;

TEST(Simulability, ZeroWhenArgumentNonPositive) {
  // Heavy dark counts: numerator below the denominator.
  EXPECT_EQ(simulability_epsilon({1.0, 0.4, 0.5, 0.2, 400.0}), 0.0);
  // p_D at eta_D / 2 and beyond.
  EXPECT_EQ(simulability_epsilon({1.0, 0.4, 0.5, 0.25, 400.0}), 0.0);
  EXPECT_EQ(simulability_epsilon({1.0, 0.4, 0.5, 0.4, 400.0}), 0.0);
  // No squeezing or no transmission: the ratio is at most one.
  EXPECT_EQ(simulability_epsilon({0.0, 0.4, 0.9, 0.0, 400.0}), 0.0);
  EXPECT_EQ(simulability_epsilon({1.0, 0.0, 0.9, 0.0, 400.0}), 0.0);
  EXPECT_EQ(simulability_epsilon_numeric({1.0, 0.4, 0.5, 0.2, 400.0}), 0.0);
}

TEST(Simulability, ClosedFormMatchesRootFinder) {
  for (double r : {0.3, 1.0, 2.0})
    for (double eta : {0.2, 0.4, 0.9})
      for (double eta_d : {0.5, 0.9})
        for (double p_d : {0.0, 1e-3, 0.02}) {
          const SimulabilityInput in{r, eta, eta_d, p_d, 400.0};
          const double a = simulability_epsilon(in), b = simulability_epsilon_numeric(in);
          if (a == 0.0) {
            EXPECT_EQ(b, 0.0);
            continue;
          }
          EXPECT_NEAR(a, b, 1e-10 * a) << r << " " << eta << " " << eta_d << " " << p_d;
        }
}

TEST(Simulability, IdealLimitLargeSqueezing) {
  // p_D = 0, eta = 1: y = 2r and eps = 2 sqrt(K ln cosh r).
  for (double r : {2.0, 5.0, 10.0}) {
    const SimulabilityInput in{r, 1.0, 1.0, 0.0, 400.0};
    const double expected = 2.0 * std::sqrt(400.0 * std::log(std::cosh(r)));
    EXPECT_NEAR(simulability_epsilon(in), expected, 1e-10 * expected);
    EXPECT_NEAR(simulability_epsilon_numeric(in), expected, 1e-10 * expected);
  }
}

TEST(Simulability, SurfaceMonotoneInDetectorParameters) {
  // eta = 0.4, r = 1, K = 400.
  const int n = 40;
  std::vector<std::vector<double>> eps(n + 1, std::vector<double>(n + 1));
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const double eta_d = 0.05 + 0.95 * i / n;
      const double p_d = 0.1 * j / n;
      eps[i][j] = simulability_epsilon({1.0, 0.4, eta_d, p_d, 400.0});
    }
  int positive = 0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      if (eps[i][j] > 0.0) ++positive;
      if (i > 0) {
        EXPECT_GE(eps[i][j], eps[i - 1][j]);
      }
      if (j > 0) {
        EXPECT_LE(eps[i][j], eps[i][j - 1]);
      }
    }
  EXPECT_GT(positive, 0);
  EXPECT_LT(positive, (n + 1) * (n + 1));
}

TEST(Simulability, RejectsInvalidProbabilities) {
  EXPECT_THROW(simulability_epsilon({1.0, 1.2, 0.9, 0.0, 400.0}), ConfigError);
  EXPECT_THROW(simulability_epsilon({1.0, 0.4, 0.0, 0.0, 400.0}), ConfigError);
  EXPECT_THROW(simulability_epsilon({1.0, 0.4, 0.9, -0.1, 400.0}), ConfigError);
  EXPECT_THROW(simulability_epsilon({1.0, 0.4, 0.9, 0.0, 0.5}), ConfigError);
}
