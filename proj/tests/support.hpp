#pragma once

// Random Gaussian circuits and small helpers shared by the tests.

#include <random>
#include <vector>

#include "sqz/gaussian.hpp"

namespace testing_support {

using namespace sqz;

// Random composition of single-mode squeezers, beamsplitters and phase shifts.
inline GreensFunction random_symplectic(std::size_t m, std::mt19937_64& rng, int layers = 3, double rmax = 1.0) {
  std::uniform_real_distribution<double> ur(0.0, rmax), ua(0.0, 2.0 * pi), ut(0.0, pi / 2);
  GreensFunction g = GreensFunction::identity(m);
  for (int l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < m; ++i) g = compose(embed(squeezer_greens(ur(rng), ua(rng)), {i}, m), g);
    for (std::size_t i = 0; i + 1 < m; ++i) g = compose(embed(beamsplitter_greens(ut(rng), ua(rng)), {i, i + 1}, m), g);
    if (m > 2) g = compose(embed(beamsplitter_greens(ut(rng), ua(rng)), {0, m - 1}, m), g);
    VectorXd ph(static_cast<Eigen::Index>(m));
    for (auto& p : ph) p = ua(rng);
    g = compose(phase_greens(ph), g);
  }
  return g;
}

inline MatrixXcd random_symmetric(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  MatrixXcd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) a(i, j) = a(j, i) = cd(nd(rng), nd(rng));
  return a;
}

} // namespace testing_support
