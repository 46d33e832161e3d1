#pragma once

// Classical-simulability bound for lossy, noisy Gaussian boson sampling with
// threshold detectors.  Sampling is efficiently simulable to total-variation
// distance eps whenever
//   sech(y / 2) > exp(-eps^2 / 4K),
//   y = max(0, ln[(1 - 2 p_D / eta_D) / (eta e^{-2r} + 1 - eta)]),
// so the smallest such distance is eps = 2 sqrt(K ln cosh(y / 2)).

#include <cmath>
#include <limits>

#include <boost/math/tools/roots.hpp>

#include "sqz/core.hpp"

namespace sqz {

struct SimulabilityInput {
  double r = 1.0;     // squeezing parameter
  double eta = 1.0;   // total transmission
  double eta_d = 1.0; // detector efficiency
  double p_d = 0.0;   // dark-count probability
  double k = 1.0;     // number of squeezed sources

  void validate() const {
    require(r >= 0.0 && std::isfinite(r), "SimulabilityInput: r must be >= 0");
    require(eta >= 0.0 && eta <= 1.0, "SimulabilityInput: eta must lie in [0, 1]");
    require(eta_d > 0.0 && eta_d <= 1.0, "SimulabilityInput: eta_D must lie in (0, 1]");
    require(p_d >= 0.0 && p_d <= 1.0, "SimulabilityInput: p_D must lie in [0, 1]");
    require(k >= 1.0 && std::isfinite(k), "SimulabilityInput: K must be >= 1");
  }
};

// The ramped log-ratio y.  A dark-count rate at or above eta_D / 2 leaves no
// bound to speak of: y = 0.
inline double simulability_argument(const SimulabilityInput& in) {
  in.validate();
  const double num = 1.0 - 2.0 * in.p_d / in.eta_d;
  if (num <= 0.0) return 0.0;
  const double den = (1.0 - in.eta) + in.eta * std::exp(-2.0 * in.r);
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return std::max(0.0, std::log(num / den));
}

// ln cosh(x) without overflow.
inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

inline double simulability_epsilon(const SimulabilityInput& in) {
  const double y = simulability_argument(in);
  if (y == 0.0) return 0.0;
  return 2.0 * std::sqrt(in.k * log_cosh(0.5 * y));
}

// Independent inversion: bracket the root of sech(y/2) - exp(-eps^2 / 4K) in eps
// and refine with TOMS 748.
inline double simulability_epsilon_numeric(const SimulabilityInput& in) {
  const double y = simulability_argument(in);
  if (y == 0.0) return 0.0;
  const double target = 1.0 / std::cosh(0.5 * y);
  require(target > 0.0, "simulability_epsilon_numeric: sech underflows; use the closed form");
  auto f = [&](double eps) { return std::exp(-eps * eps / (4.0 * in.k)) - target; };
  double hi = 1.0;
  while (f(hi) > 0.0) hi *= 2.0;
  std::uintmax_t iters = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, 0.0, hi, boost::math::tools::eps_tolerance<double>(52), iters);
  if (iters >= 200) throw NumericError("simulability_epsilon_numeric: root finder did not converge");
  return 0.5 * (a + b);
}

} // namespace sqz
