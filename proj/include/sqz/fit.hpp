#pragma once

// Damped least-squares fits of the two power-dependence models:
//   gain        n(P) = A sinh^2(sqrt(P / P0))          (A = eta M)
//   saturation  c(P) = c_max (1 - exp(-P / P_sat))
// The scale parameter is fitted as its logarithm so it stays positive; the
// Jacobians are analytic.  Residuals can be weighted by 1/|y| for data with
// multiplicative noise.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <unsupported/Eigen/LevenbergMarquardt>

#include "sqz/core.hpp"

namespace sqz {

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  std::vector<double> values, std_errors;
  double residual_norm = 0.0;
  double relative_residual = 0.0; // ||r|| / ||y||
  bool converged = false;

  double value(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return values[k];
    throw ConfigError("FitResult: no parameter '" + name + "'");
  }
  double error(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return std_errors[k];
    throw ConfigError("FitResult: no parameter '" + name + "'");
  }
};

namespace detail {

// y = amp * shape(P; exp(u)).  shape_du returns d shape / d u.
struct ScaledModel {
  std::function<double(double, double)> shape;
  std::function<double(double, double)> shape_du;
};

struct ScaledFunctor : Eigen::DenseFunctor<double> {
  const std::vector<double>& p;
  const std::vector<double>& y;
  const std::vector<double>& w;
  const ScaledModel& m;

  ScaledFunctor(const std::vector<double>& pw, const std::vector<double>& data, const std::vector<double>& weights,
                const ScaledModel& model)
      : Eigen::DenseFunctor<double>(2, static_cast<int>(data.size())), p(pw), y(data), w(weights), m(model) {}

  int operator()(const InputType& x, ValueType& f) const {
    for (std::size_t k = 0; k < y.size(); ++k)
      f(static_cast<Eigen::Index>(k)) = w[k] * (x(0) * m.shape(p[k], x(1)) - y[k]);
    return 0;
  }
  int df(const InputType& x, JacobianType& j) const {
    for (std::size_t k = 0; k < y.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      j(r, 0) = w[k] * m.shape(p[k], x(1));
      j(r, 1) = w[k] * x(0) * m.shape_du(p[k], x(1));
    }
    return 0;
  }
};

enum class FitWeighting { uniform, relative };

inline std::vector<double> fit_weights(const std::vector<double>& y, FitWeighting mode) {
  std::vector<double> w(y.size(), 1.0);
  if (mode == FitWeighting::uniform) return w;
  double top = 0.0;
  for (double v : y) top = std::max(top, std::abs(v));
  const double floor = std::max(top * 1e-6, std::numeric_limits<double>::min());
  for (std::size_t k = 0; k < y.size(); ++k) w[k] = 1.0 / std::max(std::abs(y[k]), floor);
  return w;
}

inline void check_fit_data(const std::vector<double>& p, const std::vector<double>& y, const char* who) {
  require(p.size() == y.size(), std::string(who) + ": powers and data differ in length");
  require(p.size() >= 3, std::string(who) + ": need at least 3 points");
  for (std::size_t k = 0; k < p.size(); ++k) {
    require(p[k] > 0.0 && std::isfinite(p[k]), std::string(who) + ": powers must be positive");
    require(std::isfinite(y[k]), std::string(who) + ": data must be finite");
  }
}

// First power at which the data reach half their maximum (linear interpolation).
inline double half_max_power(const std::vector<double>& p, const std::vector<double>& y) {
  std::vector<std::size_t> idx(p.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  const double half = 0.5 * *std::max_element(y.begin(), y.end());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (y[idx[k]] < half) continue;
    if (k == 0) return p[idx[0]];
    const double p0 = p[idx[k - 1]], p1 = p[idx[k]], y0 = y[idx[k - 1]], y1 = y[idx[k]];
    return y1 == y0 ? p1 : p0 + (half - y0) * (p1 - p0) / (y1 - y0);
  }
  return p[idx.back()];
}

// Best amplitude for a fixed scale: linear least squares.
inline double best_amplitude(const std::vector<double>& p, const std::vector<double>& y, const std::vector<double>& w,
                             const ScaledModel& m, double u) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double s = w[k] * m.shape(p[k], u);
    num += s * w[k] * y[k];
    den += s * s;
  }
  return den > 0.0 ? num / den : 0.0;
}

inline FitResult fit_scaled(const std::vector<double>& p, const std::vector<double>& y, const ScaledModel& m,
                            const std::vector<double>& u_starts, FitWeighting weighting, const std::string& model,
                            const std::string& amp_name, const std::string& scale_name) {
  const std::vector<double> w = fit_weights(y, weighting);
  Eigen::VectorXd best;
  double best_norm = std::numeric_limits<double>::infinity();
  bool best_ok = false;
  for (double u0 : u_starts) {
    Eigen::VectorXd x(2);
    x << best_amplitude(p, y, w, m, u0), u0;
    ScaledFunctor f(p, y, w, m);
    Eigen::LevenbergMarquardt<ScaledFunctor> lm(f);
    lm.setXtol(1e-14);
    lm.setFtol(1e-14);
    lm.setMaxfev(2000);
    const auto status = lm.minimize(x);
    if (!x.allFinite()) continue;
    Eigen::VectorXd r(static_cast<Eigen::Index>(y.size()));
    f(x, r);
    const double nrm = r.norm();
    const bool ok = status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                    status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters;
    if (nrm < best_norm) {
      best_norm = nrm;
      best = x;
      best_ok = ok;
    }
  }
  if (best.size() == 0) throw NumericError(model + " fit: every start diverged");

  ScaledFunctor f(p, y, w, m);
  Eigen::MatrixXd j(static_cast<Eigen::Index>(y.size()), 2);
  f.df(best, j);
  const double dof = static_cast<double>(y.size()) - 2.0;
  const double s2 = dof > 0.0 ? best_norm * best_norm / dof : 0.0;
  const Eigen::MatrixXd cov = s2 * (j.transpose() * j).completeOrthogonalDecomposition().pseudoInverse();
  const double scale = std::exp(best(1));

  FitResult res;
  res.model = model;
  res.names = {amp_name, scale_name};
  res.values = {best(0), scale};
  res.std_errors = {std::sqrt(std::max(cov(0, 0), 0.0)), scale * std::sqrt(std::max(cov(1, 1), 0.0))};
  // Unweighted residuals for reporting.
  double rss = 0.0, ynorm = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = best(0) * m.shape(p[k], best(1)) - y[k];
    rss += d * d;
    ynorm += y[k] * y[k];
  }
  res.residual_norm = std::sqrt(rss);
  res.relative_residual = ynorm > 0.0 ? std::sqrt(rss / ynorm) : std::sqrt(rss);
  res.converged = best_ok && std::isfinite(best_norm);
  return res;
}

} // namespace detail

inline double gain_model(double power, double amplitude, double p0) {
  const double s = std::sinh(std::sqrt(power / p0));
  return amplitude * s * s;
}

inline double saturation_model(double power, double c_max, double p_sat) { return c_max * (1.0 - std::exp(-power / p_sat)); }

using detail::FitWeighting;

// Start: P0 from the half-maximum point, then a decade ladder either side.
inline FitResult fit_parametric_gain(const std::vector<double>& powers, const std::vector<double>& means,
                                     FitWeighting weighting = FitWeighting::relative) {
  detail::check_fit_data(powers, means, "fit_parametric_gain");
  const detail::ScaledModel m{
      [](double p, double u) {
        const double s = std::sinh(std::sqrt(p * std::exp(-u)));
        return s * s;
      },
      [](double p, double u) {
        const double s = std::sqrt(p * std::exp(-u));
        return -0.5 * s * std::sinh(2.0 * s);
      }};
  const double s_half = std::asinh(std::sqrt(0.5));
  const double u0 = std::log(detail::half_max_power(powers, means) / (s_half * s_half));
  std::vector<double> starts;
  for (double d : {0.0, -1.0, 1.0, -2.0, 2.0, -3.0, 3.0}) starts.push_back(u0 + d * std::log(10.0));
  return detail::fit_scaled(powers, means, m, starts, weighting, "parametric_gain", "eta_M", "P0");
}

inline FitResult fit_saturation(const std::vector<double>& powers, const std::vector<double>& conversions,
                                FitWeighting weighting = FitWeighting::uniform) {
  detail::check_fit_data(powers, conversions, "fit_saturation");
  for (double c : conversions) require(c >= 0.0 && c <= 1.0, "fit_saturation: conversions must lie in [0, 1]");
  const detail::ScaledModel m{[](double p, double u) { return 1.0 - std::exp(-p * std::exp(-u)); },
                              [](double p, double u) {
                                const double x = p * std::exp(-u);
                                return -x * std::exp(-x);
                              }};
  const double u0 = std::log(detail::half_max_power(powers, conversions) / std::log(2.0));
  std::vector<double> starts;
  for (double d : {0.0, -1.0, 1.0, -2.0, 2.0}) starts.push_back(u0 + d * std::log(10.0));
  return detail::fit_scaled(powers, conversions, m, starts, weighting, "saturation", "c_max", "P_sat");
}

} // namespace sqz
