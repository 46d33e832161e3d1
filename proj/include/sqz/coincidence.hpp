#pragma once

// Split-beam coincidence predictions: a source on one port of a balanced
// beamsplitter, detectors on both outputs with arm transmissions eta_L, eta_R.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sqz/core.hpp"
#include "sqz/detector.hpp"

namespace sqz {

enum class SourceKind { squeezed, coherent, thermal, fock };

inline SourceKind parse_source_kind(const std::string& s) {
  if (s == "squeezed") return SourceKind::squeezed;
  if (s == "coherent") return SourceKind::coherent;
  if (s == "thermal") return SourceKind::thermal;
  if (s == "fock") return SourceKind::fock;
  throw ConfigError("unknown source kind '" + s + "'");
}

struct SourceSpec {
  SourceKind kind = SourceKind::squeezed;
  std::vector<double> mean_photons;
  std::vector<double> eta_left, eta_right; // empty means lossless

  std::size_t modes() const { return mean_photons.size(); }
  double eta_l(std::size_t i) const { return eta_left.empty() ? 1.0 : eta_left[i]; }
  double eta_r(std::size_t i) const { return eta_right.empty() ? 1.0 : eta_right[i]; }

  void validate() const {
    for (double n : mean_photons) require(n >= 0.0 && std::isfinite(n), "SourceSpec: mean photons must be >= 0");
    for (const auto* v : {&eta_left, &eta_right}) {
      require(v->empty() || v->size() == mean_photons.size(), "SourceSpec: transmissions must match the mode count");
      for (double e : *v) require(e >= 0.0 && e <= 1.0, "SourceSpec: transmissions must lie in [0, 1]");
    }
    if (kind == SourceKind::fock)
      for (double n : mean_photons)
        require(n == std::floor(n), "SourceSpec: Fock photon numbers must be integers");
  }
};

inline double photon_variance(SourceKind kind, double n) {
  switch (kind) {
  case SourceKind::squeezed: return 2.0 * n * (n + 1.0);
  case SourceKind::coherent: return n;
  case SourceKind::thermal: return n * (n + 1.0);
  case SourceKind::fock: return 0.0;
  }
  throw ConfigError("photon_variance: unknown source kind");
}

// Cov(n3, n4) = eta_L eta_R / 4 (Var(n) - <n>) for mode i.
inline double mode_covariance(const SourceSpec& spec, std::size_t i) {
  const double n = spec.mean_photons[i];
  return spec.eta_l(i) * spec.eta_r(i) / 4.0 * (photon_variance(spec.kind, n) - n);
}

inline double splitter_covariance(const SourceSpec& spec) {
  spec.validate();
  require(spec.modes() == 1, "splitter_covariance: expects a single mode");
  return mode_covariance(spec, 0);
}

inline double multimode_covariance(const SourceSpec& spec) {
  spec.validate();
  double c = 0.0;
  for (std::size_t i = 0; i < spec.modes(); ++i) c += mode_covariance(spec, i);
  return c;
}

// <N> per detector with symmetric arms: sum_i eta_i / 2 <n_i>.
inline double mean_per_detector(const SourceSpec& spec) {
  double n = 0.0;
  for (std::size_t i = 0; i < spec.modes(); ++i) n += 0.5 * spec.eta_l(i) * spec.mean_photons[i];
  return n;
}

// Bernoulli clicks: Cov(c3, c4) = (P(c3|c4) - P(c3|!c4)) (1 - <c4>) <c4>.
inline double threshold_covariance(double p_click_given_click, double p_click_given_none, double mean4) {
  for (double p : {p_click_given_click, p_click_given_none, mean4})
    require(p >= 0.0 && p <= 1.0, "threshold_covariance: probabilities must lie in [0, 1]");
  return (p_click_given_click - p_click_given_none) * (1.0 - mean4) * mean4;
}

struct QuadraticFit {
  double linear = 0.0, quadratic = 0.0;
};

// Least squares Cov = a <N> + b <N>^2 (no intercept).  The transmission is 2a.
inline QuadraticFit fit_covariance_sweep(const std::vector<double>& mean_n, const std::vector<double>& cov) {
  require(mean_n.size() == cov.size() && mean_n.size() >= 2, "fit_covariance_sweep: need at least two points");
  MatrixXd a(static_cast<Eigen::Index>(mean_n.size()), 2);
  VectorXd y(a.rows());
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    const double n = mean_n[static_cast<std::size_t>(k)];
    a(k, 0) = n;
    a(k, 1) = n * n;
    y(k) = cov[static_cast<std::size_t>(k)];
  }
  const VectorXd c = a.colPivHouseholderQr().solve(y);
  return {c(0), c(1)};
}

// ------------------------------------------------ wavelength-dependent QE

struct QeCurve {
  std::vector<double> wavelength; // m, strictly increasing
  std::vector<double> qe;
  double center = 0.0;            // lambda_0, m

  void validate() const {
    require(wavelength.size() == qe.size() && wavelength.size() >= 2, "QeCurve: need matching grids of >= 2 points");
    for (std::size_t k = 0; k < wavelength.size(); ++k) {
      require(wavelength[k] > 0.0, "QeCurve: wavelengths must be positive");
      require(k == 0 || wavelength[k] > wavelength[k - 1], "QeCurve: wavelengths must increase");
      require(qe[k] >= 0.0 && qe[k] <= 1.0, "QeCurve: qe must lie in [0, 1]");
    }
    require(center > 0.0, "QeCurve: center wavelength must be positive");
  }

  // Linear interpolation, zero outside the tabulated range.
  double operator()(double lambda) const {
    if (!(lambda >= wavelength.front() && lambda <= wavelength.back())) return 0.0;
    const auto it = std::upper_bound(wavelength.begin(), wavelength.end(), lambda);
    if (it == wavelength.end()) return qe.back();
    const std::size_t k = static_cast<std::size_t>(it - wavelength.begin());
    const double t = (lambda - wavelength[k - 1]) / (wavelength[k] - wavelength[k - 1]);
    return (1.0 - t) * qe[k - 1] + t * qe[k];
  }

  // Flat response with a linear roll-off to zero between cut_start and cut_end.
  static QeCurve synthetic(double center, double lambda_min, double cut_start, double cut_end, double peak = 0.8) {
    QeCurve c;
    c.center = center;
    c.wavelength = {lambda_min, cut_start, cut_end};
    c.qe = {peak, peak, 0.0};
    return c;
  }
};

struct SlopeResult {
  double slope = 0.0;
  std::vector<std::string> warnings;
};

// Biphoton prediction Cov ~ <N> eta^2 <QE(lambda) QE(lambda')>, averaged over the
// spectral density with partner 1/lambda' = 2/lambda_0 - 1/lambda.  The density
// is per unit frequency, sampled at the given wavelengths; integration runs over
// frequency with the trapezoid rule.
inline SlopeResult qe_weighted_slope(const std::vector<double>& wavelength, const std::vector<double>& density,
                                     const QeCurve& qe, double eta) {
  qe.validate();
  require(wavelength.size() == density.size() && wavelength.size() >= 2, "qe_weighted_slope: need matching grids");
  require(eta >= 0.0 && eta <= 1.0, "qe_weighted_slope: eta must lie in [0, 1]");
  const std::size_t n = wavelength.size();
  std::vector<double> w(n), num(n), den(n);
  for (std::size_t k = 0; k < n; ++k) {
    require(wavelength[k] > 0.0 && density[k] >= 0.0, "qe_weighted_slope: bad spectrum sample");
    const double lam = wavelength[k];
    w[k] = 1.0 / lam;
    const double inv_partner = 2.0 / qe.center - 1.0 / lam;
    const double partner_qe = inv_partner > 0.0 ? qe(1.0 / inv_partner) : 0.0;
    den[k] = density[k];
    num[k] = density[k] * qe(lam) * partner_qe;
  }
  double top = 0.0, bottom = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double h = std::abs(w[k] - w[k - 1]);
    top += 0.5 * h * (num[k] + num[k - 1]);
    bottom += 0.5 * h * (den[k] + den[k - 1]);
  }
  require(bottom > 0.0, "qe_weighted_slope: spectrum does not normalize");
  SlopeResult r;
  if (top == 0.0) r.warnings.push_back("spectrum lies entirely outside the QE support; slope is 0");
  r.slope = eta * eta * top / bottom;
  return r;
}

struct BiphotonCovariance {
  double covariance = 0.0;
  std::vector<std::string> warnings;
};

// Multi-pair terms are dropped, so the prediction is flagged once <N> reaches 0.1.
inline BiphotonCovariance biphoton_covariance(double mean_n, double slope) {
  require(mean_n >= 0.0, "biphoton_covariance: <N> must be >= 0");
  BiphotonCovariance b{slope * mean_n, {}};
  if (mean_n >= 0.1) b.warnings.push_back("<N> >= 0.1: biphoton approximation outside its validity range");
  return b;
}

inline void write_sweep_csv(const std::filesystem::path& p, const std::vector<double>& mean_n, const std::vector<double>& cov) {
  require(mean_n.size() == cov.size(), "write_sweep_csv: column lengths differ");
  io::CsvWriter w({"mean_photons", "covariance"});
  for (std::size_t k = 0; k < mean_n.size(); ++k) w.row(std::vector<double>{mean_n[k], cov[k]});
  w.save(p);
}

} // namespace sqz
