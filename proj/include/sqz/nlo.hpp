#pragma once

// Coupled-mode propagation for the degenerate parametric amplifier (DOPA) and
// adiabatic frequency conversion (AFC), pump shaping, and chirped poling design.
//
// Frequencies are offsets from each grid's center; lengths and wavenumbers may be
// in SI or any consistent normalized units.  The pump grid must share the signal
// grid spacing so that pump-signal convolution is an exact index shift.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "sqz/gaussian.hpp"
#include "sqz/io.hpp"

namespace sqz {

struct FrequencyGrid {
  std::size_t n = 2;
  double center = 0.0;  // rad/s
  double spacing = 1.0; // rad/s

  FrequencyGrid() = default;
  FrequencyGrid(std::size_t points, double c, double dw) : n(points), center(c), spacing(dw) {
    require(n >= 1, "FrequencyGrid: need at least one point");
    require(spacing > 0.0 && std::isfinite(spacing), "FrequencyGrid: spacing must be positive");
  }

  double offset(std::size_t i) const { return (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * spacing; }
  double omega(std::size_t i) const { return center + offset(i); }
};

// D(dw) = offset + sum_k beta_coeffs[k-1] dw^k / k!  plus a linear sweep beta0_rate * z.
struct DispersionProfile {
  double offset = 0.0;              // constant wavenumber mismatch, 1/m
  std::vector<double> beta_coeffs;  // [d beta_1, beta_2, beta_3, ...]
  double beta0_rate = 0.0;          // 1/m^2

  double operator()(double dw) const {
    double d = offset, p = 1.0, fact = 1.0;
    for (std::size_t k = 0; k < beta_coeffs.size(); ++k) {
      p *= dw;
      fact *= static_cast<double>(k + 1);
      d += beta_coeffs[k] * p / fact;
    }
    return d;
  }

  // Integral of D(dw) + beta0_rate z over [z0, z1].
  double phase(double dw, double z0, double z1) const { return (*this)(dw) * (z1 - z0) + 0.5 * beta0_rate * (z1 * z1 - z0 * z0); }

  void validate() const {
    require(std::isfinite(offset) && std::isfinite(beta0_rate), "DispersionProfile: non-finite coefficient");
    for (double b : beta_coeffs) require(std::isfinite(b), "DispersionProfile: non-finite coefficient");
  }
};

// Spectral amplitude A0 (sqrt(W) s convention, or normalized) with an intensity
// mask mu in [0, 1] and a phase mask phi, both sampled on the pump grid.
struct PumpPulse {
  FrequencyGrid grid;
  VectorXcd amplitude;
  VectorXd mu;
  VectorXd phi;
  DispersionProfile dispersion;

  PumpPulse() = default;
  PumpPulse(FrequencyGrid g, VectorXcd a) : grid(g), amplitude(std::move(a)) {
    mu = VectorXd::Ones(amplitude.size());
    phi = VectorXd::Zero(amplitude.size());
  }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(grid.n);
    require(amplitude.size() == n && mu.size() == n && phi.size() == n, "PumpPulse: masks must be defined on the pump grid");
    require(grid.n % 2 == 1, "PumpPulse: pump grid must have an odd number of points");
    for (Eigen::Index i = 0; i < n; ++i) require(mu(i) >= 0.0 && mu(i) <= 1.0, "PumpPulse: mu outside [0, 1]");
    dispersion.validate();
  }

  // Single line at the pump center.
  static PumpPulse monochromatic(const FrequencyGrid& g, cd a) {
    VectorXcd amp = VectorXcd::Zero(static_cast<Eigen::Index>(g.n));
    amp(static_cast<Eigen::Index>(g.n / 2)) = a;
    return {g, amp};
  }

  // exp(-dw^2 / (2 width^2)) scaled so the peak equals `peak`.
  static PumpPulse gaussian(const FrequencyGrid& g, double peak, double width) {
    VectorXcd amp(static_cast<Eigen::Index>(g.n));
    for (std::size_t i = 0; i < g.n; ++i) amp(static_cast<Eigen::Index>(i)) = peak * std::exp(-0.5 * std::pow(g.offset(i) / width, 2));
    return {g, amp};
  }
};

// A = A0 sqrt(mu) e^{i phi}
inline VectorXcd shape_pump(const PumpPulse& p) {
  p.validate();
  VectorXcd out(p.amplitude.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = p.amplitude(i) * std::sqrt(p.mu(i)) * std::polar(1.0, p.phi(i));
  return out;
}

// ---------------------------------------------------------------------------
// Poling

struct PolingProfile {
  std::vector<double> domain_lengths; // m, integer multiples of quantum
  std::vector<int> signs;             // alternating +-1
  double total_length = 0.0;
  double quantum = 0.0;

  void validate() const {
    require(domain_lengths.size() == signs.size() && !signs.empty(), "PolingProfile: lengths and signs must match");
    double sum = 0.0;
    for (std::size_t i = 0; i < signs.size(); ++i) {
      require(domain_lengths[i] > 0.0, "PolingProfile: domain lengths must be positive");
      require(signs[i] == 1 || signs[i] == -1, "PolingProfile: signs must be +-1");
      if (i) require(signs[i] == -signs[i - 1], "PolingProfile: signs must alternate");
      sum += domain_lengths[i];
    }
    require(std::abs(sum - total_length) <= std::max(quantum, 1e-12 * total_length), "PolingProfile: lengths do not sum to L");
  }

  std::vector<double> boundaries() const {
    std::vector<double> b(domain_lengths.size() + 1, 0.0);
    for (std::size_t i = 0; i < domain_lengths.size(); ++i) b[i + 1] = b[i] + domain_lengths[i];
    return b;
  }

  // Mean of chi over [z0, z1] (exact piecewise integral).
  double average_sign(double z0, double z1, const std::vector<double>& bounds) const {
    if (z1 <= z0) return sign_at(z0, bounds);
    auto it = std::upper_bound(bounds.begin(), bounds.end(), z0);
    std::size_t k = it == bounds.begin() ? 0 : static_cast<std::size_t>(it - bounds.begin()) - 1;
    double acc = 0.0, z = z0;
    while (z < z1 && k < signs.size()) {
      const double end = std::min(z1, bounds[k + 1]);
      acc += signs[k] * (end - z);
      z = end;
      ++k;
    }
    return acc / (z1 - z0);
  }

  double sign_at(double z, const std::vector<double>& bounds) const {
    auto it = std::upper_bound(bounds.begin(), bounds.end(), z);
    std::size_t k = it == bounds.begin() ? 0 : static_cast<std::size_t>(it - bounds.begin()) - 1;
    return signs[std::min(k, signs.size() - 1)];
  }

  std::string to_csv() const {
    io::CsvWriter w({"length_m", "sign"});
    for (std::size_t i = 0; i < signs.size(); ++i) w.row(std::vector<std::string>{io::fmt(domain_lengths[i]), std::to_string(signs[i])});
    return w.str();
  }

  static PolingProfile from_csv(const std::string& text, double quantum = 0.0) {
    const auto t = io::parse_csv(text);
    PolingProfile p;
    p.domain_lengths = t.column("length_m");
    for (double s : t.column("sign")) p.signs.push_back(static_cast<int>(s));
    for (double l : p.domain_lengths) p.total_length += l;
    p.quantum = quantum;
    p.validate();
    return p;
  }
};

struct PolingDesign {
  double beta_i = 0.0;          // 1/m
  double beta_f = 0.0;          // 1/m
  double length = 0.0;          // m
  double quantum = 2.5e-8;      // m
  double tanh_fraction = 0.0;   // share of L at each end with accelerated sweep
  double tanh_steepness = 3.0;
  double end_extension = -1.0;  // extra wavenumber swept at each end; < 0 means tanh_fraction * |beta_f - beta_i|
};

namespace detail {

// Instantaneous phase phi(z) with phi' = dk(z): linear chirp, plus tanh-shaped
// ends that sweep an extra `ext` below beta_i at the front and above beta_f at the back.
class PolingPhase {
public:
  explicit PolingPhase(const PolingDesign& d) : d_(d) {
    w_ = d.tanh_fraction * d.length;
    ext_ = d.end_extension >= 0.0 ? d.end_extension : d.tanh_fraction * std::abs(d.beta_f - d.beta_i);
    if (w_ <= 0.0) ext_ = 0.0;
    a_ = d.tanh_steepness;
  }

  double dk(double z) const {
    double k = d_.beta_i + (d_.beta_f - d_.beta_i) * z / d_.length;
    if (ext_ > 0.0 && z < w_) k -= ext_ * (1.0 - std::tanh(a_ * z / w_) / std::tanh(a_));
    if (ext_ > 0.0 && z > d_.length - w_) k += ext_ * (1.0 - std::tanh(a_ * (d_.length - z) / w_) / std::tanh(a_));
    return k;
  }

  double phi(double z) const {
    double p = d_.beta_i * z + 0.5 * (d_.beta_f - d_.beta_i) * z * z / d_.length;
    if (ext_ > 0.0) {
      const double zf = std::min(z, w_);
      p -= ext_ * (zf - w_ / (a_ * std::tanh(a_)) * std::log(std::cosh(a_ * zf / w_)));
      const double zb = d_.length - w_;
      if (z > zb)
        p += ext_ * ((z - zb) + w_ / (a_ * std::tanh(a_)) * (std::log(std::cosh(a_ * (d_.length - z) / w_)) - std::log(std::cosh(a_))));
    }
    return p;
  }

private:
  PolingDesign d_;
  double w_ = 0.0, ext_ = 0.0, a_ = 3.0;
};

} // namespace detail

// chi(z) = sign(sin(phi(z))), with domain walls at phi = m pi rounded to the quantum.
inline PolingProfile design_poling(const PolingDesign& d) {
  require(d.length > 0.0 && std::isfinite(d.length), "design_poling: L must be positive");
  require(d.quantum > 0.0, "design_poling: quantum must be positive");
  require(d.tanh_fraction >= 0.0 && d.tanh_fraction < 0.5, "design_poling: tanh_fraction must lie in [0, 0.5)");
  const detail::PolingPhase ph(d);

  // Monotone phase is required for a well-defined domain sequence.
  constexpr int probe = 4096;
  double kmax = 0.0;
  for (int i = 0; i <= probe; ++i) {
    const double k = ph.dk(d.length * i / probe);
    require(k > 0.0, "design_poling: spatial frequency must stay positive along the crystal");
    kmax = std::max(kmax, k);
  }
  const double shortest = pi / kmax;
  if (d.quantum > shortest)
    throw ConfigError("design_poling: quantum " + io::fmt(d.quantum) + " m exceeds the shortest ideal domain " + io::fmt(shortest) + " m");

  const double phi_end = ph.phi(d.length);
  const auto walls = static_cast<long long>(std::floor(phi_end / pi));
  std::vector<double> bounds{0.0};
  double lo = 0.0;
  for (long long m = 1; m <= walls; ++m) {
    const double target = static_cast<double>(m) * pi;
    if (target >= phi_end) break;
    auto f = [&](double z) { return ph.phi(z) - target; };
    // Bracket from the previous wall using the local wavenumber.
    double hi = lo;
    do {
      hi = std::min(d.length, hi + 1.5 * pi / std::max(ph.dk(hi), 1e-300));
    } while (f(hi) < 0.0 && hi < d.length);
    boost::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
    lo = 0.5 * (r.first + r.second);
    bounds.push_back(lo);
  }
  bounds.push_back(d.length);

  PolingProfile p;
  p.quantum = d.quantum;
  const double lq = std::round(d.length / d.quantum) * d.quantum;
  double prev = 0.0;
  int sign = 1;
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    const double b = (i + 1 == bounds.size()) ? lq : std::round(bounds[i] / d.quantum) * d.quantum;
    const double len = b - prev;
    if (len <= 0.5 * d.quantum) {
      if (i + 1 == bounds.size()) break; // trailing partial domain vanished
      throw ConfigError("design_poling: domain collapsed under quantization");
    }
    p.domain_lengths.push_back(std::round(len / d.quantum) * d.quantum);
    p.signs.push_back(sign);
    sign = -sign;
    prev = b;
  }
  for (double l : p.domain_lengths) p.total_length += l;
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Coupling matrices

// Pump sample at integer offset k from the pump center, zero outside the grid.
inline cd pump_at(const VectorXcd& pump, long long k) {
  const long long c = (pump.size() - 1) / 2;
  const long long idx = c + k;
  return (idx < 0 || idx >= pump.size()) ? cd(0.0) : pump(static_cast<Eigen::Index>(idx));
}

// Toeplitz K_jk = A(dw_vis,j - dw_ir,k): band-b (columns) to band-a (rows) coupling.
inline MatrixXcd lz_coupling_matrix(const VectorXcd& pump, std::size_t rows, std::size_t cols) {
  require(pump.size() % 2 == 1, "lz_coupling_matrix: pump grid must have an odd number of points");
  require((rows - cols) % 2 == 0, "lz_coupling_matrix: band sizes must share parity");
  const auto half = static_cast<long long>((rows - cols) / 2);
  MatrixXcd k(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t j = 0; j < rows; ++j)
    for (std::size_t l = 0; l < cols; ++l)
      k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = pump_at(pump, static_cast<long long>(j) - static_cast<long long>(l) - half);
  return k;
}

// Hankel K_jk = A(dw_j + dw_k) for degenerate down-conversion on one band.
inline MatrixXcd dopa_coupling_matrix(const VectorXcd& pump, std::size_t n) {
  require(pump.size() % 2 == 1, "dopa_coupling_matrix: pump grid must have an odd number of points");
  MatrixXcd k(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const auto shift = static_cast<long long>(n) - 1;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t l = 0; l < n; ++l)
      k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = pump_at(pump, static_cast<long long>(j + l) - shift);
  return k;
}

// ---------------------------------------------------------------------------
// Propagation

enum class AfcFrame { rotating, explicit_domains };

struct PropagationConfig {
  std::size_t z_steps = 256;
  double kappa = 1.0;      // coupling per unit pump amplitude, 1/(m sqrt(W))
  double length = 1.0;     // m; for explicit-domain AFC the poling length is used
  FrequencyGrid signal;    // DOPA band
  FrequencyGrid ir_band;   // AFC input band
  FrequencyGrid vis_band;  // AFC output band
  AfcFrame frame = AfcFrame::rotating;
  double tolerance = 1e-4; // step-doubling acceptance
};

struct DopaResult {
  GreensFunction greens;
  double step_error = 0.0; // max entry change between z_steps and 2 z_steps, relative
};

// Total map over the joint space ordered [ir; vis].
struct BipartiteGreens {
  MatrixXcd total;
  std::size_t n_ir = 0, n_vis = 0;
  double step_error = 0.0;

  MatrixXcd vis_ir() const { return total.bottomLeftCorner(static_cast<Eigen::Index>(n_vis), static_cast<Eigen::Index>(n_ir)); }
  MatrixXcd vis_vis() const { return total.bottomRightCorner(static_cast<Eigen::Index>(n_vis), static_cast<Eigen::Index>(n_vis)); }
  MatrixXcd ir_ir() const { return total.topLeftCorner(static_cast<Eigen::Index>(n_ir), static_cast<Eigen::Index>(n_ir)); }
  MatrixXcd ir_vis() const { return total.topRightCorner(static_cast<Eigen::Index>(n_ir), static_cast<Eigen::Index>(n_vis)); }
  GreensFunction as_greens() const { return passive_greens(total); }
};

namespace detail {

inline void check_commensurate(const FrequencyGrid& pump, const FrequencyGrid& band, const char* who) {
  require(std::abs(pump.spacing - band.spacing) <= 1e-9 * band.spacing,
          std::string(who) + ": pump grid spacing must equal the signal grid spacing");
}

inline double relative_change(const MatrixXcd& coarse, const MatrixXcd& fine) {
  return max_abs(coarse - fine) / std::max(1.0, max_abs(fine));
}

// Pump spectrum at position z (measured from the crystal input) under its own dispersion.
inline VectorXcd pump_at_z(const VectorXcd& shaped, const PumpPulse& p, double z) {
  VectorXcd a = shaped;
  for (std::size_t i = 0; i < p.grid.n; ++i)
    a(static_cast<Eigen::Index>(i)) *= std::polar(1.0, p.dispersion.phase(p.grid.offset(i), 0.0, z));
  return a;
}

inline GreensFunction dopa_run(const VectorXcd& shaped, const PumpPulse& pump, const DispersionProfile& disp,
                               const PropagationConfig& cfg, std::size_t steps) {
  const std::size_t n = cfg.signal.n;
  const auto ni = static_cast<Eigen::Index>(n);
  const double h = cfg.length / static_cast<double>(steps);
  const double a = 0.5 * h;
  MatrixXcd c = MatrixXcd::Identity(ni, ni);
  MatrixXcd y = MatrixXcd::Zero(ni, ni); // y = conj(S)
  VectorXcd half(ni);
  const bool coupled = max_abs(shaped) > 0.0 && cfg.kappa != 0.0;
  const bool static_pump = pump.dispersion.offset == 0.0 && pump.dispersion.beta_coeffs.empty() && pump.dispersion.beta0_rate == 0.0;
  MatrixXcd k_static;
  if (coupled && static_pump) k_static = cfg.kappa * dopa_coupling_matrix(shaped, n);

  for (std::size_t s = 0; s < steps; ++s) {
    const double z0 = h * static_cast<double>(s), zm = z0 + a, z1 = z0 + h;
    for (std::size_t j = 0; j < n; ++j) half(static_cast<Eigen::Index>(j)) = std::polar(1.0, disp.phase(cfg.signal.offset(j), z0, zm));
    c = half.asDiagonal() * c;
    y = half.conjugate().asDiagonal() * y;
    if (coupled) {
      const MatrixXcd k = static_pump ? k_static : MatrixXcd(cfg.kappa * dopa_coupling_matrix(pump_at_z(shaped, pump, zm), n));
      const MatrixXcd kb = k.conjugate();
      // Implicit midpoint on d/dz [C; S*] = [[0, iK], [-iK*, 0]] [C; S*].
      const MatrixXcd b1 = c + I1 * a * (k * y);
      const MatrixXcd b2 = y - I1 * a * (kb * c);
      const MatrixXcd lhs = MatrixXcd::Identity(ni, ni) - a * a * (kb * k);
      Eigen::PartialPivLU<MatrixXcd> lu(lhs);
      y = lu.solve(b2 - I1 * a * (kb * b1));
      c = b1 + I1 * a * (k * y);
    }
    for (std::size_t j = 0; j < n; ++j) half(static_cast<Eigen::Index>(j)) = std::polar(1.0, disp.phase(cfg.signal.offset(j), zm, z1));
    c = half.asDiagonal() * c;
    y = half.conjugate().asDiagonal() * y;
  }
  return {c, y.conjugate()};
}

} // namespace detail

// Signal-band Green's function of the undepleted-pump DOPA,
// dC/dz = iDC + iK S*, dS/dz = iDS + iK C*, K_jk = kappa A(dw_j + dw_k).
inline DopaResult solve_dopa(const PumpPulse& pump, const DispersionProfile& disp, const PropagationConfig& cfg) {
  require(cfg.z_steps >= 16, "solve_dopa: z_steps must be >= 16");
  require(cfg.length > 0.0, "solve_dopa: length must be positive");
  disp.validate();
  const VectorXcd shaped = shape_pump(pump);
  detail::check_commensurate(pump.grid, cfg.signal, "solve_dopa");
  const double kmax = std::abs(cfg.kappa) * shaped.cwiseAbs().sum();
  if (0.5 * cfg.length / static_cast<double>(cfg.z_steps) * kmax >= 0.5)
    throw NumericError("solve_dopa: z_steps too small for the coupling strength (kappa |A| dz must stay below 1)");

  const GreensFunction coarse = detail::dopa_run(shaped, pump, disp, cfg, cfg.z_steps);
  const GreensFunction fine = detail::dopa_run(shaped, pump, disp, cfg, 2 * cfg.z_steps);
  const double err = std::max(detail::relative_change(coarse.C, fine.C), detail::relative_change(coarse.S, fine.S));
  if (!(err <= cfg.tolerance))
    throw NumericError("solve_dopa: not converged, step-doubling change " + io::fmt(err) + " exceeds " + io::fmt(cfg.tolerance));
  return {fine, err};
}

namespace detail {

inline MatrixXcd afc_run(const VectorXcd& shaped, const PumpPulse& pump, const DispersionProfile& d_ir,
                         const DispersionProfile& d_vis, const PolingProfile* poling, const PropagationConfig& cfg,
                         double z_start, double length, std::size_t steps) {
  const std::size_t ni = cfg.ir_band.n, nv = cfg.vis_band.n;
  const auto nt = static_cast<Eigen::Index>(ni + nv);
  const auto eni = static_cast<Eigen::Index>(ni), env = static_cast<Eigen::Index>(nv);
  const double h = length / static_cast<double>(steps);
  MatrixXcd u = MatrixXcd::Identity(nt, nt);
  const bool coupled = max_abs(shaped) > 0.0 && cfg.kappa != 0.0;
  const bool static_pump = pump.dispersion.offset == 0.0 && pump.dispersion.beta_coeffs.empty() && pump.dispersion.beta0_rate == 0.0;
  const MatrixXcd k_static = coupled ? MatrixXcd(cfg.kappa * lz_coupling_matrix(shaped, nv, ni)) : MatrixXcd();
  std::vector<double> bounds;
  if (poling) bounds = poling->boundaries();

  MatrixXcd hm = MatrixXcd::Zero(nt, nt);
  VectorXcd ph(nt);
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es;

  // u <- exp(i dz H(z_mid)) u on [za, zb] with constant poling sign chi,
  // H = [[D_ir, chi K^dag], [chi K, D_vis]] on [ir; vis]; dispersion phases integrated exactly.
  auto advance = [&](double za, double zb, double chi) {
    const double dz = zb - za;
    if (!coupled || chi == 0.0) {
      for (std::size_t j = 0; j < ni; ++j) ph(static_cast<Eigen::Index>(j)) = std::polar(1.0, d_ir.phase(cfg.ir_band.offset(j), za, zb));
      for (std::size_t j = 0; j < nv; ++j) ph(static_cast<Eigen::Index>(ni + j)) = std::polar(1.0, d_vis.phase(cfg.vis_band.offset(j), za, zb));
      u = ph.asDiagonal() * u;
      return;
    }
    const double zm = 0.5 * (za + zb);
    const MatrixXcd k = chi * (static_pump ? k_static : MatrixXcd(cfg.kappa * lz_coupling_matrix(pump_at_z(shaped, pump, zm - z_start), nv, ni)));
    hm.setZero();
    for (std::size_t j = 0; j < ni; ++j) hm(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = d_ir.phase(cfg.ir_band.offset(j), za, zb) / dz;
    for (std::size_t j = 0; j < nv; ++j)
      hm(static_cast<Eigen::Index>(ni + j), static_cast<Eigen::Index>(ni + j)) = d_vis.phase(cfg.vis_band.offset(j), za, zb) / dz;
    hm.bottomLeftCorner(env, eni) = k;
    hm.topRightCorner(eni, env) = k.adjoint();
    es.compute(hm);
    for (Eigen::Index j = 0; j < nt; ++j) ph(j) = std::polar(1.0, dz * es.eigenvalues()(j));
    u = es.eigenvectors() * (ph.asDiagonal() * (es.eigenvectors().adjoint() * u));
  };

  std::size_t domain = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const double z0 = z_start + h * static_cast<double>(s), z1 = z0 + h;
    if (!poling) {
      advance(z0, z1, 1.0);
      continue;
    }
    // Split the step at domain walls so each piece sees a single sign.
    double za = z0;
    while (za < z1) {
      const double local = za - z_start;
      while (domain + 1 < poling->signs.size() && bounds[domain + 1] <= local) ++domain;
      const double wall = z_start + bounds[domain + 1];
      const double zb = (domain + 1 < poling->signs.size() && wall < z1) ? wall : z1;
      if (zb - za > 1e-12 * h) advance(za, zb, poling->signs[domain]);
      za = zb;
    }
  }
  return u;
}

} // namespace detail

// Joint unitary of the AFC coupled-mode system
//   d/dz [vis; ir] = i [[D_vis + rate_vis z, chi(z) K], [chi(z) K^dag, D_ir + rate_ir z]] [vis; ir],
// K = kappa Toeplitz(A).  In the rotating frame chi = 1 and z runs over [-L/2, L/2]
// (the detuning sweep comes from the beta0 rates); with explicit domains chi(z)
// follows the poling over [0, L_poling], with steps split at domain walls.
// Each step applies exp(i h H) with H taken at the step midpoint (dispersion
// phases integrated exactly), which stays accurate under fast detuning sweeps.
inline BipartiteGreens solve_afc(const PumpPulse& pump, const DispersionProfile& disp_ir, const DispersionProfile& disp_vis,
                                 const PolingProfile& poling, const PropagationConfig& cfg) {
  require(cfg.z_steps >= 16, "solve_afc: z_steps must be >= 16");
  disp_ir.validate();
  disp_vis.validate();
  const VectorXcd shaped = shape_pump(pump);
  detail::check_commensurate(pump.grid, cfg.ir_band, "solve_afc");
  detail::check_commensurate(pump.grid, cfg.vis_band, "solve_afc");
  require((cfg.ir_band.n + cfg.vis_band.n) % 2 == 0, "solve_afc: band sizes must share parity");

  const bool explicit_domains = cfg.frame == AfcFrame::explicit_domains;
  double length = cfg.length, z_start = -0.5 * cfg.length;
  if (explicit_domains) {
    poling.validate();
    length = poling.total_length;
    z_start = 0.0;
  }
  require(length > 0.0, "solve_afc: length must be positive");
  const PolingProfile* pp = explicit_domains ? &poling : nullptr;

  const MatrixXcd coarse = detail::afc_run(shaped, pump, disp_ir, disp_vis, pp, cfg, z_start, length, cfg.z_steps);
  const MatrixXcd fine = detail::afc_run(shaped, pump, disp_ir, disp_vis, pp, cfg, z_start, length, 2 * cfg.z_steps);
  const double err = detail::relative_change(coarse, fine);
  if (!(err <= cfg.tolerance))
    throw NumericError("solve_afc: not converged, step-doubling change " + io::fmt(err) + " exceeds " + io::fmt(cfg.tolerance));
  return {fine, cfg.ir_band.n, cfg.vis_band.n, err};
}

// Rotating-frame overload (no poling profile needed).
inline BipartiteGreens solve_afc(const PumpPulse& pump, const DispersionProfile& disp_ir, const DispersionProfile& disp_vis,
                                 const PropagationConfig& cfg) {
  require(cfg.frame == AfcFrame::rotating, "solve_afc: explicit-domain frame needs a poling profile");
  return solve_afc(pump, disp_ir, disp_vis, PolingProfile{}, cfg);
}

// |G_vis,ir v|^2 for each column v of input_modes (ir-band spectra, normalized).
inline VectorXd conversion_efficiency(const BipartiteGreens& g, const MatrixXcd& input_modes) {
  require(unitarity_residual(g.total) <= 1e-6, "conversion_efficiency: Green's function is not unitary");
  require(input_modes.rows() == static_cast<Eigen::Index>(g.n_ir), "conversion_efficiency: mode spectra must live on the ir band");
  const MatrixXcd out = g.vis_ir() * input_modes;
  VectorXd eff(input_modes.cols());
  for (Eigen::Index c = 0; c < input_modes.cols(); ++c) {
    const double nrm = input_modes.col(c).squaredNorm();
    require(nrm > 0.0, "conversion_efficiency: zero input mode");
    eff(c) = std::clamp(out.col(c).squaredNorm() / nrm, 0.0, 1.0);
  }
  return eff;
}

// Visible-band state after conversion: the ir state enters with the visible band
// in vacuum, and the ir band is traced out.  Equals G_vi sigma_ir G_vi^dag + 1/2 G_vv G_vv^dag.
inline CovarianceMatrix afc_output_covariance(const BipartiteGreens& g, const CovarianceMatrix& sigma_ir) {
  require(sigma_ir.modes() == g.n_ir, "afc_output_covariance: state must live on the ir band");
  const auto ni = static_cast<Eigen::Index>(g.n_ir), nv = static_cast<Eigen::Index>(g.n_vis), nt = ni + nv;
  MatrixXcd joint = 0.5 * MatrixXcd::Identity(2 * nt, 2 * nt);
  const MatrixXcd& s = sigma_ir.matrix();
  for (Eigen::Index i = 0; i < 2 * ni; ++i)
    for (Eigen::Index j = 0; j < 2 * ni; ++j) joint(i < ni ? i : i + nv, j < ni ? j : j + nv) = s(i, j);
  const CovarianceMatrix out = apply_greens(g.as_greens(), CovarianceMatrix(joint));
  std::vector<std::size_t> keep(static_cast<std::size_t>(nv));
  for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = static_cast<std::size_t>(ni) + k;
  return trace_out(out, keep);
}

// Landau-Zener probability of staying in the diabatic state for coupling g and
// level-separation sweep rate 2 beta0: exp(-pi g^2 / beta0).
inline double landau_zener_unconverted(double coupling, double beta0) {
  require(beta0 > 0.0, "landau_zener_unconverted: beta0 must be positive");
  return std::exp(-2.0 * pi * coupling * coupling / (2.0 * beta0));
}

} // namespace sqz
