#pragma once

// Photon-number statistics of zero-mean Gaussian states: closed-form moments,
// Hafnian probabilities, and exact chain-rule sampling.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "sqz/gaussian.hpp"
#include "sqz/hafnian.hpp"
#include "sqz/rng.hpp"

namespace sqz {

using PhotonPattern = std::vector<int>;

// Quadrants of sigma' = sigma - I/2 and the probability kernel A = I - (sigma + I/2)^{-1}.
struct StatsMatrices {
  MatrixXcd U, V, A;

  static MatrixXcd block_swap(std::size_t m) {
    const auto n = static_cast<Eigen::Index>(m);
    MatrixXcd x = MatrixXcd::Zero(2 * n, 2 * n);
    x.topRightCorner(n, n).setIdentity();
    x.bottomLeftCorner(n, n).setIdentity();
    return x;
  }

  explicit StatsMatrices(const CovarianceMatrix& s) : U(s.U()), V(s.V()) {
    const auto n = s.matrix().rows();
    const MatrixXcd q = s.matrix() + 0.5 * MatrixXcd::Identity(n, n);
    A = MatrixXcd::Identity(n, n) - q.inverse();
  }
};

inline VectorXd mean_photons(const CovarianceMatrix& sigma) {
  const MatrixXcd v = sigma.V();
  VectorXd n(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    n(i) = v(i, i).real();
    if (n(i) < -1e-10) throw NumericError("mean_photons: negative photon number, covariance is unphysical");
  }
  return n;
}

// Cov(n_i, n_j) = |U_ij|^2 + |V_ij|^2 (i != j); Var(n_i) = |U_ii|^2 + <n_i>^2 + <n_i>.
inline MatrixXd photon_covariance(const CovarianceMatrix& sigma) {
  const MatrixXcd u = sigma.U(), v = sigma.V();
  const VectorXd n = mean_photons(sigma);
  MatrixXd c = u.cwiseAbs2() + v.cwiseAbs2();
  for (Eigen::Index i = 0; i < c.rows(); ++i) c(i, i) = std::norm(u(i, i)) + n(i) * n(i) + n(i);
  return c;
}

// A photon-number moment <prod_i n_i^{p_i}> as (mode, power) terms.
struct MomentPattern {
  std::vector<std::pair<std::size_t, int>> terms;

  MomentPattern() = default;
  MomentPattern(std::initializer_list<std::pair<std::size_t, int>> t) : terms(t) {}

  // Merged by mode, zero powers dropped, ascending mode order.
  MomentPattern canonical() const {
    std::map<std::size_t, int> acc;
    for (auto [m, p] : terms) {
      require(p >= 0, "photon moment: negative power");
      acc[m] += p;
    }
    MomentPattern out;
    for (auto [m, p] : acc)
      if (p > 0) out.terms.emplace_back(m, p);
    return out;
  }
};

// Closed-form moments through <n_i^2 n_j^2>, evaluated in the gauge where every
// U_ii is real and nonnegative, with mode indices in ascending order.
inline double photon_moment(const CovarianceMatrix& sigma, const MomentPattern& pattern) {
  const MomentPattern p = pattern.canonical();
  for (auto [m, pw] : p.terms) require(m < sigma.modes(), "photon moment: mode index out of range");
  if (p.terms.empty()) return 1.0;

  const CovarianceMatrix g = gauge_fix(sigma);
  const MatrixXcd U = g.U(), V = g.V();
  auto n = [&](std::size_t i) { return V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)).real(); };
  auto u = [&](std::size_t i, std::size_t j) { return U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };
  auto v = [&](std::size_t i, std::size_t j) { return V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };
  auto nn = [&](std::size_t i, std::size_t j) { return std::norm(u(i, j)) + std::norm(v(i, j)) + n(i) * n(j); };
  auto n2 = [&](std::size_t i) { return std::norm(u(i, i)) + 2.0 * n(i) * n(i) + n(i); };
  // Mixed-order terms carry U_ij V_ij (not U_ij^* V_ij) for <n_i^2 n_j>, and the
  // conjugate pairing for <n_i n_j^2>, consistent with V_ij = <a_j^dag a_i>.
  auto n2n = [&](std::size_t i, std::size_t j) {
    const double uii = u(i, i).real();
    return nn(i, j) * (4.0 * n(i) + 1.0) + n(j) * (std::norm(u(i, i)) - 2.0 * n(i) * n(i)) +
           2.0 * uii * (u(i, j) * v(i, j) + std::conj(u(i, j)) * std::conj(v(i, j))).real();
  };
  auto nn2 = [&](std::size_t i, std::size_t j) {
    const double ujj = u(j, j).real();
    return nn(i, j) * (4.0 * n(j) + 1.0) + n(i) * (std::norm(u(j, j)) - 2.0 * n(j) * n(j)) +
           2.0 * ujj * (std::conj(u(i, j)) * v(i, j) + u(i, j) * std::conj(v(i, j))).real();
  };

  const auto& t = p.terms;
  if (t.size() == 1) {
    const auto [i, pw] = t[0];
    if (pw == 1) return n(i);
    if (pw == 2) return n2(i);
  } else if (t.size() == 2) {
    const auto [i, a] = t[0];
    const auto [j, b] = t[1];
    if (a == 1 && b == 1) return nn(i, j);
    if (a == 2 && b == 1) return n2n(i, j);
    if (a == 1 && b == 2) return nn2(i, j);
    if (a == 2 && b == 2) {
      const double ni = n(i), nj = n(j), uii = u(i, i).real(), ujj = u(j, j).real();
      const cd uij = u(i, j), vij = v(i, j);
      const double c = nn(i, j) - ni * nj;
      return n2n(i, j) * (4.0 * nj + 1.0) + nn2(i, j) * (4.0 * ni + 1.0) -
             nn(i, j) * (4.0 * ni + 1.0) * (4.0 * nj + 1.0) + 4.0 * c * c +
             (2.0 * ni * ni - uii * uii) * (2.0 * nj * nj - ujj * ujj) +
             2.0 * uii * ujj * (vij * vij + uij * uij + std::conj(vij * vij) + std::conj(uij * uij)).real() +
             8.0 * std::norm(uij) * std::norm(vij);
    }
  } else if (t.size() == 3 && t[0].second == 1 && t[1].second == 1 && t[2].second == 1) {
    const std::size_t i = t[0].first, j = t[1].first, k = t[2].first;
    const cd interference = std::conj(u(i, j)) * (v(i, k) * u(j, k) + v(j, k) * u(i, k)) +
                            v(i, j) * (std::conj(u(i, k)) * u(j, k) + std::conj(v(i, k)) * v(j, k));
    return n(i) * nn(j, k) + n(j) * nn(i, k) + n(k) * nn(i, j) - 2.0 * n(i) * n(j) * n(k) +
           2.0 * interference.real();
  }
  throw ConfigError("photon moment: pattern outside the closed-form family (orders up to <n_i^2 n_j^2>, <n_i n_j n_k>)");
}

// ---------------------------------------------------------------------------
// Probabilities

struct GbsOptions {
  int max_photons = 20;
};

// Precomputed kernel for repeated probability queries on one state.
class GbsKernel {
public:
  explicit GbsKernel(const CovarianceMatrix& sigma) : m_(sigma.modes()) {
    const auto n = sigma.matrix().rows();
    const MatrixXcd q = sigma.matrix() + 0.5 * MatrixXcd::Identity(n, n);
    Eigen::PartialPivLU<MatrixXcd> lu(q);
    const cd det = lu.determinant();
    require(det.real() > 0.0, "gbs: sigma + I/2 must be positive definite");
    vacuum_prob_ = 1.0 / std::sqrt(det.real());
    const MatrixXcd a = MatrixXcd::Identity(n, n) - lu.inverse();
    b_ = StatsMatrices::block_swap(m_) * a;
    b_ = 0.5 * (b_ + b_.transpose()).eval();
    // Entries at rounding level are set to zero so that structural zeros (for
    // example the parity selection rule of pure squeezed modes) stay exact.
    const double floor = 1e-14 * std::max(1.0, max_abs(b_));
    for (Eigen::Index i = 0; i < b_.rows(); ++i)
      for (Eigen::Index j = 0; j < b_.cols(); ++j) {
        cd& e = b_(i, j);
        e = cd(std::abs(e.real()) < floor ? 0.0 : e.real(), std::abs(e.imag()) < floor ? 0.0 : e.imag());
      }
  }

  std::size_t modes() const { return m_; }
  double vacuum_probability() const { return vacuum_prob_; }
  const MatrixXcd& kernel() const { return b_; }

  // P(n) = Haf(X A_n) / (n! |sigma + I/2|^{1/2}); repeated photons expand rows/columns of A.
  double probability(const PhotonPattern& n) const {
    require(n.size() == m_, "gbs_probability: pattern length must equal mode count");
    std::vector<int> reps(2 * m_);
    double log_fact = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      require(n[i] >= 0, "gbs_probability: negative photon count");
      reps[i] = reps[i + m_] = n[i];
      log_fact += std::lgamma(n[i] + 1.0);
    }
    const cd h = hafnian_repeated(b_, reps);
    return h.real() * std::exp(-log_fact) * vacuum_prob_;
  }

private:
  std::size_t m_;
  double vacuum_prob_ = 0.0;
  MatrixXcd b_;
};

inline double gbs_probability(const CovarianceMatrix& sigma, const PhotonPattern& n, GbsOptions opt = {}) {
  int total = 0;
  for (int k : n) total += k;
  if (total > opt.max_photons)
    throw ConfigError("gbs_probability: pattern has " + std::to_string(total) + " photons, above the configured maximum " +
                      std::to_string(opt.max_photons));
  return GbsKernel(sigma).probability(n);
}

// Generating function <z^N> of the total photon number, det(I + (1 - z) sigma')^{-1/2}.
// Valid while I + (1 - z) sigma' stays positive definite.
inline double total_photon_pgf(const CovarianceMatrix& sigma, double z) {
  const auto n = sigma.matrix().rows();
  const MatrixXcd sp = sigma.matrix() - 0.5 * MatrixXcd::Identity(n, n);
  MatrixXcd m = MatrixXcd::Identity(n, n) + (1.0 - z) * sp;
  m = 0.5 * (m + m.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(m, Eigen::EigenvaluesOnly);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (es.eigenvalues()(i) <= 0.0) return std::numeric_limits<double>::infinity();
    logdet += std::log(es.eigenvalues()(i));
  }
  return std::exp(-0.5 * logdet);
}

// Chernoff bound on P(N > n_max) = min_{z > 1} <z^N> / z^{n_max + 1}.
inline double photon_tail_bound(const CovarianceMatrix& sigma, int n_max) {
  const auto n = sigma.matrix().rows();
  const MatrixXcd sp = sigma.matrix() - 0.5 * MatrixXcd::Identity(n, n);
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(0.5 * (sp + sp.adjoint()), Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmax <= 1e-300) return 0.0;
  const double zcap = 1.0 + 1.0 / lmax;
  double best = 1.0;
  constexpr int grid = 400;
  for (int k = 1; k < grid; ++k) {
    const double z = 1.0 + (zcap - 1.0) * k / grid;
    const double val = total_photon_pgf(sigma, z) * std::pow(z, -(n_max + 1));
    if (std::isfinite(val)) best = std::min(best, val);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplerOptions {
  std::size_t max_modes = 16;
  int max_photons_per_mode = 60;
  double mass_tolerance = 1e-6; // allowed truncation loss per conditional
};

namespace detail {

// Conditional distributions P(n_k | n_0..n_{k-1}) cached by prefix.
class ChainSampler {
public:
  ChainSampler(const CovarianceMatrix& sigma, SamplerOptions opt) : opt_(opt) {
    const std::size_t m = sigma.modes();
    kernels_.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<std::size_t> keep(k + 1);
      for (std::size_t i = 0; i <= k; ++i) keep[i] = i;
      kernels_.emplace_back(trace_out(sigma, keep));
    }
  }

  PhotonPattern draw(Rng& rng) {
    PhotonPattern prefix;
    double prefix_prob = 1.0;
    for (std::size_t k = 0; k < kernels_.size(); ++k) {
      const auto& dist = conditional(prefix, prefix_prob);
      const double u = uniform01(rng);
      double cum = 0.0;
      int pick = static_cast<int>(dist.size()) - 1;
      for (std::size_t j = 0; j < dist.size(); ++j) {
        cum += dist[j];
        if (u < cum) {
          pick = static_cast<int>(j);
          break;
        }
      }
      prefix_prob *= dist[static_cast<std::size_t>(pick)];
      prefix.push_back(pick);
    }
    return prefix;
  }

private:
  const std::vector<double>& conditional(const PhotonPattern& prefix, double prefix_prob) {
    auto it = cache_.find(prefix);
    if (it != cache_.end()) return it->second;
    const auto& kern = kernels_[prefix.size()];
    PhotonPattern pat = prefix;
    pat.push_back(0);
    std::vector<double> dist;
    double cum = 0.0;
    for (int j = 0; j <= opt_.max_photons_per_mode; ++j) {
      pat.back() = j;
      const double p = std::max(0.0, kern.probability(pat)) / prefix_prob;
      dist.push_back(p);
      cum += p;
      if (cum >= 1.0 - 1e-3 * opt_.mass_tolerance && j >= 1) break;
    }
    if (cum < 1.0 - opt_.mass_tolerance)
      throw NumericError("sample_patterns: truncation discards " + std::to_string(1.0 - cum) +
                         " of the conditional probability mass");
    for (double& p : dist) p /= cum;
    return cache_.emplace(prefix, std::move(dist)).first->second;
  }

  SamplerOptions opt_;
  std::vector<GbsKernel> kernels_;
  std::map<PhotonPattern, std::vector<double>> cache_;
};

} // namespace detail

// i.i.d. photon patterns via the mode-by-mode chain rule on Gaussian marginals.
// Shot s draws from stream make_stream(seed, s).
inline std::vector<PhotonPattern> sample_patterns(const CovarianceMatrix& sigma, std::size_t shots, std::uint64_t seed,
                                                  SamplerOptions opt = {}) {
  require(sigma.modes() <= opt.max_modes,
          "sample_patterns: exact sampling limited to " + std::to_string(opt.max_modes) + " modes");
  detail::ChainSampler sampler(sigma, opt);
  std::vector<PhotonPattern> out;
  out.reserve(shots);
  for (std::size_t s = 0; s < shots; ++s) {
    Rng rng = make_stream(seed, s);
    out.push_back(sampler.draw(rng));
  }
  return out;
}

} // namespace sqz
