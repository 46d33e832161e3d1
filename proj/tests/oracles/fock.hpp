#pragma once

// Dense Fock-space oracle for a few modes.  States are built from single-mode
// squeezed vacua (analytic amplitudes), two-mode squeezed vacua, beamsplitters
// and phase shifts.  Passive operations conserve total photon number, so they
// are applied exactly inside each fixed-total block.

#include <cmath>
#include <complex>
#include <map>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using cd = std::complex<double>;
using Occupation = std::vector<int>;

class FockState {
public:
  FockState(int modes, int max_total) : m_(modes), nmax_(max_total) {}

  static FockState vacuum(int modes, int max_total) {
    FockState s(modes, max_total);
    s.amp_[Occupation(static_cast<std::size_t>(modes), 0)] = 1.0;
    return s;
  }

  // Product of single-mode squeezed vacua; amplitude of |2k> is
  // (e^{i phi} tanh r)^k sqrt((2k)!) / (2^k k!) / sqrt(cosh r).
  static FockState squeezed_product(const std::vector<double>& r, const std::vector<double>& phi, int max_total) {
    const int m = static_cast<int>(r.size());
    std::vector<std::vector<cd>> per(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      auto& c = per[static_cast<std::size_t>(i)];
      c.assign(static_cast<std::size_t>(max_total + 1), 0.0);
      const cd t = std::polar(std::tanh(r[static_cast<std::size_t>(i)]), phi[static_cast<std::size_t>(i)]);
      for (int k = 0; 2 * k <= max_total; ++k) {
        const double lg = 0.5 * std::lgamma(2.0 * k + 1.0) - k * std::log(2.0) - std::lgamma(k + 1.0);
        c[static_cast<std::size_t>(2 * k)] = std::pow(t, k) * std::exp(lg) / std::sqrt(std::cosh(r[static_cast<std::size_t>(i)]));
      }
    }
    FockState s(m, max_total);
    Occupation occ(static_cast<std::size_t>(m), 0);
    s.fill_product(per, occ, 0, 0, 1.0);
    return s;
  }

  // Coherent state |alpha> in mode 0, vacuum elsewhere.
  static FockState coherent(cd alpha, int modes, int max_total) {
    FockState s(modes, max_total);
    Occupation occ(static_cast<std::size_t>(modes), 0);
    for (int n = 0; n <= max_total; ++n) {
      occ[0] = n;
      s.amp_[occ] = std::exp(-0.5 * std::norm(alpha)) * std::pow(alpha, n) / std::exp(0.5 * std::lgamma(n + 1.0));
    }
    return s;
  }

  // (1/cosh r) sum_n (e^{i phi} tanh r)^n |n, n> on modes (0, 1).
  static FockState two_mode_squeezed(double r, double phi, int max_total) {
    FockState s(2, max_total);
    const cd t = std::polar(std::tanh(r), phi);
    for (int n = 0; 2 * n <= max_total; ++n) s.amp_[{n, n}] = std::pow(t, n) / std::cosh(r);
    return s;
  }

  // Heisenberg action a_i -> cos(t) a_i + e^{i phi} sin(t) a_j, a_j -> cos(t) a_j - e^{-i phi} sin(t) a_i.
  void beamsplitter(int i, int j, double theta, double phi) {
    std::map<int, Eigen::MatrixXcd> blocks;
    std::map<Occupation, cd> out;
    for (const auto& [occ, a] : amp_) {
      const int ni = occ[static_cast<std::size_t>(i)], nj = occ[static_cast<std::size_t>(j)];
      const int k = ni + nj;
      auto it = blocks.find(k);
      if (it == blocks.end()) it = blocks.emplace(k, block(k, theta, phi)).first;
      Occupation t = occ;
      for (int q = 0; q <= k; ++q) {
        const cd w = it->second(q, ni);
        if (w == cd(0.0)) continue;
        t[static_cast<std::size_t>(i)] = q;
        t[static_cast<std::size_t>(j)] = k - q;
        out[t] += w * a;
      }
    }
    amp_ = std::move(out);
  }

  // a_i -> e^{i phi} a_i.
  void phase(int i, double phi) {
    for (auto& [occ, a] : amp_) a *= std::polar(1.0, phi * occ[static_cast<std::size_t>(i)]);
  }

  double norm() const {
    double s = 0.0;
    for (const auto& [occ, a] : amp_) s += std::norm(a);
    return s;
  }

  double probability(const Occupation& n) const {
    auto it = amp_.find(n);
    return it == amp_.end() ? 0.0 : std::norm(it->second);
  }

  // <prod_i n_i^{p_i}>.
  double number_moment(const std::vector<int>& powers) const {
    double s = 0.0;
    for (const auto& [occ, a] : amp_) {
      double v = std::norm(a);
      for (std::size_t i = 0; i < powers.size(); ++i) v *= std::pow(static_cast<double>(occ[i]), powers[i]);
      s += v;
    }
    return s;
  }

  // <a_i a_j>
  cd aa(int i, int j) const { return lower_expect(i, j, false); }
  // <a_j^dag a_i>
  cd adag_a(int j, int i) const { return lower_expect(i, j, true); }

  const std::map<Occupation, cd>& amplitudes() const { return amp_; }

private:
  void fill_product(const std::vector<std::vector<cd>>& per, Occupation& occ, int mode, int total, cd acc) {
    if (mode == m_) {
      amp_[occ] = acc;
      return;
    }
    for (int n = 0; total + n <= nmax_; ++n) {
      const cd c = per[static_cast<std::size_t>(mode)][static_cast<std::size_t>(n)];
      if (c == cd(0.0)) continue;
      occ[static_cast<std::size_t>(mode)] = n;
      fill_product(per, occ, mode + 1, total + n, acc * c);
    }
    occ[static_cast<std::size_t>(mode)] = 0;
  }

  // exp(theta G) on span{|q, k - q>} with G = e^{i phi} a_i^dag a_j - e^{-i phi} a_i a_j^dag.
  static Eigen::MatrixXcd block(int k, double theta, double phi) {
    Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(k + 1, k + 1);
    for (int q = 0; q <= k; ++q) {
      if (q < k) g(q + 1, q) += std::polar(std::sqrt((q + 1.0) * (k - q)), phi);
      if (q > 0) g(q - 1, q) -= std::polar(std::sqrt(q * (k - q + 1.0)), -phi);
    }
    const Eigen::MatrixXcd h = cd(0.0, -1.0) * g; // Hermitian
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (h + h.adjoint()));
    Eigen::VectorXcd ph(k + 1);
    for (int q = 0; q <= k; ++q) ph(q) = std::polar(1.0, theta * es.eigenvalues()(q));
    return es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
  }

  // <a_i a_j> (create == false) or <a_j^dag a_i> (create == true).
  cd lower_expect(int i, int j, bool create) const {
    cd s = 0.0;
    for (const auto& [occ, a] : amp_) {
      Occupation t = occ;
      double f = 1.0;
      if (t[static_cast<std::size_t>(i)] == 0) continue;
      f *= std::sqrt(static_cast<double>(t[static_cast<std::size_t>(i)]));
      --t[static_cast<std::size_t>(i)];
      if (create) {
        ++t[static_cast<std::size_t>(j)];
        f *= std::sqrt(static_cast<double>(t[static_cast<std::size_t>(j)]));
      } else {
        if (t[static_cast<std::size_t>(j)] == 0) continue;
        f *= std::sqrt(static_cast<double>(t[static_cast<std::size_t>(j)]));
        --t[static_cast<std::size_t>(j)];
      }
      auto it = amp_.find(t);
      if (it == amp_.end()) continue;
      // <psi| O |psi> with O|occ> = f |t>: contributes conj(psi_t) f psi_occ.
      s += std::conj(it->second) * f * a;
    }
    return s;
  }

  int m_;
  int nmax_;
  std::map<Occupation, cd> amp_;
};

} // namespace oracle
