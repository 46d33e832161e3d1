#pragma once

// Multimode zero-mean Gaussian states in the annihilation/creation basis
// xi = [a_1..a_M, a_1^dag..a_M^dag].  Covariance sigma = 1/2 <{xi, xi^dag}>,
// vacuum = I/2.  Green's functions a_out = C a_in + S a_in^dag.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sqz/core.hpp"

namespace sqz {

class CovarianceMatrix {
public:
  CovarianceMatrix() = default;

  // Takes a 2M x 2M matrix in the fixed basis; checks shape and Hermiticity.
  explicit CovarianceMatrix(MatrixXcd data) : data_(std::move(data)) {
    require(data_.rows() == data_.cols(), "covariance matrix must be square");
    require(data_.rows() > 0 && data_.rows() % 2 == 0, "covariance matrix must be 2M x 2M with M >= 1");
    const double scale = std::max(1.0, max_abs(data_));
    require(max_abs(data_ - data_.adjoint()) <= 1e-12 * scale,
            "covariance matrix is not Hermitian");
  }

  std::size_t modes() const { return static_cast<std::size_t>(data_.rows() / 2); }
  const MatrixXcd& matrix() const { return data_; }

  // Quadrants of sigma = [[V + I/2, U], [U*, V^T + I/2]].
  // V_ij = <a_j^dag a_i>, U_ij = <a_i a_j>.
  MatrixXcd V() const {
    const auto m = static_cast<Eigen::Index>(modes());
    return data_.topLeftCorner(m, m) - 0.5 * MatrixXcd::Identity(m, m);
  }
  MatrixXcd U() const {
    const auto m = static_cast<Eigen::Index>(modes());
    return data_.topRightCorner(m, m);
  }

  // Fixed commutation form of the basis: [xi_i, xi_j^dag] = K_ij, K = diag(I, -I).
  static MatrixXcd commutation_form(std::size_t m) {
    const auto n = static_cast<Eigen::Index>(m);
    MatrixXcd k = MatrixXcd::Zero(2 * n, 2 * n);
    k.topLeftCorner(n, n).setIdentity();
    k.bottomRightCorner(n, n) = -MatrixXcd::Identity(n, n);
    return k;
  }

  // Smallest eigenvalue of sigma + K/2 (= <xi xi^dag>); physical states have it >= 0.
  double physicality_margin() const {
    MatrixXcd g = data_ + 0.5 * commutation_form(modes());
    g = 0.5 * (g + g.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(g, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  bool is_physical(double tol = 1e-9) const {
    return physicality_margin() >= -tol * std::max(1.0, max_abs(data_));
  }

private:
  MatrixXcd data_;
};

struct GreensFunction {
  MatrixXcd C; // M_out x M_in
  MatrixXcd S; // M_out x M_in

  GreensFunction() = default;
  GreensFunction(MatrixXcd c, MatrixXcd s) : C(std::move(c)), S(std::move(s)) {
    require(C.rows() == S.rows() && C.cols() == S.cols(), "C and S blocks must have equal shape");
  }

  static GreensFunction identity(std::size_t m) {
    const auto n = static_cast<Eigen::Index>(m);
    return {MatrixXcd::Identity(n, n), MatrixXcd::Zero(n, n)};
  }

  std::size_t modes_out() const { return static_cast<std::size_t>(C.rows()); }
  std::size_t modes_in() const { return static_cast<std::size_t>(C.cols()); }
  bool square() const { return C.rows() == C.cols(); }

  // Full map on xi: [[C, S], [S*, C*]].
  MatrixXcd full() const {
    const auto r = C.rows(), c = C.cols();
    MatrixXcd g(2 * r, 2 * c);
    g << C, S, S.conjugate(), C.conjugate();
    return g;
  }
};

struct LossChannel {
  VectorXd eta; // per-mode transmission in [0, 1]
  VectorXd nu;  // per-mode added noise nbar + 1/2, >= 1/2

  static LossChannel uniform(std::size_t m, double eta, double nu = 0.5) {
    const auto n = static_cast<Eigen::Index>(m);
    return {VectorXd::Constant(n, eta), VectorXd::Constant(n, nu)};
  }
};

struct SupermodeDecomposition {
  std::vector<double> squeezing_params; // r_i >= 0, descending
  MatrixXcd output_modes;               // unitary, column i = output supermode i
  MatrixXcd input_modes;                // unitary, column i = input supermode i

  // C = U_out cosh(r) U_in^dag, S = U_out sinh(r) U_in^T.
  GreensFunction reconstruct() const {
    const auto m = static_cast<Eigen::Index>(squeezing_params.size());
    VectorXd ch(m), sh(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      ch(i) = std::cosh(squeezing_params[static_cast<std::size_t>(i)]);
      sh(i) = std::sinh(squeezing_params[static_cast<std::size_t>(i)]);
    }
    return {output_modes * ch.asDiagonal() * input_modes.adjoint(),
            output_modes * sh.asDiagonal() * input_modes.transpose()};
  }
};

// ---------------------------------------------------------------------------
// Constructors for elementary operations

inline CovarianceMatrix vacuum_covariance(std::size_t m) {
  require(m >= 1, "vacuum_covariance: mode count must be >= 1");
  const auto n = static_cast<Eigen::Index>(2 * m);
  return CovarianceMatrix(0.5 * MatrixXcd::Identity(n, n));
}

// a -> cosh(r) a + e^{i phi} sinh(r) a^dag
inline GreensFunction squeezer_greens(double r, double phi = 0.0) {
  require(std::isfinite(r) && std::isfinite(phi), "squeezer_greens: non-finite parameter");
  MatrixXcd c(1, 1), s(1, 1);
  c(0, 0) = std::cosh(r);
  s(0, 0) = std::polar(std::sinh(r), phi);
  return {c, s};
}

// a -> cosh(r) a + e^{i phi} sinh(r) b^dag, b -> cosh(r) b + e^{i phi} sinh(r) a^dag
inline GreensFunction two_mode_squeezer_greens(double r, double phi = 0.0) {
  MatrixXcd c = std::cosh(r) * MatrixXcd::Identity(2, 2);
  MatrixXcd s = MatrixXcd::Zero(2, 2);
  s(0, 1) = s(1, 0) = std::polar(std::sinh(r), phi);
  return {c, s};
}

// a -> cos(t) a + e^{i phi} sin(t) b, b -> cos(t) b - e^{-i phi} sin(t) a
inline GreensFunction beamsplitter_greens(double theta, double phi = 0.0) {
  MatrixXcd c(2, 2);
  c << std::cos(theta), std::polar(std::sin(theta), phi),
      -std::polar(std::sin(theta), -phi), std::cos(theta);
  return {c, MatrixXcd::Zero(2, 2)};
}

inline GreensFunction phase_greens(const VectorXd& phases) {
  VectorXcd d(phases.size());
  for (Eigen::Index i = 0; i < phases.size(); ++i) d(i) = std::polar(1.0, phases(i));
  const auto n = phases.size();
  return {MatrixXcd(d.asDiagonal()), MatrixXcd::Zero(n, n)};
}

inline GreensFunction passive_greens(const MatrixXcd& unitary) {
  return {unitary, MatrixXcd::Zero(unitary.rows(), unitary.cols())};
}

// Places a k-mode operation on the listed modes of an m-mode system.
inline GreensFunction embed(const GreensFunction& g, const std::vector<std::size_t>& modes, std::size_t m) {
  require(g.square() && g.modes_in() == modes.size(), "embed: operation size must match mode list");
  GreensFunction out = GreensFunction::identity(m);
  for (std::size_t a = 0; a < modes.size(); ++a) {
    require(modes[a] < m, "embed: mode index out of range");
    out.C(static_cast<Eigen::Index>(modes[a]), static_cast<Eigen::Index>(modes[a])) = 0.0;
  }
  for (std::size_t a = 0; a < modes.size(); ++a)
    for (std::size_t b = 0; b < modes.size(); ++b) {
      const auto ia = static_cast<Eigen::Index>(modes[a]), ib = static_cast<Eigen::Index>(modes[b]);
      out.C(ia, ib) = g.C(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      out.S(ia, ib) = g.S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  return out;
}

// Apply `first`, then `second`.
inline GreensFunction compose(const GreensFunction& second, const GreensFunction& first) {
  require(second.modes_in() == first.modes_out(), "compose: dimension mismatch");
  return {second.C * first.C + second.S * first.S.conjugate(),
          second.C * first.S + second.S * first.C.conjugate()};
}

// ---------------------------------------------------------------------------
// Operations on covariance matrices

inline CovarianceMatrix covariance_from_greens(const GreensFunction& g) {
  require(g.square(), "covariance_from_greens: Green's function must be square");
  const MatrixXcd full = g.full();
  MatrixXcd sigma = 0.5 * full * full.adjoint();
  sigma = 0.5 * (sigma + sigma.adjoint()).eval();
  return CovarianceMatrix(std::move(sigma));
}

// sigma -> G sigma G^dag.  G may be rectangular (M_out != M_in).
inline CovarianceMatrix apply_greens(const GreensFunction& g, const CovarianceMatrix& sigma) {
  require(g.modes_in() == sigma.modes(), "apply_greens: dimension mismatch");
  const MatrixXcd full = g.full();
  MatrixXcd out = full * sigma.matrix() * full.adjoint();
  out = 0.5 * (out + out.adjoint()).eval();
  return CovarianceMatrix(std::move(out));
}

// sigma -> sqrt(eta eta^T) o sigma + (1 - eta) o nu o I, eta broadcast over both basis halves.
inline CovarianceMatrix apply_loss(const CovarianceMatrix& sigma, const LossChannel& chan) {
  const auto m = static_cast<Eigen::Index>(sigma.modes());
  require(chan.eta.size() == m && chan.nu.size() == m, "apply_loss: channel length must equal mode count");
  for (Eigen::Index i = 0; i < m; ++i) {
    require(chan.eta(i) >= 0.0 && chan.eta(i) <= 1.0, "apply_loss: eta outside [0, 1]");
    require(chan.nu(i) >= 0.5, "apply_loss: nu must be >= 1/2");
  }
  VectorXd root(2 * m), add(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    root(i) = root(i + m) = std::sqrt(chan.eta(i));
    add(i) = add(i + m) = (1.0 - chan.eta(i)) * chan.nu(i);
  }
  MatrixXcd out = (root * root.transpose()).cast<cd>().cwiseProduct(sigma.matrix());
  out.diagonal() += add.cast<cd>();
  return CovarianceMatrix(std::move(out));
}

// Principal submatrix over the kept modes (both basis halves).
inline CovarianceMatrix trace_out(const CovarianceMatrix& sigma, const std::vector<std::size_t>& keep) {
  require(!keep.empty(), "trace_out: keep set must be nonempty");
  const std::size_t m = sigma.modes();
  std::vector<Eigen::Index> idx;
  idx.reserve(2 * keep.size());
  for (auto k : keep) {
    require(k < m, "trace_out: mode index out of range");
    idx.push_back(static_cast<Eigen::Index>(k));
  }
  for (auto k : keep) idx.push_back(static_cast<Eigen::Index>(k + m));
  return CovarianceMatrix(sigma.matrix()(idx, idx));
}

// Rotates each mode's local phase so that every U_ii is real and nonnegative.
// Photon-number statistics are unchanged by this.
inline CovarianceMatrix gauge_fix(const CovarianceMatrix& sigma) {
  const auto m = static_cast<Eigen::Index>(sigma.modes());
  const MatrixXcd u = sigma.U();
  VectorXcd ph(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double theta = std::abs(u(i, i)) > 0.0 ? -0.5 * std::arg(u(i, i)) : 0.0;
    ph(i) = std::polar(1.0, theta);
    ph(i + m) = std::conj(ph(i));
  }
  MatrixXcd out = ph.asDiagonal() * sigma.matrix() * ph.conjugate().asDiagonal();
  for (Eigen::Index i = 0; i < m; ++i) out(i, i + m) = out(i + m, i) = std::abs(out(i, i + m));
  return CovarianceMatrix(std::move(out));
}

// ---------------------------------------------------------------------------
// Symplectic structure

// max(|CC^dag - SS^dag - I|, |CS^T - SC^T|), entrywise max norm.
inline double symplectic_residual(const GreensFunction& g) {
  require(g.square(), "symplectic_residual: Green's function must be square");
  const auto m = g.C.rows();
  const double a = max_abs(g.C * g.C.adjoint() - g.S * g.S.adjoint() - MatrixXcd::Identity(m, m));
  const double b = max_abs(g.C * g.S.transpose() - g.S * g.C.transpose());
  return std::max(a, b);
}

namespace detail {

// Quadrature basis x = a + a^dag, p = i(a^dag - a):  [x; p] = R [a; a^dag].
inline MatrixXcd quadrature_transform(Eigen::Index m) {
  MatrixXcd r(2 * m, 2 * m);
  const MatrixXcd id = MatrixXcd::Identity(m, m);
  r << id, id, -I1 * id, I1 * id;
  return r;
}

inline MatrixXd to_quadrature(const GreensFunction& g) {
  const auto m = g.C.rows();
  const MatrixXcd r = quadrature_transform(m);
  const MatrixXcd rinv = 0.5 * r.adjoint();
  return (r * g.full() * rinv).real();
}

// Orthogonal symplectic [[A, -B], [B, A]] -> unitary A + iB.
inline MatrixXcd orthosymplectic_to_unitary(const MatrixXd& o) {
  const auto m = o.rows() / 2;
  return o.topLeftCorner(m, m).cast<cd>() + I1 * o.bottomLeftCorner(m, m).cast<cd>();
}

// Omega^T v for v = (a; b) is (-b; a).
inline VectorXd omega_t(const VectorXd& v) {
  const auto m = v.size() / 2;
  VectorXd w(v.size());
  w.head(m) = -v.tail(m);
  w.tail(m) = v.head(m);
  return w;
}

} // namespace detail

// Bloch-Messiah decomposition of a lossless Green's function, computed in the
// real quadrature basis: G' = O_out diag(e^r, e^-r) O_in^T.  The polar factor
// P = (G' G'^T)^{1/2} comes from one SVD; its eigenvectors are paired as
// (v, Omega^T v) with eigenvalues (s, 1/s), processing in descending order and
// orthogonalising against earlier pairs so that degenerate blocks (including
// s = 1) still yield an orthogonal symplectic O_out.
inline SupermodeDecomposition bloch_messiah(const GreensFunction& g, double symplectic_tol = 1e-6) {
  require(g.square(), "bloch_messiah: Green's function must be square");
  const double res = symplectic_residual(g);
  if (!(res <= symplectic_tol))
    throw ConfigError("bloch_messiah: input is not symplectic (residual " + std::to_string(res) + ")");

  const auto m = g.C.rows();
  const MatrixXd q = detail::to_quadrature(g);
  Eigen::JacobiSVD<MatrixXd> svd(q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const MatrixXd& u = svd.matrixU();
  const MatrixXd polar_o = u * svd.matrixV().transpose(); // G' = P * polar_o
  const MatrixXd p = u * svd.singularValues().asDiagonal() * u.transpose();

  MatrixXd o_out = MatrixXd::Zero(2 * m, 2 * m);
  Eigen::Index accepted = 0;
  for (Eigen::Index c = 0; c < 2 * m && accepted < m; ++c) {
    VectorXd w = u.col(c);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index k = 0; k < accepted; ++k) {
        w -= o_out.col(k).dot(w) * o_out.col(k);
        w -= o_out.col(k + m).dot(w) * o_out.col(k + m);
      }
    const double nrm = w.norm();
    if (nrm < 0.5) continue;
    w /= nrm;
    o_out.col(accepted) = w;
    o_out.col(accepted + m) = detail::omega_t(w);
    ++accepted;
  }
  if (accepted != m) throw NumericError("bloch_messiah: failed to build a symplectic eigenbasis");

  std::vector<double> s(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double rq = o_out.col(i).dot(p * o_out.col(i));
    s[static_cast<std::size_t>(i)] = std::max(rq, 1.0);
  }

  // Order: descending r; ties broken by the first significant component of the
  // output mode; each mode's sign fixed so that component has positive real part.
  MatrixXcd uo = detail::orthosymplectic_to_unitary(o_out);
  auto first_sig = [&](Eigen::Index col) {
    for (Eigen::Index k = 0; k < m; ++k)
      if (std::abs(uo(k, col)) > 1e-6) return k;
    return m;
  };
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double ra = std::log(s[static_cast<std::size_t>(a)]), rb = std::log(s[static_cast<std::size_t>(b)]);
    if (std::abs(ra - rb) > 1e-9 * std::max(1.0, std::abs(ra))) return ra > rb;
    return first_sig(a) < first_sig(b);
  });

  MatrixXd sorted = MatrixXd::Zero(2 * m, 2 * m);
  SupermodeDecomposition out;
  out.squeezing_params.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    double sign = 1.0;
    const Eigen::Index k = first_sig(src);
    if (k < m) {
      const cd lead = uo(k, src);
      const bool neg = std::abs(lead.real()) > 1e-12 ? lead.real() < 0.0 : lead.imag() < 0.0;
      if (neg) sign = -1.0;
    }
    sorted.col(i) = sign * o_out.col(src);
    sorted.col(i + m) = sign * o_out.col(src + m);
    out.squeezing_params[static_cast<std::size_t>(i)] = std::log(s[static_cast<std::size_t>(src)]);
  }
  const MatrixXd o_in = polar_o.transpose() * sorted;
  out.output_modes = detail::orthosymplectic_to_unitary(sorted);
  out.input_modes = detail::orthosymplectic_to_unitary(o_in);
  return out;
}

// Max entrywise deviation between G and the decomposition's reconstruction,
// relative to max(1, |G|).
inline double reconstruction_residual(const GreensFunction& g, const SupermodeDecomposition& d) {
  const GreensFunction r = d.reconstruct();
  const double scale = std::max({1.0, max_abs(g.C), max_abs(g.S)});
  return std::max(max_abs(g.C - r.C), max_abs(g.S - r.S)) / scale;
}

inline double unitarity_residual(const MatrixXcd& u) {
  return max_abs(u.adjoint() * u - MatrixXcd::Identity(u.cols(), u.cols()));
}

} // namespace sqz
