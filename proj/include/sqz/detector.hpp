#pragma once

// EMCCD measurement chain.  A pixel holding n photoelectrons is amplified to
// an Erlang(n, g) number of electrons, then Gaussian readout noise is added.
// Clock-induced charge and other spurious events enter as a Bernoulli extra
// photoelectron per pixel per frame (dark_rate).
//
// Frames binary (.sqzfrm), little-endian:
//   bytes  0..7   ASCII magic "SQZFRM01"
//   bytes  8..15  uint64 rows (shots)
//   bytes 16..23  uint64 cols (pixels)
//   then rows*cols float64, row-major

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "sqz/io.hpp"
#include "sqz/nlo.hpp"
#include "sqz/photon_stats.hpp"
#include "sqz/rng.hpp"

namespace sqz {

using Frames = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CountFrames = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ClickFrames = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double speed_of_light = 299792458.0;

struct EmccdConfig {
  double gain = 1.0;          // electrons per photoelectron
  double readout_sigma = 0.0; // electrons
  double qe = 1.0;
  double adc_k = 21.43;       // photoelectrons per pixel unit at unit gain
  double bias = 0.0;          // photoelectrons
  double dark_rate = 0.0;     // spurious photoelectrons per pixel per frame

  void validate() const {
    require(gain > 0.0 && std::isfinite(gain), "EmccdConfig: gain must be positive");
    require(readout_sigma >= 0.0 && std::isfinite(readout_sigma), "EmccdConfig: readout_sigma must be >= 0");
    require(qe >= 0.0 && qe <= 1.0, "EmccdConfig: qe must lie in [0, 1]");
    require(adc_k > 0.0 && std::isfinite(adc_k), "EmccdConfig: adc_k must be positive");
    require(std::isfinite(bias), "EmccdConfig: bias must be finite");
    require(dark_rate >= 0.0 && dark_rate <= 1.0, "EmccdConfig: dark_rate must lie in [0, 1]");
  }

  // Camera profile used for the shipped configs.
  static EmccdConfig reference_camera() { return {3000.0, 100.0, 0.95, 21.43, 0.0, 0.0}; }
};

// Bin edges are pixel boundaries in vacuum wavelength (m), strictly increasing.
struct SpectrometerConfig {
  FrequencyGrid fine_grid;
  std::vector<double> bin_edges;
  double psf_sigma = 0.6; // pixels
  std::size_t min_points_per_bin = 4;

  std::size_t pixels() const { return bin_edges.empty() ? 0 : bin_edges.size() - 1; }

  void validate() const {
    require(bin_edges.size() >= 2, "SpectrometerConfig: need at least two bin edges");
    for (std::size_t k = 1; k < bin_edges.size(); ++k)
      require(bin_edges[k] > bin_edges[k - 1], "SpectrometerConfig: bin edges must be strictly increasing");
    require(bin_edges.front() > 0.0, "SpectrometerConfig: wavelengths must be positive");
    require(psf_sigma >= 0.0 && std::isfinite(psf_sigma), "SpectrometerConfig: psf_sigma must be >= 0");
    require(fine_grid.center - 0.5 * static_cast<double>(fine_grid.n - 1) * fine_grid.spacing > 0.0,
            "SpectrometerConfig: fine grid must have positive absolute frequencies");
  }

  static std::vector<double> uniform_edges(double lambda_min, double lambda_max, std::size_t pixels = 512) {
    require(lambda_max > lambda_min && lambda_min > 0.0 && pixels >= 1, "uniform_edges: bad wavelength range");
    std::vector<double> e(pixels + 1);
    for (std::size_t k = 0; k <= pixels; ++k)
      e[k] = lambda_min + (lambda_max - lambda_min) * static_cast<double>(k) / static_cast<double>(pixels);
    return e;
  }
};

// ---------------------------------------------------------------- gain model

inline double readout_noise(const EmccdConfig& cfg, Rng& rng) {
  if (cfg.readout_sigma == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, cfg.readout_sigma)(rng);
}

inline double em_gain_sample(int n, const EmccdConfig& cfg, Rng& rng) {
  require(n >= 0, "em_gain_sample: photoelectron count must be >= 0");
  double x = 0.0;
  if (n > 0) x = std::gamma_distribution<double>(static_cast<double>(n), cfg.gain)(rng);
  return x + readout_noise(cfg, rng);
}

inline std::vector<double> em_gain_sample(int n, const EmccdConfig& cfg, std::size_t draws, std::uint64_t seed) {
  cfg.validate();
  std::vector<double> out(draws);
  for (std::size_t s = 0; s < draws; ++s) {
    auto rng = make_stream(seed, s);
    out[s] = em_gain_sample(n, cfg, rng);
  }
  return out;
}

// Photons -> amplified electrons (bias removed).  Photons are thinned by qe,
// a dark event adds one photoelectron, then gain and readout noise apply.
inline Frames simulate_frames(const CountFrames& photons, const EmccdConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Frames x(photons.rows(), photons.cols());
  for (Eigen::Index s = 0; s < photons.rows(); ++s) {
    auto rng = make_stream(seed, static_cast<std::uint64_t>(s));
    for (Eigen::Index p = 0; p < photons.cols(); ++p) {
      const int n = photons(s, p);
      require(n >= 0, "simulate_frames: negative photon count");
      int pe = n > 0 ? std::binomial_distribution<int>(n, cfg.qe)(rng) : 0;
      if (cfg.dark_rate > 0.0 && uniform01(rng) < cfg.dark_rate) ++pe;
      x(s, p) = em_gain_sample(pe, cfg, rng);
    }
  }
  return x;
}

// ------------------------------------------------------- analog inversion

// Raw moments of amplified signals, in electrons.  m2(i, j) = <x_i x_j>
// (diagonal <x_i^2>), m21(i, j) = <x_i^2 x_j>, m22(i, j) = <x_i^2 x_j^2>.
struct RawMoments {
  VectorXd m1;
  MatrixXd m2, m21, m22;
  std::size_t shots = 0;
};

// Photon-number moments: nn(i, j) = <n_i n_j> (diagonal <n_i^2>),
// n2n(i, j) = <n_i^2 n_j>, n2n2(i, j) = <n_i^2 n_j^2>; off-diagonal only for
// the higher orders.
struct PhotonMoments {
  VectorXd n;
  MatrixXd nn, n2n, n2n2;

  MatrixXd covariance() const { return nn - n * n.transpose(); }
};

inline RawMoments raw_moments(const Frames& x) {
  const Eigen::Index s = x.rows(), p = x.cols();
  require(s > 0, "raw_moments: no frames");
  const MatrixXd a = x;
  const MatrixXd a2 = a.cwiseAbs2();
  const double inv = 1.0 / static_cast<double>(s);
  RawMoments r;
  r.shots = static_cast<std::size_t>(s);
  r.m1 = a.colwise().sum().transpose() * inv;
  r.m2 = a.transpose() * a * inv;
  r.m21 = a2.transpose() * a * inv;
  r.m22 = a2.transpose() * a2 * inv;
  (void)p;
  return r;
}

// Inverts <x^k>_n = g^k (n + k - 1)! / (n - 1)! moment by moment.  Zero-mean
// readout noise of width sigma_r is removed from the even orders.
inline PhotonMoments analog_invert_moments(const RawMoments& x, double g, double sigma_r = 0.0) {
  require(g > 0.0, "analog_invert_moments: gain must be positive");
  const Eigen::Index p = x.m1.size();
  const double s2 = sigma_r * sigma_r;
  // Noise-free raw moments y.
  const VectorXd y1 = x.m1;
  MatrixXd y2 = x.m2;
  for (Eigen::Index i = 0; i < p; ++i) y2(i, i) -= s2;
  MatrixXd y21 = x.m21, y22 = x.m22;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j) continue;
      y21(i, j) -= s2 * y1(j);
      y22(i, j) -= s2 * (y2(i, i) + y2(j, j)) + s2 * s2;
    }

  const double g2 = g * g, g3 = g2 * g, g4 = g3 * g;
  PhotonMoments n;
  n.n = y1 / g;
  n.nn = y2 / g2;
  for (Eigen::Index i = 0; i < p; ++i) n.nn(i, i) -= y1(i) / g;
  n.n2n = MatrixXd::Zero(p, p);
  n.n2n2 = MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j) continue;
      n.n2n(i, j) = y21(i, j) / g3 - y2(i, j) / g2;
      n.n2n2(i, j) = y22(i, j) / g4 - y21(i, j) / g3 - y21(j, i) / g3 + y2(i, j) / g2;
    }
  return n;
}

// ------------------------------------------------------------ thresholding

// P(Exp(g) + N(0, s^2) > t).
inline double erlang1_exceed(double t, double g, double s) {
  if (s == 0.0) return t < 0.0 ? 1.0 : std::exp(-t / g);
  const boost::math::normal unit;
  const double q = boost::math::cdf(boost::math::complement(unit, t / s));
  const double tail = std::exp(-t / g + s * s / (2.0 * g * g)) * boost::math::cdf(unit, t / s - s / g);
  return std::clamp(q + (std::isfinite(tail) ? tail : 0.0), 0.0, 1.0);
}

struct RocPoint {
  double threshold, false_rate, pde;
};

inline std::vector<RocPoint> roc_curve(const EmccdConfig& cfg, const std::vector<double>& thresholds) {
  cfg.validate();
  require(cfg.readout_sigma > 0.0, "roc_curve: readout_sigma must be positive");
  const boost::math::normal unit;
  std::vector<RocPoint> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    double noise, signal;
    if (t == -std::numeric_limits<double>::infinity()) {
      noise = signal = 1.0;
    } else if (t == std::numeric_limits<double>::infinity()) {
      noise = signal = 0.0;
    } else {
      noise = boost::math::cdf(boost::math::complement(unit, t / cfg.readout_sigma));
      signal = erlang1_exceed(t, cfg.gain, cfg.readout_sigma);
    }
    const double fr = (1.0 - cfg.dark_rate) * noise + cfg.dark_rate * signal;
    out.push_back({t, fr, cfg.qe * signal});
  }
  return out;
}

inline void write_roc_csv(const std::filesystem::path& p, const std::vector<RocPoint>& roc) {
  io::CsvWriter w({"threshold", "false_rate", "pde"});
  for (const auto& r : roc) w.row(std::vector<double>{r.threshold, r.false_rate, r.pde});
  w.save(p);
}

inline ClickFrames threshold_frames(const Frames& x, double t) {
  ClickFrames c(x.rows(), x.cols());
  for (Eigen::Index s = 0; s < x.rows(); ++s)
    for (Eigen::Index p = 0; p < x.cols(); ++p) c(s, p) = x(s, p) > t ? 1 : 0;
  return c;
}

inline double pixel_to_photoelectrons(double p, const EmccdConfig& cfg) { return cfg.adc_k * p / cfg.gain - cfg.bias; }

// ---------------------------------------------------------------- binning

struct BinnedStats {
  VectorXd mean;
  MatrixXd covariance;
};

// weights(j, i): probability that a photon of fine point i lands in pixel j.
inline MatrixXd pixel_weights(const SpectrometerConfig& cfg) {
  cfg.validate();
  const auto& e = cfg.bin_edges;
  const std::size_t np = cfg.pixels(), nf = cfg.fine_grid.n;
  MatrixXd w = MatrixXd::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(nf));
  std::vector<std::size_t> per_bin(np, 0);
  const boost::math::normal unit;
  for (std::size_t i = 0; i < nf; ++i) {
    const double lambda = 2.0 * pi * speed_of_light / cfg.fine_grid.omega(i);
    if (lambda < e.front() || lambda > e.back())
      throw ConfigError("bin_covariance: fine point " + std::to_string(i) + " lies outside the pixel range");
    const auto it = std::upper_bound(e.begin(), e.end(), lambda);
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - e.begin()) - 1, np - 1);
    ++per_bin[k];
    const auto col = static_cast<Eigen::Index>(i);
    if (cfg.psf_sigma == 0.0) {
      w(static_cast<Eigen::Index>(k), col) = 1.0;
      continue;
    }
    const double u = static_cast<double>(k) + (lambda - e[k]) / (e[k + 1] - e[k]);
    for (std::size_t j = 0; j < np; ++j) {
      const double lo = (static_cast<double>(j) - u) / cfg.psf_sigma;
      const double hi = (static_cast<double>(j) + 1.0 - u) / cfg.psf_sigma;
      if (hi < -12.0 || lo > 12.0) continue;
      w(static_cast<Eigen::Index>(j), col) = boost::math::cdf(unit, hi) - boost::math::cdf(unit, lo);
    }
    w.col(col) /= w.col(col).sum();
  }
  for (std::size_t k = 0; k < np; ++k)
    if (per_bin[k] < cfg.min_points_per_bin)
      throw ConfigError("bin_covariance: pixel " + std::to_string(k) + " holds " + std::to_string(per_bin[k]) +
                        " fine points, need " + std::to_string(cfg.min_points_per_bin));
  return w;
}

// Each photon of fine point i lands in pixel j independently with w(j, i):
//   <N> = W <n>,  Cov(N) = W C W^T + diag(W <n>) - W diag(<n>) W^T.
inline BinnedStats bin_photon_stats(const VectorXd& mean, const MatrixXd& cov, const MatrixXd& w) {
  require(w.cols() == mean.size() && cov.rows() == mean.size() && cov.cols() == mean.size(),
          "bin_photon_stats: dimension mismatch");
  BinnedStats b;
  b.mean = w * mean;
  b.covariance = w * cov * w.transpose();
  b.covariance.diagonal() += b.mean;
  b.covariance -= w * mean.asDiagonal() * w.transpose();
  return b;
}

inline BinnedStats bin_covariance(const CovarianceMatrix& fine_sigma, const SpectrometerConfig& cfg) {
  require(fine_sigma.modes() == cfg.fine_grid.n, "bin_covariance: covariance does not match the fine grid");
  return bin_photon_stats(mean_photons(fine_sigma), photon_covariance(fine_sigma), pixel_weights(cfg));
}

// ------------------------------------------------------- pixel sampling

namespace detail {

// Inverse CDF of Poisson (var <= mean) or negative binomial (var > mean).
inline int count_quantile(double mean, double var, double u) {
  if (mean <= 0.0) return 0;
  double pk, k_ratio_a, k_ratio_b;
  if (var > mean * (1.0 + 1e-12)) {
    const double r = mean * mean / (var - mean);
    const double p = r / (r + mean);
    pk = std::exp(r * std::log(p));
    k_ratio_a = r;
    k_ratio_b = 1.0 - p;
  } else {
    pk = std::exp(-mean);
    k_ratio_a = 0.0;
    k_ratio_b = mean;
  }
  double cdf = pk;
  int k = 0;
  const int cap = static_cast<int>(mean + 60.0 * std::sqrt(std::max(var, mean)) + 60.0);
  while (cdf < u && k < cap) {
    pk *= (k_ratio_a == 0.0 ? k_ratio_b / (k + 1.0) : (k + k_ratio_a) / (k + 1.0) * k_ratio_b);
    ++k;
    cdf += pk;
  }
  return k;
}

} // namespace detail

// Approximate pixel photon-count sampler for many modes: matches the given
// means and variances exactly per pixel and carries the correlation through a
// Gaussian copula.  Not an exact boson sampler.
inline CountFrames sample_pixel_counts(const BinnedStats& stats, std::size_t shots, std::uint64_t seed) {
  const Eigen::Index p = stats.mean.size();
  VectorXd sd(p);
  for (Eigen::Index i = 0; i < p; ++i) sd(i) = std::sqrt(std::max(stats.covariance(i, i), 0.0));
  MatrixXd corr = MatrixXd::Identity(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      if (i != j && sd(i) > 0.0 && sd(j) > 0.0) corr(i, j) = stats.covariance(i, j) / (sd(i) * sd(j));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(corr);
  const VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd l = es.eigenvectors() * ev.asDiagonal();
  const boost::math::normal unit;
  CountFrames out(static_cast<Eigen::Index>(shots), p);
  VectorXd z(p);
  for (std::size_t s = 0; s < shots; ++s) {
    auto rng = make_stream(seed, s);
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < p; ++i) z(i) = nd(rng);
    const VectorXd c = l * z;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double u = boost::math::cdf(unit, std::clamp(c(i), -37.0, 37.0));
      out(static_cast<Eigen::Index>(s), i) = detail::count_quantile(stats.mean(i), stats.covariance(i, i), u);
    }
  }
  return out;
}

// -------------------------------------------------------------- frame files

template <typename Derived>
inline std::string frames_to_csv(const Eigen::MatrixBase<Derived>& f) {
  std::vector<std::string> header;
  for (Eigen::Index p = 0; p < f.cols(); ++p) header.push_back("pixel_" + std::to_string(p));
  io::CsvWriter w(header);
  std::vector<double> row(static_cast<std::size_t>(f.cols()));
  for (Eigen::Index s = 0; s < f.rows(); ++s) {
    for (Eigen::Index p = 0; p < f.cols(); ++p) row[static_cast<std::size_t>(p)] = static_cast<double>(f(s, p));
    w.row(row);
  }
  return w.str();
}

inline constexpr char frames_magic[8] = {'S', 'Q', 'Z', 'F', 'R', 'M', '0', '1'};

inline void write_frames_binary(const std::filesystem::path& path, const Frames& f) {
  auto out = io::open_out(path, true);
  const std::uint64_t r = static_cast<std::uint64_t>(f.rows()), c = static_cast<std::uint64_t>(f.cols());
  out.write(frames_magic, 8);
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&c), 8);
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(sizeof(double) * r * c));
  if (!out) throw IoError("write_frames_binary: write failed for " + path.string());
}

inline Frames read_frames_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_frames_binary: cannot open " + path.string());
  char magic[8];
  std::uint64_t r = 0, c = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&r), 8);
  in.read(reinterpret_cast<char*>(&c), 8);
  if (!in || std::memcmp(magic, frames_magic, 8) != 0) throw IoError("read_frames_binary: bad header in " + path.string());
  Frames f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(sizeof(double) * r * c));
  if (!in) throw IoError("read_frames_binary: truncated data in " + path.string());
  return f;
}

} // namespace sqz
