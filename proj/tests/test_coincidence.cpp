#include <gtest/gtest.h>

#include <cmath>

#include "oracles/fock.hpp"
#include "sqz/coincidence.hpp"

using namespace sqz;

namespace {

SourceSpec single(SourceKind kind, double n, double el = 1.0, double er = 1.0) {
  return {kind, {n}, {el}, {er}};
}

// Mode 0 carries the source, mode 1 vacuum; a balanced beamsplitter then
// per-arm loss.  Returns Cov(n_3, n_4) from the photon-statistics module.
double beamsplit_covariance(const CovarianceMatrix& source, double eta_l, double eta_r) {
  MatrixXcd s = vacuum_covariance(2).matrix();
  const MatrixXcd src = source.matrix();
  s(0, 0) = src(0, 0);
  s(0, 2) = src(0, 1);
  s(2, 0) = src(1, 0);
  s(2, 2) = src(1, 1);
  auto split = apply_greens(beamsplitter_greens(pi / 4.0), CovarianceMatrix(s));
  LossChannel loss = LossChannel::uniform(2, 1.0);
  loss.eta << eta_l, eta_r;
  split = apply_loss(split, loss);
  return photon_covariance(split)(0, 1);
}

} // namespace

TEST(SplitterCovariance, ClosedForms) {
  const double n = 0.8, el = 0.7, er = 0.55;
  EXPECT_EQ(splitter_covariance(single(SourceKind::coherent, n, el, er)), 0.0);
  EXPECT_NEAR(splitter_covariance(single(SourceKind::thermal, n)), n * n / 4.0, 1e-15);
  EXPECT_NEAR(splitter_covariance(single(SourceKind::thermal, n, el, er)), el * er * n * n / 4.0, 1e-15);
  EXPECT_NEAR(splitter_covariance(single(SourceKind::squeezed, n)), (2.0 * n * n + n) / 4.0, 1e-15);
  EXPECT_NEAR(splitter_covariance(single(SourceKind::squeezed, n, el, er)), el * er * (2.0 * n * n + n) / 4.0, 1e-15);
  EXPECT_LT(splitter_covariance(single(SourceKind::fock, 1.0)), 0.0);
  EXPECT_NEAR(splitter_covariance(single(SourceKind::fock, 3.0)), -0.75, 1e-15);
}

TEST(SplitterCovariance, LossScalingOnParameterGrid) {
  for (double n : {0.01, 0.3, 1.0, 4.0})
    for (double el : {0.1, 0.5, 1.0})
      for (double er : {0.2, 0.9, 1.0}) {
        const double lossless = splitter_covariance(single(SourceKind::squeezed, n));
        EXPECT_NEAR(lossless, 0.25 * (2.0 * n * n + n), 1e-15);
        EXPECT_NEAR(splitter_covariance(single(SourceKind::squeezed, n, el, er)), el * er * lossless, 1e-14);
      }
}

TEST(SplitterCovariance, MatchesBeamsplitCovarianceMatrices) {
  for (double r : {0.2, 0.6, 1.1})
    for (auto [el, er] : {std::pair{1.0, 1.0}, std::pair{0.6, 0.35}}) {
      const auto sq = covariance_from_greens(squeezer_greens(r, 0.4));
      const double n = std::sinh(r) * std::sinh(r);
      EXPECT_NEAR(beamsplit_covariance(sq, el, er), splitter_covariance(single(SourceKind::squeezed, n, el, er)), 1e-10);

      // Half of a two-mode squeezed vacuum is thermal.
      const auto th = trace_out(covariance_from_greens(two_mode_squeezer_greens(r)), {0});
      EXPECT_NEAR(beamsplit_covariance(th, el, er), splitter_covariance(single(SourceKind::thermal, n, el, er)), 1e-10);
    }
}

TEST(SplitterCovariance, CoherentMatchesFockOracle) {
  for (double a : {0.5, 1.2}) {
    auto s = oracle::FockState::coherent(a, 2, 40);
    s.beamsplitter(0, 1, pi / 4.0, 0.0);
    const double c = s.number_moment({1, 1}) - s.number_moment({1, 0}) * s.number_moment({0, 1});
    EXPECT_NEAR(c, splitter_covariance(single(SourceKind::coherent, a * a)), 1e-10);
  }
}

TEST(MultimodeCovariance, SumAdditivityAndLowPhotonSlope) {
  EXPECT_EQ(multimode_covariance({SourceKind::squeezed, {}, {}, {}}), 0.0);
  const SourceSpec a{SourceKind::squeezed, {0.1, 0.4}, {0.5, 0.6}, {0.7, 0.8}};
  const SourceSpec b{SourceKind::squeezed, {0.2}, {0.3}, {0.9}};
  const SourceSpec ab{SourceKind::squeezed, {0.1, 0.4, 0.2}, {0.5, 0.6, 0.3}, {0.7, 0.8, 0.9}};
  EXPECT_NEAR(multimode_covariance(ab), multimode_covariance(a) + multimode_covariance(b), 1e-15);

  const double eta = 0.4;
  SourceSpec dim{SourceKind::squeezed, std::vector<double>(400, 1e-6), std::vector<double>(400, eta), std::vector<double>(400, eta)};
  EXPECT_NEAR(multimode_covariance(dim) / mean_per_detector(dim), eta / 2.0, 1e-5);
}

TEST(MultimodeCovariance, QuadraticFitRecoversTransmission) {
  const double eta = 0.37;
  const std::vector<double> shape = {1.0, 0.8, 0.5, 0.3, 0.2, 0.1, 0.05};
  std::vector<double> mean_n, cov;
  for (int k = 1; k <= 12; ++k) {
    SourceSpec s{SourceKind::squeezed, {}, std::vector<double>(shape.size(), eta), std::vector<double>(shape.size(), eta)};
    for (double x : shape) s.mean_photons.push_back(0.05 * k * x);
    mean_n.push_back(mean_per_detector(s));
    cov.push_back(multimode_covariance(s));
  }
  const auto fit = fit_covariance_sweep(mean_n, cov);
  EXPECT_NEAR(fit.linear, eta / 2.0, 1e-10);
  EXPECT_GT(fit.quadratic, 0.0);
}

TEST(ThresholdCovariance, ParabolaEndpointsAndMaximum) {
  EXPECT_EQ(threshold_covariance(0.3, 0.1, 0.0), 0.0);
  EXPECT_EQ(threshold_covariance(0.3, 0.1, 1.0), 0.0);
  double best = -1.0, arg = -1.0;
  for (int k = 0; k <= 1000; ++k) {
    const double m = k / 1000.0;
    const double c = threshold_covariance(0.3, 0.1, m);
    if (c > best) best = c, arg = m;
  }
  EXPECT_DOUBLE_EQ(arg, 0.5);
  EXPECT_THROW(threshold_covariance(1.2, 0.1, 0.5), ConfigError);
}

TEST(ThresholdCovariance, MonteCarloThresholdedBiphotons) {
  // M modes each emit a pair with probability p; each photon picks a side at
  // random and is detected through the EMCCD model, then thresholded.
  auto cam = EmccdConfig::reference_camera();
  cam.qe = 0.7;
  const int modes = 60;
  const double p_pair = 0.004;
  const std::size_t shots = 100000;
  CountFrames photons = CountFrames::Zero(static_cast<Eigen::Index>(shots), 2);
  for (std::size_t s = 0; s < shots; ++s) {
    auto rng = make_stream(77, s);
    for (int m = 0; m < modes; ++m) {
      if (uniform01(rng) >= p_pair) continue;
      for (int k = 0; k < 2; ++k) ++photons(static_cast<Eigen::Index>(s), uniform01(rng) < 0.5 ? 0 : 1);
    }
  }
  const auto clicks = threshold_frames(simulate_frames(photons, cam, 78), 5.0 * cam.readout_sigma);
  double n3 = 0, n4 = 0, n34 = 0, n3_not4 = 0;
  for (std::size_t s = 0; s < shots; ++s) {
    const bool c3 = clicks(static_cast<Eigen::Index>(s), 0), c4 = clicks(static_cast<Eigen::Index>(s), 1);
    n3 += c3;
    n4 += c4;
    n34 += c3 && c4;
    n3_not4 += c3 && !c4;
  }
  const double N = static_cast<double>(shots);
  const double m3 = n3 / N, m4 = n4 / N;
  const double direct = n34 / N - m3 * m4;
  const double formula = threshold_covariance(n34 / n4, n3_not4 / (N - n4), m4);
  // Standard error of the sample covariance of two Bernoulli variables.
  std::vector<double> prod(shots);
  double mean_prod = 0.0;
  for (std::size_t s = 0; s < shots; ++s) {
    prod[s] = (clicks(static_cast<Eigen::Index>(s), 0) - m3) * (clicks(static_cast<Eigen::Index>(s), 1) - m4);
    mean_prod += prod[s] / N;
  }
  double var = 0.0;
  for (double v : prod) var += (v - mean_prod) * (v - mean_prod) / (N - 1.0);
  const double se = std::sqrt(var / N);
  EXPECT_GT(direct, 5.0 * se);
  EXPECT_LT(std::abs(formula - direct), 3.0 * se);
  // Bernoulli covariance bound.
  EXPECT_LE(std::abs(direct), std::sqrt(m3 * (1 - m3) * m4 * (1 - m4)));
}

namespace {

// Flat frequency spectrum of half-width dw about lambda_0, sampled in wavelength.
void flat_spectrum(double lambda0, double dw, int points, std::vector<double>& lam, std::vector<double>& dens) {
  const double w0 = 2.0 * pi * speed_of_light / lambda0;
  lam.clear();
  dens.clear();
  for (int k = 0; k < points; ++k) {
    const double w = w0 - dw + 2.0 * dw * k / (points - 1);
    lam.push_back(2.0 * pi * speed_of_light / w);
    dens.push_back(1.0);
  }
}

} // namespace

TEST(QeWeightedSlope, UnitQeGivesEtaSquared) {
  std::vector<double> lam, dens;
  const double l0 = 1560e-9;
  flat_spectrum(l0, 2.0 * pi * 5e12, 401, lam, dens);
  const QeCurve unit{{1000e-9, 2500e-9}, {1.0, 1.0}, l0};
  const auto r = qe_weighted_slope(lam, dens, unit, 0.6);
  EXPECT_NEAR(r.slope, 0.36, 1e-12);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(QeWeightedSlope, CutoffOverHalfThePairedSupportHalvesTheSlope) {
  const double l0 = 1560e-9, dw = 2.0 * pi * 5e12;
  std::vector<double> lam, dens;
  flat_spectrum(l0, dw, 4001, lam, dens);
  const double w0 = 2.0 * pi * speed_of_light / l0;
  // Zero QE for frequencies below w0 - dw/2: pairs with |offset| > dw/2 lose their red photon.
  const double cut = 2.0 * pi * speed_of_light / (w0 - 0.5 * dw);
  const QeCurve half{{1000e-9, cut, cut * (1.0 + 1e-12)}, {1.0, 1.0, 0.0}, l0};
  const QeCurve unit{{1000e-9, 2500e-9}, {1.0, 1.0}, l0};
  const double a = qe_weighted_slope(lam, dens, half, 1.0).slope;
  const double b = qe_weighted_slope(lam, dens, unit, 1.0).slope;
  EXPECT_NEAR(a / b, 0.5, 1e-3);
}

TEST(QeWeightedSlope, ReflectionSymmetry) {
  const double l0 = 1560e-9, w0 = 2.0 * pi * speed_of_light / l0;
  std::vector<double> lam, dens, lam_r, dens_r;
  for (int k = 0; k < 301; ++k) {
    const double off = -4e13 + 8e13 * k / 300.0;
    const double d = std::exp(-std::pow((off - 1e13) / 1.5e13, 2));
    lam.push_back(2.0 * pi * speed_of_light / (w0 + off));
    dens.push_back(d);
    lam_r.push_back(2.0 * pi * speed_of_light / (w0 - off));
    dens_r.push_back(d);
  }
  const auto qe = QeCurve::synthetic(l0, 1000e-9, 1650e-9, 1700e-9, 0.8);
  EXPECT_NEAR(qe_weighted_slope(lam, dens, qe, 0.5).slope, qe_weighted_slope(lam_r, dens_r, qe, 0.5).slope, 1e-14);
}

TEST(QeWeightedSlope, OutsideSupportWarnsAndGivesZero) {
  std::vector<double> lam, dens;
  flat_spectrum(3000e-9, 2.0 * pi * 1e12, 51, lam, dens);
  const QeCurve qe{{1000e-9, 1700e-9}, {0.9, 0.9}, 3000e-9};
  const auto r = qe_weighted_slope(lam, dens, qe, 0.5);
  EXPECT_EQ(r.slope, 0.0);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(BiphotonCovariance, ValidityGate) {
  EXPECT_TRUE(biphoton_covariance(0.05, 0.3).warnings.empty());
  EXPECT_NEAR(biphoton_covariance(0.05, 0.3).covariance, 0.015, 1e-15);
  EXPECT_EQ(biphoton_covariance(0.2, 0.3).warnings.size(), 1u);
}
