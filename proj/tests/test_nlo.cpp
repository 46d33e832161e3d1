#include <random>

#include <gtest/gtest.h>

#include "afc_fixtures.hpp"
#include "sqz/nlo.hpp"
#include "sqz/photon_stats.hpp"

using namespace sqz;

namespace {

PropagationConfig dopa_config(std::size_t n, double length, std::size_t steps) {
  PropagationConfig c;
  c.signal = FrequencyGrid(n, 0.0, 1.0);
  c.length = length;
  c.z_steps = steps;
  return c;
}

} // namespace

TEST(FrequencyGrid, SymmetricAboutCenter) {
  const FrequencyGrid g(6, 10.0, 0.5);
  EXPECT_DOUBLE_EQ(g.offset(0), -1.25);
  EXPECT_DOUBLE_EQ(g.offset(5), 1.25);
  EXPECT_DOUBLE_EQ(g.omega(2) + g.omega(3), 20.0);
  EXPECT_THROW(FrequencyGrid(4, 0.0, 0.0), ConfigError);
}

TEST(Dispersion, TaylorSeries) {
  DispersionProfile d;
  d.offset = 1.0;
  d.beta_coeffs = {2.0, 6.0, 12.0};
  EXPECT_DOUBLE_EQ(d(0.5), 1.0 + 1.0 + 3.0 * 0.25 + 2.0 * 0.125);
  d.beta0_rate = 4.0;
  EXPECT_DOUBLE_EQ(d.phase(0.0, 1.0, 2.0), 1.0 + 2.0 * 3.0);
}

TEST(ShapePump, MasksApply) {
  auto p = PumpPulse::gaussian(FrequencyGrid(9, 0.0, 1.0), 2.0, 2.0);
  EXPECT_EQ(max_abs(shape_pump(p) - p.amplitude), 0.0);
  p.mu.head(4).setZero();
  const VectorXcd a = shape_pump(p);
  EXPECT_EQ(max_abs(a.head(4)), 0.0);
  p.mu.setConstant(0.25);
  p.phi.setConstant(0.3);
  const VectorXcd b = shape_pump(p);
  EXPECT_NEAR(b.squaredNorm() / p.amplitude.squaredNorm(), 0.25, 1e-14);
  p.mu(0) = 1.5;
  EXPECT_THROW(shape_pump(p), ConfigError);
}

TEST(CouplingMatrix, ToeplitzStructure) {
  const FrequencyGrid g(9, 0.0, 1.0);
  const auto mono = PumpPulse::monochromatic(g, 1.0);
  const MatrixXcd k1 = lz_coupling_matrix(mono.amplitude, 5, 5);
  EXPECT_EQ(max_abs(k1 - MatrixXcd::Identity(5, 5)), 0.0);

  VectorXcd two = VectorXcd::Zero(9);
  two(4) = 1.0;
  two(6) = cd(0.0, 2.0);
  const MatrixXcd k2 = lz_coupling_matrix(two, 5, 5);
  int diagonals = 0;
  for (int d = -4; d <= 4; ++d) {
    bool any = false;
    for (int j = 0; j < 5; ++j)
      if (j - d >= 0 && j - d < 5 && std::abs(k2(j, j - d)) > 0) any = true;
    diagonals += any;
  }
  EXPECT_EQ(diagonals, 2);

  const auto gp = PumpPulse::gaussian(g, 1.0, 1.5);
  const MatrixXcd kg = lz_coupling_matrix(gp.amplitude, 6, 4);
  for (int j = 1; j < 6; ++j)
    for (int l = 1; l < 4; ++l) EXPECT_EQ(kg(j, l), kg(j - 1, l - 1));
  EXPECT_THROW(lz_coupling_matrix(gp.amplitude, 5, 4), ConfigError);
}

TEST(SolveDopa, ZeroPumpIsPureDispersion) {
  auto cfg = dopa_config(5, 2.0, 32);
  DispersionProfile d;
  d.beta_coeffs = {0.3, 0.7};
  const auto pump = PumpPulse::monochromatic(FrequencyGrid(9, 0.0, 1.0), 0.0);
  const auto r = solve_dopa(pump, d, cfg);
  EXPECT_EQ(max_abs(r.greens.S), 0.0);
  for (std::size_t j = 0; j < 5; ++j) {
    const cd expect = std::polar(1.0, d(cfg.signal.offset(j)) * cfg.length);
    EXPECT_LT(std::abs(r.greens.C(j, j) - expect), 1e-12);
  }
}

TEST(SolveDopa, MonochromaticPhaseMatchedGain) {
  auto cfg = dopa_config(1, 1.0, 400);
  cfg.kappa = 0.9;
  const double amp = 1.2;
  const auto pump = PumpPulse::monochromatic(FrequencyGrid(1, 0.0, 1.0), amp);
  const auto r = solve_dopa(pump, DispersionProfile{}, cfg);
  const double g = cfg.kappa * amp * cfg.length;
  EXPECT_NEAR(r.greens.C(0, 0).real(), std::cosh(g), 1e-4 * std::cosh(g));
  EXPECT_NEAR(std::abs(r.greens.S(0, 0)), std::sinh(g), 1e-4 * std::sinh(g));
  EXPECT_LT(symplectic_residual(r.greens), 1e-10);
}

TEST(SolveDopa, MultimodeSymplecticAndPhotonBudget) {
  auto cfg = dopa_config(16, 1.0, 200);
  cfg.kappa = 0.4;
  DispersionProfile d;
  d.beta_coeffs = {0.0, 0.05};
  auto pump = PumpPulse::gaussian(FrequencyGrid(31, 0.0, 1.0), 0.6, 3.0);
  pump.dispersion.beta_coeffs = {0.0, 0.02};
  const auto r = solve_dopa(pump, d, cfg);
  EXPECT_LT(r.step_error, 1e-4);
  EXPECT_LT(symplectic_residual(r.greens), 1e-6);
  const auto bm = bloch_messiah(r.greens);
  double sum = 0.0;
  for (double x : bm.squeezing_params) sum += std::pow(std::sinh(x), 2);
  const double total = mean_photons(covariance_from_greens(r.greens)).sum();
  EXPECT_NEAR(total, sum, 1e-9 * std::max(1.0, sum));
  EXPECT_GT(bm.squeezing_params[0], bm.squeezing_params[1]);
}

TEST(SolveDopa, NonConvergenceAndGridChecks) {
  auto cfg = dopa_config(4, 1.0, 16);
  cfg.kappa = 1.0;
  cfg.tolerance = 1e-12;
  const auto pump = PumpPulse::gaussian(FrequencyGrid(7, 0.0, 1.0), 1.0, 2.0);
  EXPECT_THROW(solve_dopa(pump, DispersionProfile{}, cfg), NumericError);
  cfg.tolerance = 1e-4;
  auto off = pump;
  off.grid.spacing = 1.5;
  EXPECT_THROW(solve_dopa(off, DispersionProfile{}, cfg), ConfigError);
  auto even = PumpPulse::gaussian(FrequencyGrid(8, 0.0, 1.0), 1.0, 2.0);
  EXPECT_THROW(solve_dopa(even, DispersionProfile{}, cfg), ConfigError);
  cfg.z_steps = 8;
  EXPECT_THROW(solve_dopa(pump, DispersionProfile{}, cfg), ConfigError);
}

TEST(SolveAfc, ZeroPumpNoConversion) {
  auto t = testing_support::two_level_rotating(0.0, 1.0, 20.0, 64);
  const auto g = solve_afc(t.pump, t.ir, t.vis, t.cfg);
  EXPECT_EQ(max_abs(g.vis_ir()), 0.0);
  EXPECT_EQ(conversion_efficiency(g, MatrixXcd::Ones(1, 1))(0), 0.0);
}

TEST(SolveAfc, LandauZenerTwoLevel) {
  for (double gc : {0.2, 0.4}) {
    auto t = testing_support::two_level_rotating(gc, 1.0, 240.0, 120000);
    const auto g = solve_afc(t.pump, t.ir, t.vis, t.cfg);
    const double exact = landau_zener_unconverted(gc, 1.0);
    EXPECT_NEAR(testing_support::unconverted(g), exact, 0.03 * exact) << "g=" << gc;
    EXPECT_LT(unitarity_residual(g.total), 1e-6);
  }
}

TEST(SolveAfc, ExplicitDomainsMatchRotatingFrame) {
  // Poling sweeps 80 -> 120 across L = 100 around a mismatch of 100; the first
  // harmonic of the square wave couples with strength (2/pi) kappa |A|.
  PolingDesign d;
  d.beta_i = 80.0;
  d.beta_f = 120.0;
  d.length = 100.0;
  d.quantum = 1e-4;
  const auto poling = design_poling(d);
  const double kappa_a = 0.35;
  const FrequencyGrid g(1, 0.0, 1.0);
  PropagationConfig cfg;
  cfg.ir_band = cfg.vis_band = g;
  cfg.frame = AfcFrame::explicit_domains;
  cfg.z_steps = 20000;
  cfg.kappa = 1.0;
  DispersionProfile ir, vis;
  vis.offset = 100.0;
  const auto pump = PumpPulse::monochromatic(g, kappa_a);
  const auto out = solve_afc(pump, ir, vis, poling, cfg);
  const double geff = 2.0 / pi * kappa_a, beta0 = (d.beta_f - d.beta_i) / (2.0 * d.length);
  const double expect = landau_zener_unconverted(geff, beta0);
  EXPECT_NEAR(testing_support::unconverted(out), expect, 0.05 * expect);
  EXPECT_LT(unitarity_residual(out.total), 1e-6);
}

TEST(SolveAfc, MultimodeUnitarityToeplitzAndDeterminism) {
  const std::size_t n = 16;
  PropagationConfig cfg;
  cfg.ir_band = cfg.vis_band = FrequencyGrid(n, 0.0, 1.0);
  cfg.length = 40.0;
  cfg.z_steps = 1500;
  DispersionProfile ir, vis;
  ir.beta_coeffs = {1.0};
  vis.beta_coeffs = {1.0};
  ir.beta0_rate = -0.5;
  vis.beta0_rate = 0.5;
  const auto pump = PumpPulse::gaussian(FrequencyGrid(2 * n + 1, 0.0, 1.0), 0.3, 0.8);
  const auto g = solve_afc(pump, ir, vis, cfg);
  EXPECT_LT(unitarity_residual(g.total), 1e-6);
  for (Eigen::Index c = 0; c < g.total.cols(); ++c) EXPECT_NEAR(g.total.col(c).norm(), 1.0, 1e-6);
  // Away from the band edges, shifting the input index shifts the output column.
  const MatrixXd mag = g.vis_ir().cwiseAbs();
  for (int j = 4; j < 10; ++j) EXPECT_NEAR(mag(j + 2, 7 + 2), mag(j, 7), 1e-6);

  const VectorXd eff = conversion_efficiency(g, MatrixXcd::Identity(n, n));
  EXPECT_LE(eff.maxCoeff(), 1.0);
  EXPECT_GT(eff.minCoeff(), 0.0);

  auto shaped = pump;
  for (Eigen::Index i = 0; i < shaped.phi.size(); ++i) shaped.phi(i) = 0.3 * std::pow(static_cast<double>(i) - n, 2) / n;
  const auto a = solve_afc(shaped, ir, vis, cfg), b = solve_afc(shaped, ir, vis, cfg);
  EXPECT_EQ(max_abs(a.total - b.total), 0.0);
  EXPECT_LT(unitarity_residual(a.total), 1e-6);
  EXPECT_GT(max_abs(a.vis_ir().cwiseAbs() - g.vis_ir().cwiseAbs()), 1e-3);
}

TEST(SolveAfc, OutputCovarianceMatchesBlockFormula) {
  const std::size_t n = 4;
  PropagationConfig cfg;
  cfg.ir_band = cfg.vis_band = FrequencyGrid(n, 0.0, 1.0);
  cfg.length = 30.0;
  cfg.z_steps = 2000;
  DispersionProfile ir, vis;
  ir.beta0_rate = -0.5;
  vis.beta0_rate = 0.5;
  const auto g = solve_afc(PumpPulse::gaussian(FrequencyGrid(9, 0.0, 1.0), 0.3, 1.0), ir, vis, cfg);
  GreensFunction sq = GreensFunction::identity(n);
  for (std::size_t i = 0; i < n; ++i) sq = compose(embed(squeezer_greens(0.2 + 0.1 * i), {i}, n), sq);
  const auto s_ir = covariance_from_greens(sq);
  const auto s_vis = afc_output_covariance(g, s_ir);
  const MatrixXcd gvi = g.vis_ir(), gvv = g.vis_vis();
  const auto full_vi = passive_greens(gvi).full();
  MatrixXcd expect = full_vi * s_ir.matrix() * full_vi.adjoint();
  const auto full_vv = passive_greens(gvv).full();
  expect += 0.5 * full_vv * full_vv.adjoint();
  EXPECT_LT(max_abs(s_vis.matrix() - expect), 1e-12);
}

TEST(Poling, UniformDomains) {
  PolingDesign d;
  d.beta_i = d.beta_f = pi / 4e-6; // 4 um domains
  d.length = 1e-3;
  d.tanh_fraction = 0.1;
  const auto p = design_poling(d);
  for (std::size_t i = 0; i + 1 < p.domain_lengths.size(); ++i) EXPECT_NEAR(p.domain_lengths[i], 4e-6, 1e-12);
  EXPECT_EQ(p.signs.front(), 1);
}

TEST(Poling, ChirpDensityAndQuantization) {
  PolingDesign d;
  d.beta_i = 2 * pi / 12e-6;
  d.beta_f = 2 * pi / 8e-6;
  d.length = 5e-3;
  d.tanh_fraction = 0.1;
  const auto p = design_poling(d);
  const auto b = p.boundaries();
  const double lo = 0.45 * d.length, hi = 0.55 * d.length;
  int walls = 0;
  for (double z : b)
    if (z > lo && z < hi) ++walls;
  const double density = walls * pi / (hi - lo);
  EXPECT_NEAR(density, 0.5 * (d.beta_i + d.beta_f), 0.02 * 0.5 * (d.beta_i + d.beta_f));
  for (double l : p.domain_lengths) EXPECT_NEAR(l / 2.5e-8, std::round(l / 2.5e-8), 1e-6);
  EXPECT_NEAR(p.total_length, d.length, d.quantum);
  for (std::size_t i = 1; i < p.signs.size(); ++i) EXPECT_EQ(p.signs[i], -p.signs[i - 1]);

  // The accelerated ends produce shorter domains at the back than the linear chirp alone reaches.
  const double back_min = *std::min_element(p.domain_lengths.end() - 20, p.domain_lengths.end() - 1);
  EXPECT_LT(back_min, pi / d.beta_f);
}

TEST(Poling, RejectsCoarseQuantumAndRoundTripsCsv) {
  PolingDesign d;
  d.beta_i = d.beta_f = pi / 1e-7;
  d.length = 1e-5;
  d.quantum = 2e-7;
  EXPECT_THROW(design_poling(d), ConfigError);
  d.quantum = 2.5e-8;
  d.beta_i = d.beta_f = pi / 3e-6;
  const auto p = design_poling(d);
  const auto q = PolingProfile::from_csv(p.to_csv(), d.quantum);
  EXPECT_EQ(q.signs, p.signs);
  ASSERT_EQ(q.domain_lengths.size(), p.domain_lengths.size());
  for (std::size_t i = 0; i < p.domain_lengths.size(); ++i) EXPECT_DOUBLE_EQ(q.domain_lengths[i], p.domain_lengths[i]);
  EXPECT_EQ(p.to_csv().substr(0, 14), "length_m,sign\n");
}
