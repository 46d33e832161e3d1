#pragma once

// Two-level AFC configurations shared by tests and the acceptance run.

#include "sqz/nlo.hpp"

namespace testing_support {

struct TwoLevel {
  sqz::PumpPulse pump;
  sqz::DispersionProfile ir, vis;
  sqz::PropagationConfig cfg;
};

// One mode per band, monochromatic pump, levels swept at +-beta0 over z in [-span/2, span/2].
inline TwoLevel two_level_rotating(double coupling, double beta0, double span, std::size_t steps) {
  TwoLevel t;
  const sqz::FrequencyGrid g(1, 0.0, 1.0);
  t.pump = sqz::PumpPulse::monochromatic(g, coupling);
  t.cfg.kappa = 1.0;
  t.cfg.length = span;
  t.cfg.z_steps = steps;
  t.cfg.ir_band = g;
  t.cfg.vis_band = g;
  t.ir.beta0_rate = -beta0;
  t.vis.beta0_rate = beta0;
  return t;
}

inline double unconverted(const sqz::BipartiteGreens& g) { return std::norm(g.ir_ir()(0, 0)); }

} // namespace testing_support
