// sqzpipe: pipeline runner and analysis commands.
//
// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O failure, 1 other.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "sqz/detector.hpp"
#include "sqz/fit.hpp"
#include "sqz/pipeline.hpp"
#include "sqz/simulability.hpp"

using namespace sqz;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

// The optional JSON document given by --config; an empty object without one.
Json load_json(const std::string& path) {
  if (path.empty()) return Json::object();
  try {
    return Json::parse(io::read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
}

fs::path out_dir(const Globals& g, const std::string& fallback) {
  const fs::path d = g.out_dir.empty() ? fs::path(fallback) : fs::path(g.out_dir);
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create output directory " + d.string() + ": " + ec.message());
  return d;
}

double pick(std::optional<double> flag, const Json& j, const char* key, double def) {
  if (flag) return *flag;
  if (j.contains(key)) {
    if (!j.at(key).is_number()) throw ConfigError(std::string("config: /") + key + " must be a number");
    return j.at(key).get<double>();
  }
  return def;
}

int exit_code(ErrorKind k) {
  switch (k) {
  case ErrorKind::none: return 0;
  case ErrorKind::config: return 2;
  case ErrorKind::numeric: return 3;
  case ErrorKind::io: return 4;
  case ErrorKind::other: return 1;
  }
  return 1;
}

// ------------------------------------------------------------------ run

int cmd_run(const Globals& g, std::optional<std::size_t> workers) {
  if (g.config.empty()) throw ConfigError("run: --config is required");
  Json doc = load_json(g.config);
  if (g.seed) doc["seed"] = *g.seed;
  if (!g.out_dir.empty()) doc["output_dir"] = g.out_dir;
  if (workers) doc["workers"] = *workers;
  const PipelineConfig cfg = parse_pipeline_config(doc);
  validate_pipeline_config(cfg);
  const fs::path dir = cfg.output_dir;

  if (cfg.sweep) {
    const auto points = run_sweep(cfg, dir);
    emit_sweep_report(cfg, points, dir);
    int code = 0;
    for (const auto& p : points) {
      for (const auto& w : p.bundle.warnings) std::cerr << "warning: sweep point " << p.index << ": " << w << "\n";
      if (p.bundle.failure) {
        std::cerr << "error: sweep point " << p.index << " failed in stage " << p.bundle.failure->stage << ": "
                  << p.bundle.failure->message << "\n";
        if (!code) code = exit_code(p.bundle.failure->kind);
      }
    }
    std::cout << "sweep of " << points.size() << " points written to " << dir.string() << "\n";
    return code;
  }

  const PipelineBundle b = run_pipeline(cfg);
  for (const auto& w : b.warnings) std::cerr << "warning: " << w << "\n";
  emit_report(b, dir);
  if (b.failure) {
    std::cerr << "error: stage " << b.failure->stage << ": " << b.failure->message << "\n"
              << "partial outputs written to " << dir.string() << "\n";
    return exit_code(b.failure->kind);
  }
  std::cout << pipeline_summary(b).dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ fits

struct FitArgs {
  std::string data;
  std::string x_column = "power", y_column;
  std::string weighting;
};

int cmd_fit(const Globals& g, const FitArgs& a, bool gain) {
  const Json j = load_json(g.config);
  std::vector<double> p, y;
  if (!a.data.empty()) {
    const auto t = io::read_csv(a.data);
    p = t.column(a.x_column);
    y = t.column(a.y_column.empty() ? (gain ? "mean_photons" : "conversion") : a.y_column);
  } else {
    if (!j.contains("powers") || !j.contains("values")) throw ConfigError("fit: give --data or a config with 'powers' and 'values'");
    p = j.at("powers").get<std::vector<double>>();
    y = j.at("values").get<std::vector<double>>();
  }
  std::string weighting = a.weighting.empty() ? j.value("weighting", std::string(gain ? "relative" : "uniform")) : a.weighting;
  if (weighting != "relative" && weighting != "uniform") throw ConfigError("fit: weighting must be 'relative' or 'uniform'");
  const FitWeighting w = weighting == "relative" ? FitWeighting::relative : FitWeighting::uniform;
  const FitResult f = gain ? fit_parametric_gain(p, y, w) : fit_saturation(p, y, w);

  Json out;
  out["model"] = f.model;
  out["weighting"] = weighting;
  for (std::size_t k = 0; k < f.names.size(); ++k) out["parameters"][f.names[k]] = {{"value", f.values[k]}, {"std_error", f.std_errors[k]}};
  out["residual_norm"] = f.residual_norm;
  out["relative_residual"] = f.relative_residual;
  out["converged"] = f.converged;
  out["points"] = p.size();
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  if (!g.out_dir.empty()) {
    auto os = io::open_out(out_dir(g, ".") / (gain ? "fit_gain.json" : "fit_saturation.json"), true);
    os << text;
  }
  if (!f.converged) {
    std::cerr << "error: fit did not converge (relative residual " << io::fmt(f.relative_residual) << ")\n";
    return 3;
  }
  return 0;
}

// ------------------------------------------------------------ simulability

struct SimArgs {
  std::optional<double> r, eta, eta_d, p_d, k;
  bool surface = false;
  std::size_t grid = 41;
  double p_d_max = 0.1;
};

int cmd_simulability(const Globals& g, const SimArgs& a) {
  const Json j = load_json(g.config);
  SimulabilityInput in;
  in.r = pick(a.r, j, "r", 1.0);
  in.eta = pick(a.eta, j, "eta", 0.4);
  in.eta_d = pick(a.eta_d, j, "eta_d", 1.0);
  in.p_d = pick(a.p_d, j, "p_d", 0.0);
  in.k = pick(a.k, j, "k", 400.0);
  in.validate();
  if (!a.surface) {
    const double eps = simulability_epsilon(in);
    Json out{{"r", in.r}, {"eta", in.eta}, {"eta_d", in.eta_d}, {"p_d", in.p_d}, {"k", in.k},
             {"argument", simulability_argument(in)}, {"epsilon", eps}};
    std::cout << out.dump(2) << "\n";
    return 0;
  }
  if (a.grid < 2) throw ConfigError("simulability: --grid must be >= 2");
  io::CsvWriter w({"eta_d", "p_d", "epsilon"});
  for (std::size_t i = 0; i < a.grid; ++i)
    for (std::size_t k = 0; k < a.grid; ++k) {
      SimulabilityInput s = in;
      s.eta_d = 0.05 + 0.95 * static_cast<double>(i) / static_cast<double>(a.grid - 1);
      s.p_d = a.p_d_max * static_cast<double>(k) / static_cast<double>(a.grid - 1);
      w.row(std::vector<double>{s.eta_d, s.p_d, simulability_epsilon(s)});
    }
  const fs::path p = out_dir(g, ".") / "simulability_surface.csv";
  w.save(p);
  std::cout << "wrote " << p.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ roc

struct RocArgs {
  std::optional<double> gain, readout_sigma, qe, dark_rate;
  double t_min_sigma = 0.0, t_max_sigma = 20.0;
  std::size_t points = 201;
};

int cmd_roc(const Globals& g, const RocArgs& a) {
  const Json doc = load_json(g.config);
  const Json det = doc.contains("detector") ? doc.at("detector") : doc;
  EmccdConfig c = EmccdConfig::reference_camera();
  c.gain = pick(a.gain, det, "gain", c.gain);
  c.readout_sigma = pick(a.readout_sigma, det, "readout_sigma_e", c.readout_sigma);
  c.qe = pick(a.qe, det, "qe", c.qe);
  c.dark_rate = pick(a.dark_rate, det, "dark_rate", c.dark_rate);
  c.validate();
  if (a.points < 2 || !(a.t_max_sigma > a.t_min_sigma)) throw ConfigError("roc: need --points >= 2 and an increasing threshold range");
  std::vector<double> t;
  for (std::size_t k = 0; k < a.points; ++k)
    t.push_back(c.readout_sigma * (a.t_min_sigma + (a.t_max_sigma - a.t_min_sigma) * static_cast<double>(k) / static_cast<double>(a.points - 1)));
  const fs::path p = out_dir(g, ".") / "roc.csv";
  write_roc_csv(p, roc_curve(c, t));
  std::cout << "wrote " << p.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- poling

struct PolingArgs {
  std::optional<double> beta_i, beta_f, length, quantum, tanh_fraction, tanh_steepness, end_extension;
};

int cmd_poling(const Globals& g, const PolingArgs& a) {
  const Json doc = load_json(g.config);
  Json j = Json::object();
  if (doc.contains("afc") && doc.at("afc").contains("poling")) j = doc.at("afc").at("poling");
  else if (!doc.contains("afc")) j = doc;
  PolingDesign d;
  d.beta_i = pick(a.beta_i, j, "beta_i_per_m", d.beta_i);
  d.beta_f = pick(a.beta_f, j, "beta_f_per_m", d.beta_f);
  d.length = pick(a.length, j, "length_m", d.length);
  d.quantum = pick(a.quantum, j, "quantum_m", d.quantum);
  d.tanh_fraction = pick(a.tanh_fraction, j, "tanh_fraction", d.tanh_fraction);
  d.tanh_steepness = pick(a.tanh_steepness, j, "tanh_steepness", d.tanh_steepness);
  d.end_extension = pick(a.end_extension, j, "end_extension_per_m", d.end_extension);
  const PolingProfile prof = design_poling(d);
  const fs::path p = out_dir(g, ".") / "poling.csv";
  auto os = io::open_out(p, true);
  os << prof.to_csv();
  if (!os) throw IoError("poling: write failed for " + p.string());
  std::cout << "wrote " << prof.signs.size() << " domains to " << p.string() << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Squeezed-light pipeline runner and analysis tools"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed override");
  app.add_option("--out-dir", g.out_dir, "Output directory override");

  auto* run = app.add_subcommand("run", "Run the pipeline (or its sweep) and write a report");
  std::optional<std::size_t> workers;
  run->add_option("--workers", workers, "Sweep worker threads");

  FitArgs gain_args, sat_args;
  auto* fit_gain = app.add_subcommand("fit-gain", "Fit eta_M sinh^2 sqrt(P / P0) to photon means");
  fit_gain->add_option("--data", gain_args.data, "CSV with power and mean_photons columns");
  fit_gain->add_option("--x-column", gain_args.x_column, "Power column name");
  fit_gain->add_option("--y-column", gain_args.y_column, "Photon-mean column name");
  fit_gain->add_option("--weighting", gain_args.weighting, "relative (default) or uniform");
  auto* fit_sat = app.add_subcommand("fit-saturation", "Fit c_max (1 - exp(-P / P_sat)) to conversions");
  fit_sat->add_option("--data", sat_args.data, "CSV with power and conversion columns");
  fit_sat->add_option("--x-column", sat_args.x_column, "Power column name");
  fit_sat->add_option("--y-column", sat_args.y_column, "Conversion column name");
  fit_sat->add_option("--weighting", sat_args.weighting, "uniform (default) or relative");

  SimArgs sim;
  auto* simc = app.add_subcommand("simulability", "Smallest simulable total-variation distance");
  simc->add_option("--r", sim.r, "Squeezing parameter");
  simc->add_option("--eta", sim.eta, "Total transmission");
  simc->add_option("--eta-d", sim.eta_d, "Detector efficiency");
  simc->add_option("--p-d", sim.p_d, "Dark-count probability");
  simc->add_option("--k", sim.k, "Number of squeezers");
  simc->add_flag("--surface", sim.surface, "Write epsilon over an (eta_d, p_d) grid");
  simc->add_option("--grid", sim.grid, "Grid points per axis for --surface");
  simc->add_option("--p-d-max", sim.p_d_max, "Largest dark-count probability for --surface");

  RocArgs roc;
  auto* rocc = app.add_subcommand("roc", "Threshold ROC of the EMCCD model");
  rocc->add_option("--gain", roc.gain, "EM gain");
  rocc->add_option("--readout-sigma", roc.readout_sigma, "Readout noise (electrons)");
  rocc->add_option("--qe", roc.qe, "Quantum efficiency");
  rocc->add_option("--dark-rate", roc.dark_rate, "Dark/CIC event probability per pixel");
  rocc->add_option("--t-min", roc.t_min_sigma, "Lowest threshold in readout sigmas");
  rocc->add_option("--t-max", roc.t_max_sigma, "Highest threshold in readout sigmas");
  rocc->add_option("--points", roc.points, "Number of thresholds");

  PolingArgs pol;
  auto* polc = app.add_subcommand("poling", "Design a chirped poling profile and write it as CSV");
  polc->add_option("--beta-i", pol.beta_i, "Initial phase mismatch (1/m)");
  polc->add_option("--beta-f", pol.beta_f, "Final phase mismatch (1/m)");
  polc->add_option("--length", pol.length, "Crystal length (m)");
  polc->add_option("--quantum", pol.quantum, "Lithographic quantum (m)");
  polc->add_option("--tanh-fraction", pol.tanh_fraction, "Fraction of length in each tanh end section");
  polc->add_option("--tanh-steepness", pol.tanh_steepness, "Steepness of the tanh ends");
  polc->add_option("--end-extension", pol.end_extension, "Mismatch excursion of the ends (1/m)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*run) return cmd_run(g, workers);
    if (*fit_gain) return cmd_fit(g, gain_args, true);
    if (*fit_sat) return cmd_fit(g, sat_args, false);
    if (*simc) return cmd_simulability(g, sim);
    if (*rocc) return cmd_roc(g, roc);
    if (*polc) return cmd_poling(g, pol);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
