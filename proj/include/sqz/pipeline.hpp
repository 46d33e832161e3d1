#pragma once

// Configuration-driven experiment: DOPA -> AFC -> loss -> spectrometer
// binning -> EMCCD detection, plus report emission with a checksum manifest.
// Config format: one JSON document, see schemas/pipeline.schema.json.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sqz/detector.hpp"
#include "sqz/digest.hpp"
#include "sqz/gaussian.hpp"
#include "sqz/io.hpp"
#include "sqz/nlo.hpp"
#include "sqz/photon_stats.hpp"

namespace sqz {

using Json = nlohmann::json;

// ---------------------------------------------------------------- config

struct PumpSpec {
  std::string kind = "gaussian"; // gaussian | monochromatic
  double peak = 0.0;             // 1/m after multiplying by kappa
  double width = 1.0;            // rad/s, gaussian only
  double chirp = 0.0;            // s^2, phase mask phi = chirp dw^2 / 2
  double center = 0.0;           // rad/s, AFC pump only
  std::size_t points = 0;        // odd; 0 picks the size covering the band
  DispersionProfile dispersion;
};

struct DopaSpec {
  FrequencyGrid signal;
  DispersionProfile dispersion;
  PumpSpec pump;
  double kappa = 1.0, length = 0.01, tolerance = 1e-4;
  std::size_t z_steps = 256;
};

struct AfcSpec {
  bool enabled = false;
  std::size_t vis_points = 0;
  PumpSpec pump;
  DispersionProfile dispersion_ir, dispersion_vis;
  double kappa = 1.0, length = 0.02, tolerance = 1e-4;
  std::size_t z_steps = 2000;
  AfcFrame frame = AfcFrame::rotating;
  std::optional<PolingDesign> poling;
};

// Per-mode transmissions; empty means lossless.
struct LossSpec {
  std::vector<double> after_dopa, after_afc, before_detector;
};

struct DetectorSpec {
  EmccdConfig camera = EmccdConfig::reference_camera();
  double threshold_sigma = 5.0;
  std::size_t histogram_bins = 240;
  double histogram_lo = -1.0, histogram_hi = 11.0; // photoelectron units
};

struct SamplingSpec {
  std::size_t shots = 1000;
  std::string method = "auto"; // auto | exact | copula
  std::size_t exact_max_modes = 8;
  bool write_frames = false;
};

struct SpectrometerSpec {
  std::vector<double> edges;
  double psf_sigma = 0.6;
  std::size_t min_points_per_bin = 4;
};

struct SweepSpec {
  std::string pointer;
  std::vector<Json> values;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::size_t workers = 1;
  DopaSpec dopa;
  AfcSpec afc;
  LossSpec loss;
  SpectrometerSpec spectrometer;
  DetectorSpec detector;
  SamplingSpec sampling;
  std::optional<SweepSpec> sweep;
  Json source; // the document this was parsed from

  FrequencyGrid vis_band() const {
    return {afc.vis_points, dopa.signal.center + afc.pump.center, dopa.signal.spacing};
  }
  FrequencyGrid measured_band() const { return afc.enabled ? vis_band() : dopa.signal; }
  SpectrometerConfig spectrometer_config() const {
    return {measured_band(), spectrometer.edges, spectrometer.psf_sigma, spectrometer.min_points_per_bin};
  }
};

namespace detail {

// JSON object view that reports the path of every bad field.
class Node {
public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : j_.items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) throw ConfigError("config: unknown field " + path_ + "/" + k);
    }
  }

  bool has(const char* k) const { return j_.contains(k) && !j_.at(k).is_null(); }

  double num(const char* k) const {
    need(k);
    const auto& v = j_.at(k);
    if (!v.is_number()) throw ConfigError("config: " + field(k) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError("config: " + field(k) + " must be finite");
    return d;
  }
  double num(const char* k, double def) const { return has(k) ? num(k) : def; }

  std::size_t count(const char* k) const {
    need(k);
    const auto& v = j_.at(k);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("config: " + field(k) + " must be a non-negative integer");
    return v.get<std::size_t>();
  }
  std::size_t count(const char* k, std::size_t def) const { return has(k) ? count(k) : def; }

  std::string str(const char* k, const std::string& def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_string()) throw ConfigError("config: " + field(k) + " must be a string");
    return j_.at(k).get<std::string>();
  }

  bool flag(const char* k, bool def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_boolean()) throw ConfigError("config: " + field(k) + " must be true or false");
    return j_.at(k).get<bool>();
  }

  std::vector<double> nums(const char* k) const {
    need(k);
    const auto& v = j_.at(k);
    if (!v.is_array()) throw ConfigError("config: " + field(k) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("config: " + field(k) + " must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  // Number (broadcast to n entries) or array of exactly n numbers.
  std::vector<double> per_mode(const char* k, std::size_t n) const {
    if (!has(k)) return {};
    if (j_.at(k).is_number()) return std::vector<double>(n, num(k));
    auto v = nums(k);
    if (v.size() != n) throw ConfigError("config: " + field(k) + " must have " + std::to_string(n) + " entries");
    return v;
  }

  Node child(const char* k) const {
    need(k);
    return {j_.at(k), field(k)};
  }
  const Json& raw(const char* k) const { return j_.at(k); }
  std::string field(const char* k) const { return path_ + "/" + k; }

private:
  void need(const char* k) const {
    if (!has(k)) throw ConfigError("config: missing field " + field(k));
  }
  std::string where() const { return path_.empty() ? "document root" : path_; }

  const Json& j_;
  std::string path_;
};

inline FrequencyGrid parse_grid(const Node& n) {
  n.allow({"points", "center_rad_per_s", "spacing_rad_per_s"});
  return {n.count("points"), n.num("center_rad_per_s"), n.num("spacing_rad_per_s")};
}

inline DispersionProfile parse_dispersion(const Node& n) {
  n.allow({"offset_per_m", "beta", "beta0_rate_per_m2"});
  DispersionProfile d;
  d.offset = n.num("offset_per_m", 0.0);
  if (n.has("beta")) d.beta_coeffs = n.nums("beta");
  d.beta0_rate = n.num("beta0_rate_per_m2", 0.0);
  d.validate();
  return d;
}

inline PumpSpec parse_pump(const Node& n, bool afc) {
  if (afc)
    n.allow({"kind", "peak", "width_rad_per_s", "chirp_s2", "center_rad_per_s", "points", "dispersion"});
  else
    n.allow({"kind", "peak", "width_rad_per_s", "chirp_s2", "dispersion"});
  PumpSpec p;
  p.kind = n.str("kind", "gaussian");
  if (p.kind != "gaussian" && p.kind != "monochromatic")
    throw ConfigError("config: " + n.field("kind") + " must be 'gaussian' or 'monochromatic'");
  p.peak = n.num("peak");
  p.width = n.num("width_rad_per_s", 1.0);
  if (p.kind == "gaussian" && !(p.width > 0.0)) throw ConfigError("config: " + n.field("width_rad_per_s") + " must be positive");
  p.chirp = n.num("chirp_s2", 0.0);
  if (afc) {
    p.center = n.num("center_rad_per_s");
    p.points = n.count("points", 0);
  }
  if (n.has("dispersion")) p.dispersion = parse_dispersion(n.child("dispersion"));
  return p;
}

inline PolingDesign parse_poling(const Node& n) {
  n.allow({"beta_i_per_m", "beta_f_per_m", "length_m", "quantum_m", "tanh_fraction", "tanh_steepness", "end_extension_per_m"});
  PolingDesign d;
  d.beta_i = n.num("beta_i_per_m");
  d.beta_f = n.num("beta_f_per_m");
  d.length = n.num("length_m");
  d.quantum = n.num("quantum_m", d.quantum);
  d.tanh_fraction = n.num("tanh_fraction", 0.0);
  d.tanh_steepness = n.num("tanh_steepness", d.tanh_steepness);
  d.end_extension = n.num("end_extension_per_m", -1.0);
  return d;
}

inline EmccdConfig parse_camera(const Node& n, EmccdConfig c) {
  c.gain = n.num("gain", c.gain);
  c.readout_sigma = n.num("readout_sigma_e", c.readout_sigma);
  c.qe = n.num("qe", c.qe);
  c.adc_k = n.num("adc_k", c.adc_k);
  c.bias = n.num("bias_pe", c.bias);
  c.dark_rate = n.num("dark_rate", c.dark_rate);
  c.validate();
  return c;
}

} // namespace detail

inline PipelineConfig parse_pipeline_config(const Json& doc) {
  using detail::Node;
  const Node root(doc, "");
  root.allow({"seed", "output_dir", "workers", "dopa", "afc", "loss", "spectrometer", "detector", "sampling", "sweep", "description"});
  PipelineConfig c;
  c.source = doc;
  if (root.has("seed")) {
    if (!doc.at("seed").is_number_integer() || doc.at("seed").get<long long>() < 0) throw ConfigError("config: /seed must be a non-negative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  c.output_dir = root.str("output_dir", c.output_dir);
  c.workers = root.count("workers", 1);

  const Node dopa = root.child("dopa");
  dopa.allow({"grid", "dispersion", "pump", "kappa", "length_m", "z_steps", "tolerance"});
  c.dopa.signal = detail::parse_grid(dopa.child("grid"));
  if (dopa.has("dispersion")) c.dopa.dispersion = detail::parse_dispersion(dopa.child("dispersion"));
  c.dopa.pump = detail::parse_pump(dopa.child("pump"), false);
  c.dopa.kappa = dopa.num("kappa", 1.0);
  c.dopa.length = dopa.num("length_m");
  c.dopa.z_steps = dopa.count("z_steps", c.dopa.z_steps);
  c.dopa.tolerance = dopa.num("tolerance", c.dopa.tolerance);

  if (root.has("afc")) {
    const Node afc = root.child("afc");
    afc.allow({"enabled", "vis_points", "pump", "dispersion_ir", "dispersion_vis", "kappa", "length_m", "z_steps", "tolerance",
               "frame", "poling"});
    c.afc.enabled = afc.flag("enabled", true);
    c.afc.vis_points = afc.count("vis_points", c.dopa.signal.n);
    c.afc.pump = detail::parse_pump(afc.child("pump"), true);
    if (afc.has("dispersion_ir")) c.afc.dispersion_ir = detail::parse_dispersion(afc.child("dispersion_ir"));
    if (afc.has("dispersion_vis")) c.afc.dispersion_vis = detail::parse_dispersion(afc.child("dispersion_vis"));
    c.afc.kappa = afc.num("kappa", 1.0);
    c.afc.length = afc.num("length_m", c.afc.length);
    c.afc.z_steps = afc.count("z_steps", c.afc.z_steps);
    c.afc.tolerance = afc.num("tolerance", c.afc.tolerance);
    const std::string frame = afc.str("frame", "rotating");
    if (frame == "rotating") c.afc.frame = AfcFrame::rotating;
    else if (frame == "explicit_domains") c.afc.frame = AfcFrame::explicit_domains;
    else throw ConfigError("config: /afc/frame must be 'rotating' or 'explicit_domains'");
    if (afc.has("poling")) c.afc.poling = detail::parse_poling(afc.child("poling"));
  }

  const std::size_t n_sig = c.dopa.signal.n;
  if (root.has("loss")) {
    const Node loss = root.child("loss");
    loss.allow({"after_dopa", "after_afc", "before_detector"});
    c.loss.after_dopa = loss.per_mode("after_dopa", n_sig);
    c.loss.after_afc = loss.per_mode("after_afc", c.afc.enabled ? c.afc.vis_points : n_sig);
    c.loss.before_detector = loss.per_mode("before_detector", c.afc.enabled ? c.afc.vis_points : n_sig);
  }

  const Node spec = root.child("spectrometer");
  spec.allow({"edges_m", "lambda_min_m", "lambda_max_m", "pixels", "psf_sigma_px", "min_points_per_bin"});
  if (spec.has("edges_m")) c.spectrometer.edges = spec.nums("edges_m");
  else
    c.spectrometer.edges = SpectrometerConfig::uniform_edges(spec.num("lambda_min_m"), spec.num("lambda_max_m"), spec.count("pixels", 512));
  c.spectrometer.psf_sigma = spec.num("psf_sigma_px", c.spectrometer.psf_sigma);
  c.spectrometer.min_points_per_bin = spec.count("min_points_per_bin", c.spectrometer.min_points_per_bin);

  if (root.has("detector")) {
    const Node det = root.child("detector");
    det.allow({"profile", "gain", "readout_sigma_e", "qe", "adc_k", "bias_pe", "dark_rate", "threshold_sigma", "histogram_bins",
               "histogram_range_pe"});
    const std::string profile = det.str("profile", "reference_camera");
    EmccdConfig base;
    if (profile == "reference_camera") base = EmccdConfig::reference_camera();
    else if (profile != "none") throw ConfigError("config: /detector/profile must be 'reference_camera' or 'none'");
    c.detector.camera = detail::parse_camera(det, base);
    c.detector.threshold_sigma = det.num("threshold_sigma", c.detector.threshold_sigma);
    c.detector.histogram_bins = det.count("histogram_bins", c.detector.histogram_bins);
    if (det.has("histogram_range_pe")) {
      const auto r = det.nums("histogram_range_pe");
      if (r.size() != 2 || !(r[1] > r[0])) throw ConfigError("config: /detector/histogram_range_pe must be [lo, hi] with hi > lo");
      c.detector.histogram_lo = r[0];
      c.detector.histogram_hi = r[1];
    }
  }

  if (root.has("sampling")) {
    const Node s = root.child("sampling");
    s.allow({"shots", "method", "exact_max_modes", "write_frames"});
    c.sampling.shots = s.count("shots", c.sampling.shots);
    c.sampling.method = s.str("method", c.sampling.method);
    c.sampling.exact_max_modes = s.count("exact_max_modes", c.sampling.exact_max_modes);
    c.sampling.write_frames = s.flag("write_frames", false);
  }

  if (root.has("sweep")) {
    const Node s = root.child("sweep");
    s.allow({"pointer", "values"});
    SweepSpec sw;
    sw.pointer = s.str("pointer", "");
    if (sw.pointer.empty() || sw.pointer.front() != '/') throw ConfigError("config: /sweep/pointer must be a JSON pointer such as /dopa/pump/peak");
    if (!s.has("values") || !s.raw("values").is_array() || s.raw("values").empty())
      throw ConfigError("config: /sweep/values must be a non-empty array");
    for (const auto& v : s.raw("values")) sw.values.push_back(v);
    c.sweep = sw;
  }
  return c;
}

// Cross-field checks; runs before any propagation.
inline void validate_pipeline_config(const PipelineConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.workers < 1) fail("/workers must be >= 1");
  if (c.dopa.signal.n < 1 || !(c.dopa.signal.spacing > 0.0)) fail("/dopa/grid must have points >= 1 and positive spacing");
  if (!(c.dopa.length > 0.0)) fail("/dopa/length_m must be positive");
  if (c.dopa.z_steps < 16) fail("/dopa/z_steps must be >= 16");
  if (!(c.dopa.tolerance > 0.0)) fail("/dopa/tolerance must be positive");
  if (c.afc.enabled) {
    if (c.afc.vis_points < 1) fail("/afc/vis_points must be >= 1");
    if ((c.afc.vis_points + c.dopa.signal.n) % 2 != 0) fail("/afc/vis_points must share parity with /dopa/grid/points");
    if (c.afc.pump.points != 0 && c.afc.pump.points % 2 == 0) fail("/afc/pump/points must be odd");
    if (c.afc.z_steps < 16) fail("/afc/z_steps must be >= 16");
    if (!(c.afc.tolerance > 0.0)) fail("/afc/tolerance must be positive");
    if (c.afc.frame == AfcFrame::rotating && !(c.afc.length > 0.0)) fail("/afc/length_m must be positive");
    if (c.afc.frame == AfcFrame::explicit_domains && !c.afc.poling) fail("/afc/poling is required for the explicit_domains frame");
    if (c.vis_band().center - 0.5 * static_cast<double>(c.afc.vis_points - 1) * c.dopa.signal.spacing <= 0.0)
      fail("/afc/pump/center_rad_per_s puts the visible band at non-positive frequency");
  }
  for (const auto* l : {&c.loss.after_dopa, &c.loss.after_afc, &c.loss.before_detector})
    for (double e : *l)
      if (!(e >= 0.0 && e <= 1.0)) fail("/loss transmissions must lie in [0, 1]");
  if (c.sampling.method != "auto" && c.sampling.method != "exact" && c.sampling.method != "copula")
    fail("/sampling/method must be 'auto', 'exact' or 'copula'");
  if (c.sampling.method == "exact" && c.measured_band().n > 16) fail("/sampling/method 'exact' supports at most 16 measured modes");
  if (c.detector.histogram_bins < 1) fail("/detector/histogram_bins must be >= 1");
  c.detector.camera.validate();
  if (!(c.detector.camera.readout_sigma > 0.0)) fail("/detector/readout_sigma_e must be positive for thresholding");
  if (c.afc.enabled && c.afc.poling) {
    try {
      (void)design_poling(*c.afc.poling);
    } catch (const ConfigError& e) {
      fail(std::string("/afc/poling: ") + e.what());
    }
  }
  // Resolution and coverage of the spectrometer against the measured band.
  try {
    (void)pixel_weights(c.spectrometer_config());
  } catch (const ConfigError& e) {
    fail(std::string("/spectrometer: ") + e.what());
  }
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& p) {
  Json doc;
  try {
    doc = Json::parse(io::read_text(p));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config: " + p.string() + " is not valid JSON: " + e.what());
  }
  return parse_pipeline_config(doc);
}

// Hash of the canonical config document (keys sorted) with run-location fields removed.
inline std::string config_hash(const Json& doc) {
  Json c = doc;
  c.erase("output_dir");
  c.erase("workers");
  return sha256_hex(c.dump());
}

// ----------------------------------------------------------------- running

enum class ErrorKind { none, config, numeric, io, other };

struct StageFailure {
  std::string stage;
  ErrorKind kind = ErrorKind::other;
  std::string message;
};

struct PipelineBundle {
  PipelineConfig cfg;
  std::vector<std::string> completed;
  std::optional<StageFailure> failure;
  std::vector<std::string> warnings;

  std::optional<DopaResult> dopa;
  std::optional<SupermodeDecomposition> supermodes;
  std::optional<CovarianceMatrix> sigma_dopa;
  std::optional<BipartiteGreens> afc;
  std::optional<PolingProfile> poling;
  std::optional<CovarianceMatrix> sigma_measured;
  MatrixXd weights;
  std::optional<BinnedStats> binned;
  std::string sampling_method;
  CountFrames counts;
  Frames frames;
  ClickFrames clicks;
  std::optional<PhotonMoments> recovered;

  bool ok() const { return !failure.has_value(); }
};

namespace detail {

inline PumpPulse build_pump(const PumpSpec& s, const FrequencyGrid& g) {
  PumpPulse p = s.kind == "monochromatic" ? PumpPulse::monochromatic(g, s.peak) : PumpPulse::gaussian(g, s.peak, s.width);
  for (std::size_t i = 0; i < g.n; ++i) p.phi(static_cast<Eigen::Index>(i)) = 0.5 * s.chirp * g.offset(i) * g.offset(i);
  p.dispersion = s.dispersion;
  return p;
}

inline CovarianceMatrix lossy(const CovarianceMatrix& s, const std::vector<double>& eta) {
  if (eta.empty()) return s;
  LossChannel ch = LossChannel::uniform(s.modes(), 1.0);
  for (std::size_t i = 0; i < eta.size(); ++i) ch.eta(static_cast<Eigen::Index>(i)) = eta[i];
  return apply_loss(s, ch);
}

// Exact fine-mode patterns, each photon then scattered into a pixel by the PSF weights.
inline CountFrames exact_pixel_counts(const CovarianceMatrix& sigma, const MatrixXd& w, std::size_t shots, std::uint64_t seed) {
  const auto patterns = sample_patterns(sigma, shots, stream_seed(seed, 1));
  CountFrames out = CountFrames::Zero(static_cast<Eigen::Index>(shots), w.rows());
  for (std::size_t s = 0; s < shots; ++s) {
    auto rng = make_stream(stream_seed(seed, 2), s);
    for (std::size_t i = 0; i < patterns[s].size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      for (int k = 0; k < patterns[s][i]; ++k) {
        double u = uniform01(rng), acc = 0.0;
        Eigen::Index j = 0;
        for (; j < w.rows() - 1; ++j) {
          acc += w(j, col);
          if (u < acc) break;
        }
        ++out(static_cast<Eigen::Index>(s), j);
      }
    }
  }
  return out;
}

template <typename F>
bool run_stage(PipelineBundle& b, const std::string& name, F&& body) {
  try {
    body();
    b.completed.push_back(name);
    return true;
  } catch (const ConfigError& e) {
    b.failure = StageFailure{name, ErrorKind::config, e.what()};
  } catch (const NumericError& e) {
    b.failure = StageFailure{name, ErrorKind::numeric, e.what()};
  } catch (const IoError& e) {
    b.failure = StageFailure{name, ErrorKind::io, e.what()};
  } catch (const std::exception& e) {
    b.failure = StageFailure{name, ErrorKind::other, e.what()};
  }
  return false;
}

} // namespace detail

// Runs every stage in order and stops at the first failure; completed stages
// stay in the bundle.  Deterministic in (config, seed).
inline PipelineBundle run_pipeline(const PipelineConfig& cfg) {
  PipelineBundle b;
  b.cfg = cfg;
  if (!detail::run_stage(b, "validate", [&] { validate_pipeline_config(cfg); })) return b;

  const bool dopa_ok = detail::run_stage(b, "dopa", [&] {
    const auto& d = cfg.dopa;
    const FrequencyGrid pg(2 * d.signal.n - 1, 2.0 * d.signal.center, d.signal.spacing);
    PropagationConfig pc;
    pc.signal = d.signal;
    pc.kappa = d.kappa;
    pc.length = d.length;
    pc.z_steps = d.z_steps;
    pc.tolerance = d.tolerance;
    b.dopa = solve_dopa(detail::build_pump(d.pump, pg), d.dispersion, pc);
    b.supermodes = bloch_messiah(b.dopa->greens);
    b.sigma_dopa = detail::lossy(covariance_from_greens(b.dopa->greens), cfg.loss.after_dopa);
  });
  if (!dopa_ok) return b;

  if (cfg.afc.enabled) {
    const bool afc_ok = detail::run_stage(b, "afc", [&] {
      const auto& a = cfg.afc;
      const std::size_t ni = cfg.dopa.signal.n, nv = a.vis_points;
      const std::size_t np = a.pump.points ? a.pump.points : ni + nv - 1;
      const FrequencyGrid pg(np, a.pump.center, cfg.dopa.signal.spacing);
      PropagationConfig pc;
      pc.ir_band = cfg.dopa.signal;
      pc.vis_band = cfg.vis_band();
      pc.kappa = a.kappa;
      pc.length = a.length;
      pc.z_steps = a.z_steps;
      pc.tolerance = a.tolerance;
      pc.frame = a.frame;
      const PumpPulse pump = detail::build_pump(a.pump, pg);
      if (a.frame == AfcFrame::explicit_domains) {
        b.poling = design_poling(*a.poling);
        b.afc = solve_afc(pump, a.dispersion_ir, a.dispersion_vis, *b.poling, pc);
      } else {
        if (a.poling) b.poling = design_poling(*a.poling);
        b.afc = solve_afc(pump, a.dispersion_ir, a.dispersion_vis, pc);
      }
      b.sigma_measured = detail::lossy(afc_output_covariance(*b.afc, *b.sigma_dopa), a.enabled ? cfg.loss.after_afc : std::vector<double>{});
    });
    if (!afc_ok) return b;
  } else {
    b.sigma_measured = detail::lossy(*b.sigma_dopa, cfg.loss.after_afc);
  }

  if (!detail::run_stage(b, "binning", [&] {
        b.sigma_measured = detail::lossy(*b.sigma_measured, cfg.loss.before_detector);
        b.weights = pixel_weights(cfg.spectrometer_config());
        b.binned = bin_photon_stats(mean_photons(*b.sigma_measured), photon_covariance(*b.sigma_measured), b.weights);
      }))
    return b;

  detail::run_stage(b, "detection", [&] {
    const std::size_t modes = cfg.measured_band().n;
    std::string method = cfg.sampling.method;
    if (method == "auto") method = modes <= cfg.sampling.exact_max_modes ? "exact" : "copula";
    b.sampling_method = method;
    if (method == "exact") {
      b.counts = detail::exact_pixel_counts(*b.sigma_measured, b.weights, cfg.sampling.shots, cfg.seed);
    } else {
      b.counts = sample_pixel_counts(*b.binned, cfg.sampling.shots, stream_seed(cfg.seed, 1));
      b.warnings.push_back("pixel counts drawn with the Gaussian-copula sampler (means and covariances only)");
    }
    const auto& cam = cfg.detector.camera;
    b.frames = simulate_frames(b.counts, cam, stream_seed(cfg.seed, 3));
    b.clicks = threshold_frames(b.frames, cfg.detector.threshold_sigma * cam.readout_sigma);
    if (cfg.sampling.shots > 0) b.recovered = analog_invert_moments(raw_moments(b.frames), cam.gain, cam.readout_sigma);
  });
  return b;
}

// ------------------------------------------------------------------ report

namespace detail {

inline std::string matrix_csv(const MatrixXd& m, const std::string& prefix) {
  std::vector<std::string> header;
  for (Eigen::Index c = 0; c < m.cols(); ++c) header.push_back(prefix + std::to_string(c));
  io::CsvWriter w(header);
  std::vector<double> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    w.row(row);
  }
  return w.str();
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
  case ErrorKind::none: return "none";
  case ErrorKind::config: return "config";
  case ErrorKind::numeric: return "numeric";
  case ErrorKind::io: return "io";
  case ErrorKind::other: return "other";
  }
  return "other";
}

class ReportWriter {
public:
  explicit ReportWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("emit_report: cannot create " + dir_.string() + ": " + ec.message());
  }

  void text(const std::string& name, const std::string& body) {
    auto os = io::open_out(dir_ / name, true);
    os << body;
    if (!os) throw IoError("emit_report: write failed for " + (dir_ / name).string());
    os.close();
    files_.push_back(name);
  }
  void existing(const std::string& name) { files_.push_back(name); }

  Json manifest_files() const {
    Json arr = Json::array();
    for (const auto& f : files_) {
      const auto p = dir_ / f;
      arr.push_back({{"path", f}, {"sha256", sha256_file(p)}, {"bytes", std::filesystem::file_size(p)}});
    }
    return arr;
  }
  const std::filesystem::path& dir() const { return dir_; }

private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

} // namespace detail

inline Json pipeline_summary(const PipelineBundle& b) {
  Json s;
  s["status"] = b.ok() ? "ok" : "failed";
  s["completed_stages"] = b.completed;
  if (b.failure) s["failure"] = {{"stage", b.failure->stage}, {"kind", detail::error_kind_name(b.failure->kind)}, {"message", b.failure->message}};
  s["warnings"] = b.warnings;
  if (b.dopa) {
    const auto& r = b.supermodes->squeezing_params;
    s["dopa"] = {{"step_error", b.dopa->step_error},
                 {"max_squeezing_r", r.empty() ? 0.0 : r.front()},
                 {"mean_photons", mean_photons(covariance_from_greens(b.dopa->greens)).sum()}};
  }
  if (b.afc) {
    const VectorXd in = mean_photons(*b.sigma_dopa);
    const VectorXd out = mean_photons(afc_output_covariance(*b.afc, *b.sigma_dopa));
    s["afc"] = {{"step_error", b.afc->step_error},
                {"mean_photons_in", in.sum()},
                {"mean_photons_out", out.sum()},
                {"photon_conversion", in.sum() > 0.0 ? out.sum() / in.sum() : 0.0}};
    if (b.poling) s["afc"]["poling_domains"] = b.poling->signs.size();
  }
  if (b.binned) s["binning"] = {{"pixels", b.binned->mean.size()}, {"total_mean_photons", b.binned->mean.sum()}};
  if (b.recovered) {
    const double clicks = b.clicks.size() ? b.clicks.cast<double>().mean() : 0.0;
    s["detection"] = {{"method", b.sampling_method},
                      {"shots", b.counts.rows()},
                      {"mean_click_rate", clicks},
                      {"analog_total_photoelectrons", b.recovered->n.sum()}};
  }
  return s;
}

// Writes every available artifact of the bundle into `dir` and a manifest
// listing each file with its SHA-256.  Returns the manifest.
inline Json emit_report(const PipelineBundle& b, const std::filesystem::path& dir) {
  detail::ReportWriter w(dir);
  w.text("config.resolved.json", b.cfg.source.dump(2) + "\n");

  if (b.dopa) {
    const auto& sm = *b.supermodes;
    io::CsvWriter modes({"mode", "squeezing_r", "squeezing_db", "mean_photons"});
    for (std::size_t k = 0; k < sm.squeezing_params.size(); ++k) {
      const double r = sm.squeezing_params[k];
      modes.row(std::vector<double>{static_cast<double>(k), r, 20.0 * r / std::log(10.0), std::sinh(r) * std::sinh(r)});
    }
    w.text("dopa_supermodes.csv", modes.str());

    const auto& g = b.cfg.dopa.signal;
    const auto shown = std::min<Eigen::Index>(4, sm.output_modes.cols());
    std::vector<std::string> header{"omega_rad_per_s"};
    for (Eigen::Index k = 0; k < shown; ++k) header.push_back("mode_" + std::to_string(k) + "_abs");
    io::CsvWriter spectra(header);
    for (std::size_t i = 0; i < g.n; ++i) {
      std::vector<double> row{g.omega(i)};
      for (Eigen::Index k = 0; k < shown; ++k) row.push_back(std::abs(sm.output_modes(static_cast<Eigen::Index>(i), k)));
      spectra.row(row);
    }
    w.text("dopa_supermode_spectra.csv", spectra.str());
    w.text("dopa_photon_covariance.csv", detail::matrix_csv(photon_covariance(*b.sigma_dopa), "mode_"));
  }

  if (b.sigma_measured && (b.afc || b.completed.size() > 2)) {
    io::CsvWriter spec({"band", "index", "omega_rad_per_s", "wavelength_m", "mean_photons"});
    auto add = [&](const char* band, const FrequencyGrid& g, const VectorXd& n) {
      for (std::size_t i = 0; i < g.n; ++i)
        spec.row(std::vector<std::string>{band, std::to_string(i), io::fmt(g.omega(i)), io::fmt(2.0 * pi * speed_of_light / g.omega(i)),
                                          io::fmt(n(static_cast<Eigen::Index>(i)))});
    };
    add("input", b.cfg.dopa.signal, mean_photons(*b.sigma_dopa));
    add("measured", b.cfg.measured_band(), mean_photons(*b.sigma_measured));
    w.text("converted_spectrum.csv", spec.str());
  }
  if (b.poling) w.text("poling.csv", b.poling->to_csv());

  if (b.binned) {
    const auto& e = b.cfg.spectrometer.edges;
    io::CsvWriter mean({"pixel", "lambda_lo_m", "lambda_hi_m", "mean_photons"});
    for (Eigen::Index j = 0; j < b.binned->mean.size(); ++j)
      mean.row(std::vector<double>{static_cast<double>(j), e[static_cast<std::size_t>(j)], e[static_cast<std::size_t>(j) + 1], b.binned->mean(j)});
    w.text("binned_mean.csv", mean.str());
    w.text("binned_covariance.csv", detail::matrix_csv(b.binned->covariance, "pixel_"));
  }

  if (std::find(b.completed.begin(), b.completed.end(), "detection") != b.completed.end()) {
    w.text("samples_counts.csv", frames_to_csv(b.counts));
    w.text("samples_clicks.csv", frames_to_csv(b.clicks));
    if (b.cfg.sampling.write_frames) {
      write_frames_binary(dir / "frames.sqzfrm", b.frames);
      w.existing("frames.sqzfrm");
    }
    const auto& cam = b.cfg.detector.camera;
    io::CsvWriter px({"pixel", "click_rate", "analog_mean_pe", "predicted_mean_pe"});
    const Eigen::Index pixels = b.counts.cols();
    for (Eigen::Index j = 0; j < pixels; ++j) {
      const double rate = b.counts.rows() ? b.clicks.col(j).cast<double>().mean() : 0.0;
      const double analog = b.recovered ? b.recovered->n(j) : 0.0;
      px.row(std::vector<double>{static_cast<double>(j), rate, analog, cam.qe * b.binned->mean(j) + cam.dark_rate});
    }
    w.text("pixel_statistics.csv", px.str());

    // Analog histogram of x / g (photoelectron units) over all pixels and shots.
    const auto& d = b.cfg.detector;
    std::vector<double> hist(d.histogram_bins, 0.0);
    const double width = (d.histogram_hi - d.histogram_lo) / static_cast<double>(d.histogram_bins);
    for (Eigen::Index s = 0; s < b.frames.rows(); ++s)
      for (Eigen::Index j = 0; j < b.frames.cols(); ++j) {
        const double x = b.frames(s, j) / cam.gain;
        const double pos = (x - d.histogram_lo) / width;
        if (pos >= 0.0 && pos < static_cast<double>(d.histogram_bins)) hist[static_cast<std::size_t>(pos)] += 1.0;
      }
    io::CsvWriter h({"x_lo_pe", "x_hi_pe", "count", "above_threshold"});
    const double t_pe = d.threshold_sigma * cam.readout_sigma / cam.gain;
    for (std::size_t k = 0; k < hist.size(); ++k) {
      const double lo = d.histogram_lo + width * static_cast<double>(k);
      h.row(std::vector<double>{lo, lo + width, hist[k], lo >= t_pe ? 1.0 : 0.0});
    }
    w.text("histogram.csv", h.str());
  }

  w.text("summary.json", pipeline_summary(b).dump(2) + "\n");

  Json manifest;
  manifest["config_sha256"] = config_hash(b.cfg.source);
  manifest["seed"] = b.cfg.seed;
  manifest["status"] = b.ok() ? "ok" : "failed";
  if (b.failure) manifest["failed_stage"] = b.failure->stage;
  manifest["files"] = w.manifest_files();
  auto os = io::open_out(dir / "manifest.json", true);
  os << manifest.dump(2) << "\n";
  if (!os) throw IoError("emit_report: cannot write manifest in " + dir.string());
  return manifest;
}

// ------------------------------------------------------------------- sweeps

struct SweepPoint {
  std::size_t index = 0;
  Json value;
  PipelineBundle bundle;
  Json manifest;
};

// Runs the base document once per sweep value (written into the sweep pointer)
// on `workers` threads.  Point i writes to dir/sweep_<i>; results are merged in
// index order, so output is independent of scheduling.
inline std::vector<SweepPoint> run_sweep(const PipelineConfig& base, const std::filesystem::path& dir) {
  require(base.sweep.has_value(), "run_sweep: config has no sweep section");
  const auto& sw = *base.sweep;
  std::vector<SweepPoint> points(sw.values.size());
  std::vector<std::string> errors(sw.values.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        Json doc = base.source;
        doc.erase("sweep");
        const Json::json_pointer ptr(sw.pointer);
        if (!doc.contains(ptr.parent_pointer())) throw ConfigError("config: sweep pointer " + sw.pointer + " has no parent object");
        doc[ptr] = sw.values[i];
        PipelineConfig c = parse_pipeline_config(doc);
        c.seed = base.seed;
        c.source["seed"] = base.seed;
        char name[32];
        std::snprintf(name, sizeof name, "sweep_%04zu", i);
        points[i].index = i;
        points[i].value = sw.values[i];
        points[i].bundle = run_pipeline(c);
        points[i].manifest = emit_report(points[i].bundle, dir / name);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(base.workers, points.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw ConfigError("sweep point " + std::to_string(i) + ": " + errors[i]);
  return points;
}

// Merged sweep table plus a top-level manifest covering every point.
inline Json emit_sweep_report(const PipelineConfig& base, const std::vector<SweepPoint>& points, const std::filesystem::path& dir) {
  detail::ReportWriter w(dir);
  io::CsvWriter table({"index", "value", "status", "total_mean_photons", "mean_click_rate", "config_sha256"});
  Json merged = Json::array();
  for (const auto& p : points) {
    const Json s = pipeline_summary(p.bundle);
    const double total = s.contains("binning") ? s["binning"]["total_mean_photons"].get<double>() : 0.0;
    const double rate = s.contains("detection") ? s["detection"]["mean_click_rate"].get<double>() : 0.0;
    table.row(std::vector<std::string>{std::to_string(p.index), p.value.dump(), s["status"].get<std::string>(), io::fmt(total), io::fmt(rate),
                                       p.manifest["config_sha256"].get<std::string>()});
    char name[32];
    std::snprintf(name, sizeof name, "sweep_%04zu", p.index);
    merged.push_back({{"index", p.index}, {"directory", name}, {"manifest_sha256", sha256_file(dir / name / "manifest.json")}});
  }
  w.text("sweep_summary.csv", table.str());
  Json manifest;
  manifest["config_sha256"] = config_hash(base.source);
  manifest["seed"] = base.seed;
  manifest["sweep_pointer"] = base.sweep->pointer;
  manifest["points"] = merged;
  manifest["files"] = w.manifest_files();
  auto os = io::open_out(dir / "manifest.json", true);
  os << manifest.dump(2) << "\n";
  if (!os) throw IoError("emit_sweep_report: cannot write manifest in " + dir.string());
  return manifest;
}

} // namespace sqz
