#pragma once
/**
 * @file io.hpp
 * @brief Run configuration, spectrogram and result files, manifests and
 * plot data for the command-line front end.
 *
 * Configuration errors carry the JSON pointer of the offending field.
 * Spectrogram files are either CSV (one JSON header line, then n_w rows of
 * n_tau values) or binary (magic, header length, JSON header, float64
 * values). Both store values omega-major and round-trip bit for bit.
 */

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "forward.hpp"
#include "gate.hpp"
#include "noise.hpp"
#include "presets.hpp"
#include "retrieval.hpp"
#include "states.hpp"

namespace mmgfrog::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Stable process exit codes.
enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_data = 3, exit_not_converged = 4 };

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string pointer, const std::string& what)
      : std::runtime_error((pointer.empty() ? std::string("/") : pointer) + ": " + what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

/// Unreadable, truncated or inconsistent data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// schema helpers

/// A JSON object plus its pointer, with typed and range-checked accessors.
class Node {
 public:
  Node(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {
    if (!j_.is_object()) throw ConfigError(ptr_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  std::string path(const std::string& key) const { return ptr_ + "/" + key; }
  const json& raw(const char* key) const {
    if (!has(key)) throw ConfigError(path(key), "required field is missing");
    return j_.at(key);
  }
  Node child(const char* key) const { return Node(raw(key), path(key)); }

  double number(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    return v.get<double>();
  }
  double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
  double positive(const char* key, double fallback) const {
    const double v = number(key, fallback);
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(path(key), "must be positive and finite");
    return v;
  }
  std::size_t count(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path(key), "expected a nonnegative integer");
    return v.get<std::size_t>();
  }
  std::size_t count(const char* key, std::size_t fallback) const { return has(key) ? count(key) : fallback; }
  std::uint64_t seed(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(path(key), "expected a nonnegative integer seed");
    return v.get<std::uint64_t>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(path(key), "expected a string");
    return v.get<std::string>();
  }
  bool flag(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v.get<bool>();
  }
  RVec numbers(const char* key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of numbers");
    RVec out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  /// Rejects keys outside `allowed`, so typos fail loudly.
  void only(std::initializer_list<const char*> allowed) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ConfigError(path(it.key()), "unknown field");
    }
  }
  const json& value() const { return j_; }
  const std::string& pointer() const { return ptr_; }

 private:
  const json& j_;
  std::string ptr_;
};

/// Runs `f`, turning the library's argument errors into a ConfigError at `ptr`.
template <class F>
auto at_pointer(const std::string& ptr, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ptr, e.what());
  }
}

// ---------------------------------------------------------------------------
// run configuration

struct GridConfig {
  std::size_t n_t = 256;
  double dt_fs = 2.0;
  std::size_t n_tau = 96;
  std::size_t delay_step = 2;
};

struct NoiseConfig {
  NoiseSpec spec;
  double mask_threshold = 0.1;
  double noise_floor_stop = 1.0;
  std::size_t repeats = 20;
  std::vector<double> levels_db;
};

/// Parsed and validated run configuration. `source` echoes the input JSON.
struct RunConfig {
  json source;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  GridConfig grid;
  TimeGrid tg;
  DelayGrid dg;
  std::optional<GaussianStateSpec> state;
  GatePulse gate;
  RetrievalConfig retrieval;
  double retrieval_mask_threshold = 0.0;  // 0: no mask
  std::optional<NoiseConfig> noise;
  std::optional<BootstrapSpec> bootstrap;

  GateFunctions gate_fn() const { return gate_functions(gate); }
  ForwardModel model() const { return ForwardModel(gate_fn(), dg); }
  std::uint64_t master_seed() const { return seed.value_or(0); }
};

inline GridConfig parse_grid(const Node& n) {
  n.only({"n_t", "dt_fs", "n_tau", "delay_step"});
  GridConfig g;
  g.n_t = n.count("n_t", g.n_t);
  g.dt_fs = n.positive("dt_fs", g.dt_fs);
  g.n_tau = n.count("n_tau", g.n_tau);
  g.delay_step = n.count("delay_step", g.delay_step);
  return g;
}

inline GaussianStateSpec parse_state(const Node& n, const TimeGrid& tg) {
  n.only({"w_s_radfs", "modes"});
  GaussianStateSpec st;
  st.w_s = n.number("w_s_radfs", kDefaultCarrier);
  const json& modes = n.raw("modes");
  if (!modes.is_array() || modes.empty()) throw ConfigError(n.path("modes"), "expected a nonempty array of modes");
  for (std::size_t q = 0; q < modes.size(); ++q) {
    const Node m(modes[q], n.path("modes") + "/" + std::to_string(q));
    m.only({"generator", "var_x", "var_p", "squeezing_db", "angle_rad"});
    const Node g = m.child("generator");
    const std::string type = g.text("type", "");
    TemporalMode mode;
    if (type == "hermite_gaussian") {
      g.only({"type", "order", "t0_fs", "chirp"});
      const auto order = static_cast<int>(g.count("order"));
      const double t0 = g.positive("t0_fs", 30.0), chirp = g.number("chirp", 0.0);
      mode = at_pointer(g.pointer(), [&] { return hermite_gaussian_mode(tg, order, t0, chirp); });
      mode = place_on_carrier(tg, std::move(mode), st.w_s);
    } else if (type == "samples") {
      g.only({"type", "re", "im"});
      const RVec re = g.numbers("re"), im = g.numbers("im");
      if (re.size() != tg.n_t() || im.size() != tg.n_t())
        throw ConfigError(g.pointer(), "re and im must have n_t = " + std::to_string(tg.n_t()) + " samples");
      for (std::size_t j = 0; j < re.size(); ++j) mode.samples.emplace_back(re[j], im[j]);
    } else {
      throw ConfigError(g.path("type"), "expected \"hermite_gaussian\" or \"samples\"");
    }
    mode.label = static_cast<int>(q);
    double vx = kVacuumVariance, vp = kVacuumVariance;
    if (m.has("squeezing_db")) {
      if (m.has("var_x") || m.has("var_p")) throw ConfigError(m.path("squeezing_db"), "give squeezing_db or var_x/var_p, not both");
      const double db = m.number("squeezing_db");
      vx = squeezing_db_to_variance(db);
      vp = kVacuumVariance * kVacuumVariance / vx;
    } else {
      vx = m.number("var_x", vx);
      vp = m.number("var_p", vp);
    }
    const double angle = m.number("angle_rad", 0.0);
    st.basis.modes.push_back(std::move(mode));
    st.var_x.push_back(vx);
    st.var_p.push_back(vp);
    st.angle.push_back(angle);
  }
  at_pointer(n.pointer(), [&] {
    st.validate(tg);
    return 0;
  });
  return apply_squeezing_angle(std::move(st));
}

inline GatePulse parse_gate(const Node& n, const TimeGrid& tg, double w_s) {
  const std::string type = n.text("type", "");
  if (type == "chirped_gaussian") {
    n.only({"type", "fwhm_fs", "chirp", "peak_gain_db"});
    const double fwhm = n.positive("fwhm_fs", 100.0), chirp = n.number("chirp", 4.0), db = n.number("peak_gain_db", 50.0);
    return at_pointer(n.pointer(), [&] { return chirped_gaussian_gate(tg, fwhm, chirp, db, w_s); });
  }
  if (type == "samples") {
    n.only({"type", "re", "im", "kappa"});
    const RVec re = n.numbers("re"), im = n.numbers("im");
    if (re.size() != tg.n_t() || im.size() != tg.n_t())
      throw ConfigError(n.pointer(), "re and im must have n_t = " + std::to_string(tg.n_t()) + " samples");
    CVec env;
    for (std::size_t j = 0; j < re.size(); ++j) env.emplace_back(re[j], im[j]);
    const double kappa = n.positive("kappa", 1.0);
    return at_pointer(n.pointer(), [&] { return sampled_gate(tg, std::move(env), kappa, w_s); });
  }
  throw ConfigError(n.path("type"), "expected \"chirped_gaussian\" or \"samples\"");
}

inline RetrievalConfig parse_retrieval(const Node& n, double* mask_threshold) {
  n.only({"n_modes", "max_iters", "step_size", "step_schedule", "convergence_tol", "convergence_window",
          "success_loss_threshold", "init_perturbation", "init_t0_fs", "variance_refit_iters", "lbfgs_memory",
          "noise_floor_stop", "noise_sigma", "mask_threshold"});
  RetrievalConfig c;
  c.n_modes = n.count("n_modes", c.n_modes);
  c.max_iters = n.count("max_iters", c.max_iters);
  c.step_size = n.number("step_size", c.step_size);
  c.step_schedule = at_pointer(n.path("step_schedule"), [&] { return schedule_from_string(n.text("step_schedule", "lbfgs")); });
  c.convergence_tol = n.number("convergence_tol", c.convergence_tol);
  c.convergence_window = n.count("convergence_window", c.convergence_window);
  c.success_loss_threshold = n.number("success_loss_threshold", c.success_loss_threshold);
  c.init_perturbation = n.number("init_perturbation", c.init_perturbation);
  c.init_t0 = n.number("init_t0_fs", c.init_t0);
  c.variance_refit_iters = n.count("variance_refit_iters", c.variance_refit_iters);
  c.lbfgs_memory = n.count("lbfgs_memory", c.lbfgs_memory);
  c.noise_floor_stop = n.number("noise_floor_stop", c.noise_floor_stop);
  if (n.has("noise_sigma")) c.noise_sigma = n.number("noise_sigma", 0.0);
  *mask_threshold = n.number("mask_threshold", 0.0);
  if (*mask_threshold != 0.0 && !(*mask_threshold > 0.0 && *mask_threshold < 1.0))
    throw ConfigError(n.path("mask_threshold"), "must be 0 (no mask) or lie in (0, 1)");
  at_pointer(n.pointer(), [&] {
    c.validate();
    return 0;
  });
  return c;
}

inline NoiseConfig parse_noise(const Node& n) {
  n.only({"snr_db", "definition", "mask_threshold", "noise_floor_stop", "repeats", "levels_db"});
  NoiseConfig c;
  if (n.has("snr_db")) {
    const json& v = n.raw("snr_db");
    if (v.is_string() && (v == "inf" || v == "infinity"))
      c.spec.snr_db = std::numeric_limits<double>::infinity();
    else
      c.spec.snr_db = n.number("snr_db");
  }
  c.spec.definition = at_pointer(n.path("definition"), [&] { return snr_definition_from_string(n.text("definition", "rms")); });
  c.mask_threshold = n.number("mask_threshold", c.mask_threshold);
  if (!(c.mask_threshold > 0.0 && c.mask_threshold < 1.0)) throw ConfigError(n.path("mask_threshold"), "must lie in (0, 1)");
  c.noise_floor_stop = n.number("noise_floor_stop", c.noise_floor_stop);
  if (!(c.noise_floor_stop >= 0.0)) throw ConfigError(n.path("noise_floor_stop"), "must be >= 0");
  c.repeats = n.count("repeats", c.repeats);
  if (c.repeats < 1) throw ConfigError(n.path("repeats"), "must be >= 1");
  if (n.has("levels_db")) c.levels_db = n.numbers("levels_db");
  return c;
}

inline BootstrapSpec parse_bootstrap(const Node& n) {
  n.only({"n_replicas", "resample_fraction"});
  BootstrapSpec b;
  b.n_replicas = n.count("n_replicas", b.n_replicas);
  b.resample_fraction = n.number("resample_fraction", b.resample_fraction);
  at_pointer(n.pointer(), [&] {
    b.validate();
    return 0;
  });
  return b;
}

/// Validates every block before anything is computed.
inline RunConfig parse_config(const json& j) {
  const Node root(j, "");
  root.only({"seed", "output_dir", "grid", "state", "gate", "retrieval", "noise", "bootstrap"});
  RunConfig c;
  c.source = j;
  if (root.has("seed")) c.seed = root.seed("seed");
  c.output_dir = root.text("output_dir", c.output_dir);
  if (root.has("grid")) c.grid = parse_grid(root.child("grid"));
  c.tg = at_pointer("/grid", [&] { return TimeGrid(c.grid.n_t, c.grid.dt_fs); });
  c.dg = at_pointer("/grid", [&] {
    auto d = DelayGrid::centered(c.tg, c.grid.n_tau, c.grid.delay_step);
    d.validate_against(c.tg);
    return d;
  });
  double w_s = kDefaultCarrier;
  if (root.has("state")) {
    c.state = parse_state(root.child("state"), c.tg);
    w_s = c.state->w_s;
  }
  if (!root.has("gate")) throw ConfigError("/gate", "required block is missing");
  c.gate = parse_gate(root.child("gate"), c.tg, w_s);
  if (root.has("retrieval")) c.retrieval = parse_retrieval(root.child("retrieval"), &c.retrieval_mask_threshold);
  if (root.has("noise")) c.noise = parse_noise(root.child("noise"));
  if (root.has("bootstrap")) c.bootstrap = parse_bootstrap(root.child("bootstrap"));
  if ((c.noise || c.bootstrap) && !c.seed) throw ConfigError("/seed", "a master seed is required when noise or bootstrap is configured");
  c.retrieval.seed = derive_seed(c.master_seed(), "init");
  if (c.noise) c.noise->spec.seed = derive_seed(c.master_seed(), "noise");
  if (c.bootstrap) c.bootstrap->seed = derive_seed(c.master_seed(), "bootstrap");
  return c;
}

/**
 * Applies `key=value` with a dotted key ("retrieval.max_iters=500",
 * "state.modes.0.var_x=0.2"). The value is parsed as JSON when possible,
 * otherwise taken as a string.
 */
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* cur = &j;
  std::string ptr;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(ptr, "empty component in override key '" + key + "'");
    ptr += "/" + part;
    json* next = nullptr;
    if (cur->is_array()) {
      char* end = nullptr;
      const unsigned long idx = std::strtoul(part.c_str(), &end, 10);
      if (*end != '\0' || idx >= cur->size()) throw ConfigError(ptr, "array index out of range");
      next = &(*cur)[idx];
    } else {
      if (cur->is_null()) *cur = json::object();
      if (!cur->is_object()) throw ConfigError(ptr, "cannot descend into a non-object");
      next = &(*cur)[part];
    }
    if (dot == std::string::npos) {
      *next = value;
      return;
    }
    cur = next;
    start = dot + 1;
  }
}

inline json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("", "cannot open config file " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("", "config file " + p.string() + " is not valid JSON");
  return j;
}

// ---------------------------------------------------------------------------
// JSON forms of library types

inline json grid_to_json(const SpectrogramGrid& g) {
  return {{"n_t", g.time.n_t()},          {"dt_fs", g.time.dt()},          {"n_tau", g.delay.n_tau()},
          {"dtau_fs", g.delay.dtau()},    {"tau_min_fs", g.delay.tau_min()}, {"w_center_radfs", g.freq.w_center()}};
}

inline SpectrogramGrid grid_from_json(const json& j) {
  const Node n(j, "/grid");
  n.only({"n_t", "dt_fs", "n_tau", "dtau_fs", "tau_min_fs", "w_center_radfs"});
  return at_pointer("/grid", [&] {
    const TimeGrid tg(n.count("n_t"), n.number("dt_fs"));
    const DelayGrid dg(n.count("n_tau"), n.number("dtau_fs"), n.number("tau_min_fs"));
    return SpectrogramGrid::make(tg, dg, n.number("w_center_radfs"));
  });
}

inline json complex_to_json(std::span<const cplx> v) {
  json re = json::array(), im = json::array();
  for (const auto& x : v) {
    re.push_back(x.real());
    im.push_back(x.imag());
  }
  return {{"re", re}, {"im", im}};
}

inline CVec complex_from_json(const json& j, const std::string& ptr) {
  const Node n(j, ptr);
  const RVec re = n.numbers("re"), im = n.numbers("im");
  if (re.size() != im.size()) throw ConfigError(ptr, "re and im differ in length");
  CVec out;
  for (std::size_t i = 0; i < re.size(); ++i) out.emplace_back(re[i], im[i]);
  return out;
}

inline json state_to_json(const GaussianStateSpec& st) {
  json modes = json::array();
  for (std::size_t n = 0; n < st.n_modes(); ++n) {
    json g = complex_to_json(st.basis.modes[n].samples);
    g["type"] = "samples";
    modes.push_back({{"generator", g}, {"var_x", st.var_x[n]}, {"var_p", st.var_p[n]}, {"angle_rad", 0.0}});
  }
  return {{"w_s_radfs", st.w_s}, {"modes", modes}};
}

inline json result_to_json(const RetrievalResult& r, const SpectrogramGrid& grid, const json& config_echo) {
  json modes = json::array();
  for (std::size_t n = 0; n < r.basis.size(); ++n) {
    json m = complex_to_json(r.basis.modes[n].samples);
    m["var_x"] = r.var_x[n];
    m["var_p"] = r.var_p[n];
    m["squeezing_db"] = variance_to_squeezing_db(std::min(r.var_x[n], r.var_p[n]));
    m["angle_rad"] = n < r.angles.size() ? r.angles[n] : 0.0;
    modes.push_back(std::move(m));
  }
  return {{"format", "mmgfrog-result"},
          {"version", 1},
          {"units", {{"time", "fs"}, {"frequency", "rad/fs"}, {"angle", "rad"}}},
          {"grid", grid_to_json(grid)},
          {"modes", modes},
          {"final_loss", r.final_loss},
          {"converged", r.converged},
          {"stalled", r.stalled},
          {"noise_limited", r.noise_limited},
          {"noise_floor", r.noise_floor},
          {"iterations_run", r.iterations_run},
          {"reseeds", r.reseeds},
          {"seed", r.seed},
          {"loss_trace", r.loss_trace},
          {"warnings", r.warnings},
          {"config", config_echo}};
}

inline RetrievalResult result_from_json(const json& j) {
  const Node n(j, "");
  if (n.text("format", "") != "mmgfrog-result") throw DataError("not a result file");
  RetrievalResult r;
  const json& modes = n.raw("modes");
  for (std::size_t q = 0; q < modes.size(); ++q) {
    const std::string ptr = "/modes/" + std::to_string(q);
    const Node m(modes[q], ptr);
    TemporalMode mode;
    mode.samples = complex_from_json(modes[q], ptr);
    mode.label = static_cast<int>(q);
    r.basis.modes.push_back(std::move(mode));
    r.var_x.push_back(m.number("var_x"));
    r.var_p.push_back(m.number("var_p"));
    r.angles.push_back(m.number("angle_rad", 0.0));
  }
  r.final_loss = n.number("final_loss");
  r.converged = n.flag("converged", false);
  r.stalled = n.flag("stalled", false);
  r.noise_limited = n.flag("noise_limited", false);
  r.noise_floor = n.number("noise_floor", 0.0);
  r.iterations_run = n.count("iterations_run", 0);
  r.reseeds = n.count("reseeds", 0);
  r.seed = n.has("seed") ? n.seed("seed") : 0;
  if (n.has("loss_trace")) r.loss_trace = n.numbers("loss_trace");
  if (n.has("warnings"))
    for (const auto& w : n.raw("warnings")) r.warnings.push_back(w.get<std::string>());
  return r;
}

// ---------------------------------------------------------------------------
// spectrogram files

enum class SpectrogramFormat { csv, binary };

inline SpectrogramFormat format_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".csv") return SpectrogramFormat::csv;
  if (ext == ".bin") return SpectrogramFormat::binary;
  throw DataError("unknown spectrogram extension '" + ext + "' (use .csv or .bin)");
}

inline constexpr char kBinaryMagic[8] = {'M', 'M', 'G', 'F', 'S', 'P', 'E', 'C'};

inline json spectrogram_header(const Spectrogram& s) {
  return {{"format", "mmgfrog-spectrogram"},
          {"version", 1},
          {"grid", grid_to_json(s.grid)},
          {"kind", to_string(s.kind)},
          {"normalization", s.normalization},
          {"layout", "omega-major"},
          {"units", {{"time", "fs"}, {"frequency", "rad/fs"}}}};
}

inline Spectrogram spectrogram_from_header(const json& h) {
  if (!h.is_object() || h.value("format", "") != "mmgfrog-spectrogram") throw DataError("missing spectrogram header");
  if (h.value("layout", "omega-major") != "omega-major") throw DataError("unsupported value layout");
  Spectrogram s;
  try {
    s.grid = grid_from_json(h.at("grid"));
    s.kind = kind_from_string(h.at("kind").get<std::string>());
    s.normalization = h.at("normalization").get<double>();
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad spectrogram header: ") + e.what());
  } catch (const std::exception& e) {
    throw DataError(std::string("bad spectrogram header: ") + e.what());
  }
  return s;
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

inline void write_spectrogram(const Spectrogram& s, const fs::path& p) {
  const std::string header = spectrogram_header(s).dump();
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (format_for(p) == SpectrogramFormat::csv) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << header << '\n';
    for (std::size_t k = 0; k < s.n_w(); ++k) {
      for (std::size_t m = 0; m < s.n_tau(); ++m) {
        if (m) out << ',';
        out << format_double(s.at(k, m));
      }
      out << '\n';
    }
    if (!out) throw DataError("write to " + p.string() + " failed");
    return;
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  if (!out) throw DataError("write to " + p.string() + " failed");
}

inline Spectrogram read_spectrogram(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  if (format_for(p) == SpectrogramFormat::csv) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(p.string() + ": empty file");
    const json h = json::parse(line, nullptr, false);
    if (h.is_discarded()) throw DataError(p.string() + ": first line is not a JSON header");
    Spectrogram s = spectrogram_from_header(h);
    s.values.assign(s.n_w() * s.n_tau(), 0.0);
    for (std::size_t k = 0; k < s.n_w(); ++k) {
      if (!std::getline(in, line)) throw DataError(p.string() + ": truncated at row " + std::to_string(k));
      const char* c = line.c_str();
      for (std::size_t m = 0; m < s.n_tau(); ++m) {
        char* end = nullptr;
        const double v = std::strtod(c, &end);
        if (end == c)
          throw DataError(p.string() + ": bad value at row " + std::to_string(k) + ", column " + std::to_string(m));
        s.at(k, m) = v;
        c = end;
        if (m + 1 < s.n_tau()) {
          if (*c != ',') throw DataError(p.string() + ": row " + std::to_string(k) + " has too few columns");
          ++c;
        }
      }
      if (*c != '\0' && *c != '\r') throw DataError(p.string() + ": row " + std::to_string(k) + " has too many columns");
    }
    if (std::getline(in, line) && !line.empty()) throw DataError(p.string() + ": trailing rows after the grid");
    return s;
  }
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kBinaryMagic, sizeof magic) != 0)
    throw DataError(p.string() + ": not a binary spectrogram");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 20)) throw DataError(p.string() + ": bad header length");
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw DataError(p.string() + ": truncated header");
  const json h = json::parse(header, nullptr, false);
  if (h.is_discarded()) throw DataError(p.string() + ": header is not JSON");
  Spectrogram s = spectrogram_from_header(h);
  s.values.assign(s.n_w() * s.n_tau(), 0.0);
  if (!in.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double))))
    throw DataError(p.string() + ": truncated values");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(p.string() + ": trailing bytes after the values");
  return s;
}

/// Rewrites `in` as `out`; the format follows each extension.
inline void convert_spectrogram(const fs::path& in, const fs::path& out) { write_spectrogram(read_spectrogram(in), out); }

// ---------------------------------------------------------------------------
// checksums and manifests

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &n);
  std::ostringstream hex;
  for (unsigned int i = 0; i < n; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

/// Files are listed relative to the manifest's directory.
inline json make_manifest(const fs::path& dir, const std::vector<fs::path>& files, const json& config, const std::string& command) {
  json list = json::array();
  for (const auto& f : files) {
    const fs::path full = f.is_absolute() ? f : dir / f;
    list.push_back({{"path", fs::relative(full, dir).generic_string()}, {"sha256", sha256_file(full)}, {"bytes", fs::file_size(full)}});
  }
  return {{"format", "mmgfrog-manifest"}, {"version", 1}, {"command", command}, {"config", config}, {"files", list}};
}

inline void write_json(const json& j, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Paths whose checksum no longer matches (missing files included).
inline std::vector<std::string> verify_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  const json m = json::parse(in, nullptr, false);
  if (m.is_discarded() || m.value("format", "") != "mmgfrog-manifest") throw DataError("not a manifest: " + manifest_path.string());
  std::vector<std::string> bad;
  const fs::path dir = manifest_path.parent_path();
  for (const auto& f : m.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    const fs::path p = dir / rel;
    if (!fs::exists(p) || sha256_file(p) != f.at("sha256").get<std::string>()) bad.push_back(rel);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// plot data

class CsvWriter {
 public:
  CsvWriter(const fs::path& p, const std::vector<std::string>& columns) : out_(p) {
    if (!out_) throw DataError("cannot write " + p.string());
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
  }
  void row(std::initializer_list<double> values) { row(RVec(values)); }
  void row(const RVec& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

/// time_fs, |psi|^2 and carrier-free phase of one mode.
inline void write_mode_csv(const TimeGrid& tg, const TemporalMode& mode, double w_s, const fs::path& p) {
  const auto env = strip_carrier(tg, mode, w_s);
  CsvWriter w(p, {"time_fs", "intensity_per_fs", "phase_rad"});
  for (std::size_t j = 0; j < tg.n_t(); ++j) w.row({tg.time(j), std::norm(env.samples[j]), std::arg(env.samples[j])});
}

inline void write_loss_csv(const RVec& trace, const fs::path& p) {
  CsvWriter w(p, {"iteration", "loss"});
  for (std::size_t i = 0; i < trace.size(); ++i) w.row({static_cast<double>(i), trace[i]});
}

// Minimal self-contained SVG renderings.

inline std::string svg_line_plot(const std::vector<RVec>& series, const std::string& title, bool log_y) {
  const double W = 640, H = 400, L = 60, R = 20, T = 30, B = 40;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  std::size_t xmax = 1;
  for (const auto& s : series) {
    xmax = std::max(xmax, s.size());
    for (double v : s) {
      if (log_y && !(v > 0.0)) continue;
      const double y = log_y ? std::log10(v) : v;
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (!(ymax > ymin)) {
    ymin = std::isfinite(ymin) ? ymin - 1.0 : 0.0;
    ymax = ymin + 2.0;
  }
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
    << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  for (std::size_t k = 0; k < series.size(); ++k) {
    o << "<polyline fill=\"none\" stroke=\"" << colors[k % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].size(); ++i) {
      const double v = series[k][i];
      if (log_y && !(v > 0.0)) continue;
      const double y = log_y ? std::log10(v) : v;
      const double px = L + (W - L - R) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(xmax - 1, 1));
      const double py = T + (H - T - B) * (1.0 - (y - ymin) / (ymax - ymin));
      o << px << ',' << py << ' ';
    }
    o << "\"/>\n";
  }
  o << "<text x=\"5\" y=\"" << T + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << (log_y ? "1e" : "") << format_double(ymax)
    << "</text>\n<text x=\"5\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"11\">" << (log_y ? "1e" : "")
    << format_double(ymin) << "</text>\n</svg>\n";
  return o.str();
}

/// Diverging heatmap (blue negative, red positive) scaled to max |value|.
inline std::string svg_heatmap(const Spectrogram& s, const std::string& title) {
  const double cell = std::max(1.0, 480.0 / static_cast<double>(std::max(s.n_w(), s.n_tau())));
  const double W = cell * static_cast<double>(s.n_tau()), H = cell * static_cast<double>(s.n_w());
  const double peak = std::max(s.max_abs(), 1e-300);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H + 24 << "\">\n"
    << "<text x=\"4\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  for (std::size_t k = 0; k < s.n_w(); ++k)
    for (std::size_t m = 0; m < s.n_tau(); ++m) {
      const double v = std::clamp(s.at(k, m) / peak, -1.0, 1.0);
      const int a = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
      const int r = v >= 0 ? 255 : a, b = v >= 0 ? a : 255;
      o << "<rect x=\"" << cell * static_cast<double>(m) << "\" y=\"" << 24 + cell * static_cast<double>(s.n_w() - 1 - k)
        << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << a << ',' << b << ")\"/>\n";
    }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::string& text, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

}  // namespace mmgfrog::io
