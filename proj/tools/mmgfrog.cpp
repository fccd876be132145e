// mmgfrog: simulate, retrieve and benchmark multimode squeezed-light FROG.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 retrieval did not
// reach the loss threshold, 1 anything unexpected.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "mmgfrog/bench.hpp"
#include "mmgfrog/io.hpp"

using namespace mmgfrog;
using namespace mmgfrog::io;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  unsigned threads = 0;
  std::string format = "csv";
  bool svg = false;
};

RunConfig load(const Common& o) {
  json j = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  for (const auto& s : o.overrides) apply_override(j, s);
  if (!o.out_dir.empty()) j["output_dir"] = o.out_dir;
  return parse_config(j);
}

const GaussianStateSpec& need_state(const RunConfig& c) {
  if (!c.state) throw ConfigError("/state", "this command needs a state block");
  return *c.state;
}

std::string ext(const Common& o) {
  if (o.format != "csv" && o.format != "bin") throw ConfigError("", "--format must be csv or bin");
  return "." + o.format;
}

json truth_comparison(const TimeGrid& tg, const GaussianStateSpec& truth, const RetrievalResult& r) {
  if (truth.n_modes() != r.basis.size()) return nullptr;
  const auto o = summarize_against(tg, truth.basis, r);
  json modes = json::array();
  for (std::size_t q = 0; q < truth.n_modes(); ++q)
    modes.push_back({{"fidelity", o.fidelity[q]},
                     {"squeezed_variance", o.squeezed[q]},
                     {"antisqueezed_variance", o.antisqueezed[q]},
                     {"true_squeezed_variance", std::min(truth.var_x[q], truth.var_p[q])},
                     {"true_antisqueezed_variance", std::max(truth.var_x[q], truth.var_p[q])}});
  return modes;
}

json moments_json(const Moments& m) { return {{"mean", m.mean}, {"std", m.stddev}}; }

void finish(const fs::path& dir, const std::vector<fs::path>& files, const RunConfig& c, const std::string& cmd) {
  write_json(make_manifest(dir, files, c.source, cmd), dir / "manifest.json");
  std::cout << "wrote " << files.size() << " files and manifest.json to " << dir.string() << "\n";
}

int cmd_simulate(const Common& o) {
  const RunConfig c = load(o);
  const auto& st = need_state(c);
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  const auto fm = c.model();
  const auto raw = synthesize_spectrogram(st, fm, true);
  const auto vac = vacuum_spectrogram(fm);
  const auto vs = vacuum_subtract(raw, vac);
  const std::string e = ext(o);
  std::vector<fs::path> files{"raw" + e, "vacuum" + e, "vacsub" + e};
  write_spectrogram(raw, dir / files[0]);
  write_spectrogram(vac, dir / files[1]);
  write_spectrogram(vs, dir / files[2]);
  if (c.noise && std::isfinite(c.noise->spec.snr_db)) {
    files.emplace_back("vacsub_noisy" + e);
    write_spectrogram(add_noise(vs, c.noise->spec), dir / files.back());
  }
  if (o.svg) {
    files.emplace_back("vacsub.svg");
    write_text(svg_heatmap(vs, "vacuum-subtracted spectrogram"), dir / files.back());
  }
  std::cout << "vacuum-subtracted min " << vs.min() << ", max " << vs.max() << "\n";
  finish(dir, files, c, "simulate");
  return exit_ok;
}

int cmd_retrieve(const Common& o, const std::string& input) {
  const RunConfig c = load(o);
  const Spectrogram meas = read_spectrogram(input);
  const auto gate = c.gate_fn();
  if (!(meas.grid.time == gate.grid)) throw DataError(input + ": time grid does not match the configured gate");
  RetrievalConfig rc = c.retrieval;
  if (c.retrieval_mask_threshold > 0.0) rc.mask = build_mask(meas, c.retrieval_mask_threshold);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = retrieve(meas, gate, rc, [](std::size_t it, double l) {
    if (it % 500 == 0) std::fprintf(stderr, "iteration %zu  loss %.6g\n", it, l);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  json res = result_to_json(r, meas.grid, c.source);
  res["wall_seconds"] = secs;
  if (c.state) res["truth_comparison"] = truth_comparison(meas.grid.time, *c.state, r);
  std::vector<fs::path> files{"result.json", "loss_trace.csv"};
  write_json(res, dir / files[0]);
  write_loss_csv(r.loss_trace, dir / files[1]);
  for (std::size_t n = 0; n < r.basis.size(); ++n) {
    files.emplace_back("mode_" + std::to_string(n) + ".csv");
    write_mode_csv(meas.grid.time, r.basis.modes[n], gate.w_s, dir / files.back());
  }
  if (o.svg) {
    files.emplace_back("loss_trace.svg");
    write_text(svg_line_plot({r.loss_trace}, "loss", true), dir / files.back());
  }
  finish(dir, files, c, "retrieve");
  std::cout << "final loss " << r.final_loss << " after " << r.iterations_run << " iterations ("
            << (r.converged ? "converged" : "not converged") << ")\n";
  return r.converged ? exit_ok : exit_not_converged;
}

int cmd_noise_sweep(const Common& o, std::vector<double> levels) {
  const RunConfig c = load(o);
  const auto& st = need_state(c);
  if (!c.noise) throw ConfigError("/noise", "noise-sweep needs a noise block");
  if (levels.empty()) levels = c.noise->levels_db;
  if (levels.empty()) throw ConfigError("/noise/levels_db", "give at least one SNR level (or --snr)");
  std::sort(levels.begin(), levels.end());
  const auto gate = c.gate_fn();
  const auto clean = synthesize_vacuum_subtracted(st, ForwardModel(gate, c.dg));
  NoiseSweepOptions opt;
  opt.repeats = c.noise->repeats;
  opt.mask_threshold = c.noise->mask_threshold;
  opt.definition = c.noise->spec.definition;
  opt.seed = c.master_seed();
  opt.keep_traces = true;
  opt.noise_floor_stop = c.noise->noise_floor_stop;
  const auto lv = noise_sweep(clean, gate, st, c.retrieval, levels, opt);

  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  json out = {{"snr_definition", to_string(opt.definition)}, {"levels", json::array()}};
  {
    CsvWriter summary(dir / "sweep.csv", {"snr_db", "success_fraction", "mean_fidelity_min", "mean_fidelity_max"});
    CsvWriter dist(dir / "fidelity_distribution.csv", {"snr_db", "run", "mode", "fidelity", "loss", "success"});
    CsvWriter traces(dir / "loss_traces.csv", {"snr_db", "run", "iteration", "loss"});
    for (const auto& l : lv) {
      json runs = json::array();
      for (std::size_t r = 0; r < l.runs.size(); ++r) {
        runs.push_back({{"loss", l.runs[r].loss},
                        {"success", l.runs[r].success},
                        {"fidelity", l.runs[r].fidelity},
                        {"squeezed_variance", l.runs[r].squeezed},
                        {"antisqueezed_variance", l.runs[r].antisqueezed}});
        for (std::size_t q = 0; q < l.runs[r].fidelity.size(); ++q)
          dist.row({l.snr_db, double(r), double(q), l.runs[r].fidelity[q], l.runs[r].loss, l.runs[r].success ? 1.0 : 0.0});
        for (std::size_t i = 0; i < l.loss_traces[r].size(); ++i) traces.row({l.snr_db, double(r), double(i), l.loss_traces[r][i]});
      }
      out["levels"].push_back({{"snr_db", l.snr_db},
                               {"success_fraction", l.success_fraction},
                               {"fidelity", moments_json(l.fidelity)},
                               {"squeezed_variance", moments_json(l.squeezed)},
                               {"antisqueezed_variance", moments_json(l.antisqueezed)},
                               {"runs", runs}});
      const auto& fm = l.fidelity.mean;
      const double lo = fm.empty() ? std::nan("") : *std::min_element(fm.begin(), fm.end());
      const double hi = fm.empty() ? std::nan("") : *std::max_element(fm.begin(), fm.end());
      summary.row({l.snr_db, l.success_fraction, lo, hi});
      std::cout << "SNR " << l.snr_db << " dB: success " << l.success_fraction << ", mean fidelity " << lo << " to " << hi << "\n";
    }
  }  // CSV files closed before hashing
  out["truth"] = {{"var_x", st.var_x}, {"var_p", st.var_p}};
  write_json(out, dir / "sweep.json");
  finish(dir, {"sweep.json", "sweep.csv", "fidelity_distribution.csv", "loss_traces.csv"}, c, "noise-sweep");
  return exit_ok;
}

int cmd_bootstrap(const Common& o, const std::string& input) {
  const RunConfig c = load(o);
  if (!c.bootstrap) throw ConfigError("/bootstrap", "bootstrap needs a bootstrap block");
  const auto gate = c.gate_fn();
  Spectrogram noisy;
  if (!input.empty()) {
    noisy = read_spectrogram(input);
  } else {
    const auto& st = need_state(c);
    noisy = synthesize_vacuum_subtracted(st, ForwardModel(gate, c.dg));
    if (c.noise) noisy = add_noise(noisy, c.noise->spec);
  }
  RetrievalConfig rc = c.retrieval;
  const double thr = c.noise ? c.noise->mask_threshold : (c.retrieval_mask_threshold > 0.0 ? c.retrieval_mask_threshold : 1e-3);
  rc.mask = build_mask(noisy, thr);
  if (c.noise) rc.noise_floor_stop = c.noise->noise_floor_stop;
  const ModeBasis* truth = c.state && c.state->n_modes() == rc.n_modes ? &c.state->basis : nullptr;
  const auto b = bootstrap_retrieve(noisy, gate, rc, *c.bootstrap, truth);

  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  json out = {{"n_replicas", b.n_replicas},
              {"n_success", b.n_success},
              {"success_fraction", b.success_fraction},
              {"against", truth ? "truth" : "full-data retrieval"},
              {"fidelity", moments_json(b.fidelity)},
              {"squeezed_variance", moments_json(b.squeezed)},
              {"antisqueezed_variance", moments_json(b.antisqueezed)},
              {"loss", moments_json(b.loss)},
              {"reference", result_to_json(b.reference, noisy.grid, c.source)}};
  write_json(out, dir / "bootstrap.json");
  std::vector<fs::path> files{"bootstrap.json"};
  for (std::size_t q = 0; q < b.intensity.size(); ++q) {
    files.emplace_back("intensity_band_" + std::to_string(q) + ".csv");
    CsvWriter w(dir / files.back(), {"time_fs", "mean_intensity_per_fs", "std_intensity_per_fs"});
    if (b.intensity[q].mean.empty()) continue;
    for (std::size_t j = 0; j < gate.grid.n_t(); ++j)
      w.row({gate.grid.time(j), b.intensity[q].mean[j], b.intensity[q].stddev[j]});
  }
  finish(dir, files, c, "bootstrap");
  std::cout << "bootstrap: " << b.n_success << " of " << b.n_replicas << " replicas under the loss threshold\n";
  return b.empty_success ? exit_not_converged : exit_ok;
}

int cmd_bench(const Common& o, std::vector<std::size_t> modes, std::size_t iters, std::vector<std::string> sizes) {
  const RunConfig c = load(o);
  if (modes.empty()) throw ConfigError("", "--modes needs at least one value");
  SetupParams p = four_mode_params();
  p.n_t = c.grid.n_t;
  p.dt = c.grid.dt_fs;
  p.n_tau = c.grid.n_tau;
  p.delay_step = c.grid.delay_step;
  json out = {{"iterations", iters}, {"by_modes", json::array()}, {"by_grid", json::array()}};
  fs::create_directories(c.output_dir);
  auto w = std::make_unique<CsvWriter>(fs::path(c.output_dir) / "bench.csv",
                                       std::vector<std::string>{"n_modes", "n_w", "n_tau", "seconds_per_iteration"});
  std::vector<double> xm, ym;
  const Setup base = make_setup(p);
  for (auto m : modes) {
    const auto b = time_iterations(base, m, iters);
    xm.push_back(double(m));
    ym.push_back(b.seconds_per_iteration);
    w->row({double(m), double(b.n_w), double(b.n_tau), b.seconds_per_iteration});
    out["by_modes"].push_back({{"n_modes", m}, {"n_w", b.n_w}, {"n_tau", b.n_tau}, {"seconds_per_iteration", b.seconds_per_iteration}});
    std::cout << "M=" << m << " " << b.n_w << "x" << b.n_tau << ": " << 1e3 * b.seconds_per_iteration << " ms/iteration\n";
  }
  if (xm.size() > 1) out["slope_in_modes"] = loglog_slope(xm, ym);
  std::vector<double> xg, yg;
  for (const auto& s : sizes) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("", "--sizes entries look like 256x96");
    SetupParams q = p;
    q.n_t = std::stoul(s.substr(0, x));
    q.n_tau = std::stoul(s.substr(x + 1));
    const auto b = time_iterations(make_setup(q), modes.front(), iters);
    xg.push_back(double(b.n_w * b.n_tau));
    yg.push_back(b.seconds_per_iteration);
    w->row({double(modes.front()), double(b.n_w), double(b.n_tau), b.seconds_per_iteration});
    out["by_grid"].push_back({{"n_modes", modes.front()}, {"n_w", b.n_w}, {"n_tau", b.n_tau}, {"seconds_per_iteration", b.seconds_per_iteration}});
    std::cout << "M=" << modes.front() << " " << b.n_w << "x" << b.n_tau << ": " << 1e3 * b.seconds_per_iteration << " ms/iteration\n";
  }
  if (xg.size() > 1) out["slope_in_pixels"] = loglog_slope(xg, yg);
  w.reset();
  if (out.contains("slope_in_modes")) std::cout << "log-log slope in M: " << out["slope_in_modes"] << "\n";
  if (out.contains("slope_in_pixels")) std::cout << "log-log slope in N_w N_tau: " << out["slope_in_pixels"] << "\n";
  write_json(out, fs::path(c.output_dir) / "bench.json");
  finish(c.output_dir, {"bench.json", "bench.csv"}, c, "bench");
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimode squeezed-light FROG: simulation, retrieval and noise studies"};
  app.require_subcommand(1);
  Common o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "run configuration (JSON)");
    sub->add_option("--set", o.overrides, "override a config field, e.g. retrieval.max_iters=500")->take_all();
    sub->add_option("-o,--out", o.out_dir, "output directory (overrides output_dir)");
    sub->add_option("--threads", o.threads, "worker threads (default: MMGFROG_THREADS or all cores)");
    sub->add_flag("--svg", o.svg, "also write SVG plots");
  };

  auto* sim = app.add_subcommand("simulate", "write raw, vacuum and vacuum-subtracted spectrograms");
  add_common(sim);
  sim->add_option("--format", o.format, "csv or bin")->capture_default_str();

  std::string input;
  auto* ret = app.add_subcommand("retrieve", "retrieve modes and variances from a spectrogram file");
  add_common(ret);
  ret->add_option("-i,--input", input, "spectrogram file (.csv or .bin)")->required();

  std::vector<double> levels;
  auto* sweep = app.add_subcommand("noise-sweep", "repeated noisy retrievals over SNR levels");
  add_common(sweep);
  sweep->add_option("--snr", levels, "SNR levels in dB (default: noise.levels_db)")->delimiter(',');

  auto* boot = app.add_subcommand("bootstrap", "pixel-bootstrap error bars from one noisy spectrogram");
  add_common(boot);
  boot->add_option("-i,--input", input, "noisy spectrogram (default: simulate from the config)");

  std::vector<std::size_t> modes{1, 2, 4, 8, 16};
  std::size_t iters = 50;
  std::vector<std::string> sizes{"256x96", "512x96", "512x192"};
  auto* bench = app.add_subcommand("bench", "per-iteration wall time against M and grid size");
  add_common(bench);
  bench->add_option("--modes", modes, "mode counts")->delimiter(',')->capture_default_str();
  bench->add_option("--iters", iters, "timed iterations per point")->capture_default_str();
  bench->add_option("--sizes", sizes, "grids as n_t x n_tau")->delimiter(',')->capture_default_str();

  std::string conv_in, conv_out;
  auto* conv = app.add_subcommand("convert", "convert a spectrogram between CSV and binary");
  conv->add_option("input", conv_in)->required();
  conv->add_option("output", conv_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_config;
  }
  if (o.threads > 0) set_thread_count(o.threads);

  try {
    if (*sim) return cmd_simulate(o);
    if (*ret) return cmd_retrieve(o, input);
    if (*sweep) return cmd_noise_sweep(o, levels);
    if (*boot) return cmd_bootstrap(o, input);
    if (*bench) return cmd_bench(o, modes, iters, sizes);
    if (*conv) {
      convert_spectrogram(conv_in, conv_out);
      return exit_ok;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.what() << "\n";
    return exit_config;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const GridMismatch& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const UndefinedLoss& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_ok;
}
