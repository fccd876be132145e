#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "mmgfrog/io.hpp"

using namespace mmgfrog;
using namespace mmgfrog::io;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mmgfrog_test_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json small_config() {
  return json::parse(R"({
    "seed": 7,
    "grid": {"n_t": 64, "dt_fs": 2.0, "n_tau": 16, "delay_step": 2},
    "state": {"modes": [
      {"generator": {"type": "hermite_gaussian", "order": 0, "t0_fs": 10, "chirp": 1}, "squeezing_db": 3},
      {"generator": {"type": "hermite_gaussian", "order": 1, "t0_fs": 10, "chirp": 1}, "var_x": 0.2, "var_p": 0.5}
    ]},
    "gate": {"type": "chirped_gaussian", "fwhm_fs": 30, "chirp": 2, "peak_gain_db": 20},
    "retrieval": {"n_modes": 2, "max_iters": 50}
  })");
}

Spectrogram odd_values() {
  const auto c = parse_config(small_config());
  Spectrogram s = synthesize_vacuum_subtracted(*c.state, c.model());
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // values that do not print exactly in a short decimal form
  for (auto& v : s.values) v = u(rng) * 1e-7 + std::nextafter(v, 1e300);
  s.values[0] = 5e-324;
  s.values[1] = -0.0;
  s.values[2] = 1.7976931348623157e308;
  return s;
}

bool bitwise_equal(const RVec& a, const RVec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string config_error_pointer(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.pointer();
  }
  return "<no error>";
}

}  // namespace

TEST(SpectrogramFile, CsvAndBinaryRoundTripBitwise) {
  const auto d = scratch_dir("roundtrip");
  Spectrogram s = odd_values();
  s.kind = SpectrogramKind::vacuum_subtracted;
  s.normalization = 3.25;
  for (const char* name : {"a.csv", "a.bin"}) {
    write_spectrogram(s, d / name);
    const auto r = read_spectrogram(d / name);
    EXPECT_TRUE(bitwise_equal(r.values, s.values)) << name;
    EXPECT_EQ(r.grid, s.grid);
    EXPECT_EQ(r.kind, s.kind);
    EXPECT_EQ(r.normalization, s.normalization);
  }
}

TEST(SpectrogramFile, ConvertIsLossless) {
  const auto d = scratch_dir("convert");
  const Spectrogram s = odd_values();
  write_spectrogram(s, d / "a.csv");
  convert_spectrogram(d / "a.csv", d / "b.bin");
  convert_spectrogram(d / "b.bin", d / "c.csv");
  EXPECT_TRUE(bitwise_equal(read_spectrogram(d / "b.bin").values, s.values));
  std::ifstream a(d / "a.csv"), c(d / "c.csv");
  std::stringstream sa, sc;
  sa << a.rdbuf();
  sc << c.rdbuf();
  EXPECT_EQ(sa.str(), sc.str());
}

TEST(SpectrogramFile, TruncatedInputIsADataError) {
  const auto d = scratch_dir("truncated");
  const Spectrogram s = odd_values();
  write_spectrogram(s, d / "a.csv");
  write_spectrogram(s, d / "a.bin");
  for (const char* name : {"a.csv", "a.bin"}) {
    const auto p = d / name;
    fs::resize_file(p, fs::file_size(p) / 2);
    EXPECT_THROW(read_spectrogram(p), DataError) << name;
  }
  write_text("not json\n1,2\n", d / "b.csv");
  EXPECT_THROW(read_spectrogram(d / "b.csv"), DataError);
  EXPECT_THROW(read_spectrogram(d / "missing.csv"), DataError);
  EXPECT_THROW(write_spectrogram(s, d / "a.txt"), DataError);
}

TEST(SpectrogramFile, RowWidthIsChecked) {
  const auto d = scratch_dir("width");
  Spectrogram s = odd_values();
  write_spectrogram(s, d / "a.csv");
  std::ifstream in(d / "a.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  write_text(header + "\n" + row + ",1\n", d / "b.csv");
  EXPECT_THROW(read_spectrogram(d / "b.csv"), DataError);
}

TEST(Config, ParsesAndDerivesSeeds) {
  const auto c = parse_config(small_config());
  ASSERT_TRUE(c.state.has_value());
  EXPECT_EQ(c.state->n_modes(), 2u);
  EXPECT_NEAR(c.state->var_x[0], squeezing_db_to_variance(3.0), 1e-15);
  EXPECT_NEAR(c.state->var_x[0] * c.state->var_p[0], 1.0 / 16.0, 1e-15);
  EXPECT_EQ(c.tg.n_t(), 64u);
  EXPECT_EQ(c.dg.n_tau(), 16u);
  EXPECT_EQ(c.retrieval.max_iters, 50u);
  EXPECT_EQ(c.retrieval.seed, derive_seed(7, "init"));
}

TEST(Config, ErrorsCarryJsonPointers) {
  auto j = small_config();
  j["grid"]["n_t"] = 100;
  EXPECT_EQ(config_error_pointer(j), "/grid");

  j = small_config();
  j["state"]["modes"][1]["generator"]["t0_fs"] = -3;
  EXPECT_EQ(config_error_pointer(j), "/state/modes/1/generator/t0_fs");

  j = small_config();
  j["retrieval"]["max_iter"] = 5;
  EXPECT_EQ(config_error_pointer(j), "/retrieval/max_iter");

  j = small_config();
  j["retrieval"]["step_schedule"] = "adam";
  EXPECT_EQ(config_error_pointer(j), "/retrieval/step_schedule");

  j = small_config();
  j["state"]["modes"][0]["var_x"] = 0.01;
  j["state"]["modes"][0].erase("squeezing_db");
  EXPECT_EQ(config_error_pointer(j), "/state");

  j = small_config();
  j.erase("gate");
  EXPECT_EQ(config_error_pointer(j), "/gate");

  j = small_config();
  j["gate"]["type"] = "square";
  EXPECT_EQ(config_error_pointer(j), "/gate/type");
}

TEST(Config, StochasticBlocksNeedASeed) {
  auto j = small_config();
  j.erase("seed");
  EXPECT_NO_THROW(parse_config(j));
  j["noise"] = {{"snr_db", 15}};
  EXPECT_EQ(config_error_pointer(j), "/seed");
  j["seed"] = 3;
  const auto c = parse_config(j);
  EXPECT_EQ(c.noise->spec.seed, derive_seed(3, "noise"));
  j["noise"]["snr_db"] = "inf";
  EXPECT_TRUE(std::isinf(parse_config(j).noise->spec.snr_db));
}

TEST(Config, OverridesUseDottedKeys) {
  auto j = small_config();
  apply_override(j, "retrieval.max_iters=500");
  apply_override(j, "state.modes.1.var_x=0.15");
  apply_override(j, "retrieval.step_schedule=backtracking");
  apply_override(j, "output_dir=results/run1");
  apply_override(j, "retrieval.noise_sigma=2.5");
  const auto c = parse_config(j);
  EXPECT_EQ(c.retrieval.max_iters, 500u);
  EXPECT_EQ(c.state->var_x[1], 0.15);
  EXPECT_EQ(c.retrieval.step_schedule, StepSchedule::backtracking);
  EXPECT_EQ(c.output_dir, "results/run1");
  EXPECT_EQ(c.retrieval.noise_sigma, 2.5);
  EXPECT_THROW(apply_override(j, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(j, "state.modes.9.var_x=1"), ConfigError);
}

TEST(Config, SampledModesAndGate) {
  const auto base = parse_config(small_config());
  auto j = small_config();
  j["state"] = state_to_json(*base.state);
  const auto c = parse_config(j);
  for (std::size_t n = 0; n < 2; ++n) EXPECT_EQ(c.state->basis.modes[n].samples, base.state->basis.modes[n].samples);

  json g = complex_to_json(base.gate.envelope);
  g["type"] = "samples";
  g["kappa"] = base.gate.kappa;
  j["gate"] = g;
  const auto c2 = parse_config(j);
  EXPECT_EQ(c2.gate.envelope, base.gate.envelope);

  g["re"].erase(0);
  j["gate"] = g;
  EXPECT_EQ(config_error_pointer(j), "/gate");
}

TEST(Result, JsonRoundTrip) {
  const auto c = parse_config(small_config());
  const Spectrogram s = synthesize_vacuum_subtracted(*c.state, c.model());
  const auto r = retrieve(s, c.gate_fn(), c.retrieval);
  const json j = result_to_json(r, s.grid, c.source);
  const auto back = result_from_json(json::parse(j.dump()));
  ASSERT_EQ(back.basis.size(), r.basis.size());
  for (std::size_t n = 0; n < r.basis.size(); ++n) EXPECT_EQ(back.basis.modes[n].samples, r.basis.modes[n].samples);
  EXPECT_EQ(back.var_x, r.var_x);
  EXPECT_EQ(back.var_p, r.var_p);
  EXPECT_EQ(back.loss_trace, r.loss_trace);
  EXPECT_EQ(back.final_loss, r.final_loss);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(j.at("config"), c.source);
}

TEST(Manifest, DetectsModification) {
  const auto d = scratch_dir("manifest");
  write_spectrogram(odd_values(), d / "s.csv");
  write_text("hello\n", d / "notes.txt");
  write_json(make_manifest(d, {"s.csv", "notes.txt"}, small_config(), "simulate"), d / "manifest.json");
  EXPECT_TRUE(verify_manifest(d / "manifest.json").empty());
  write_text("hello!\n", d / "notes.txt");
  EXPECT_EQ(verify_manifest(d / "manifest.json"), std::vector<std::string>{"notes.txt"});
  fs::remove(d / "s.csv");
  EXPECT_EQ(verify_manifest(d / "manifest.json").size(), 2u);
}

TEST(Manifest, KnownDigest) {
  const auto d = scratch_dir("digest");
  write_text("abc", d / "abc.txt");
  EXPECT_EQ(sha256_file(d / "abc.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(PlotData, ModeCsvAndSvg) {
  const auto d = scratch_dir("plot");
  const auto c = parse_config(small_config());
  write_mode_csv(c.tg, c.state->basis.modes[0], c.state->w_s, d / "mode0.csv");
  std::ifstream in(d / "mode0.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "time_fs,intensity_per_fs,phase_rad");
  std::size_t rows = 0;
  double norm = 0.0;
  while (std::getline(in, line)) {
    ++rows;
    norm += std::stod(line.substr(line.find(',') + 1)) * c.tg.dt();
  }
  EXPECT_EQ(rows, c.tg.n_t());
  EXPECT_NEAR(norm, 1.0, 1e-12);

  const auto svg = svg_line_plot({{1.0, 0.1, 0.01}}, "loss", true);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  const Spectrogram s = synthesize_vacuum_subtracted(*c.state, c.model());
  const auto hm = svg_heatmap(s, "spectrogram");
  EXPECT_NE(hm.find("<rect"), std::string::npos);
}
