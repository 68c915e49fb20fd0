// siam: array geometry, synthesis, acquisition, beamforming and directivity from the command line.
//
// Exit codes: 0 success, 1 other failure, 2 configuration or input error, 3 numerical failure.

#include "siam/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using Json = nlohmann::json;
namespace fs = std::filesystem;
using namespace siam;

namespace {

struct Flags {
  std::string config, scene, csm, panels, subarray, freqs, f_range, band, mode, grid, roi, averaging;
  std::vector<std::string> mics;
  std::vector<std::size_t> drop;
  std::uint64_t seed = 0, geometry_seed = 1;
  double loop_gain = 1, duration = 1, drop_rate = 0, full_scale = 20, stop_threshold = 1e-3;
  std::size_t max_iter = 100;
  int fpga = 0;
  bool dr = true, clean = true, reorder = false, wav = false, with_subarray = false;
};

std::vector<double> number_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw SchemaError(field, "'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw SchemaError(field, "empty list");
  return out;
}

Json load_json_file(const std::string& path) {
  return siam::json::parse(siam::cli::read_file(path), path);
}

/// Structural options shared by the subcommands.
void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Run configuration (JSON); flags override its scalars");
  sub->add_option("--scene", f.scene, "Scene file (JSON) replacing the configuration's scene");
  sub->add_option("--panels", f.panels, "Panel layout, e.g. 3x3");
  sub->add_option("--geometry-seed", f.geometry_seed, "Seed of the PCB sensor layouts");
  sub->add_option("--subarray", f.subarray, "dnw_like | full | freq_dependent | pitch_series | pitch:<index>");
  sub->add_option("--freqs", f.freqs, "Comma-separated analysis frequencies in Hz");
  sub->add_option("--f-range", f.f_range, "lo,hi: all bins (or band centers) in this range");
  sub->add_option("--band", f.band, "narrowband | third_octave | octave");
  sub->add_option("--mode", f.mode, "Acquisition: exact | timeseries | pdm");
  sub->add_option("--duration", f.duration, "Record length in seconds");
  sub->add_option("--full-scale", f.full_scale, "Pa at 0 dBFS for the PDM chain");
  sub->add_option("--drop-rate", f.drop_rate, "Probability of losing each packet");
  sub->add_option("--drop", f.drop, "Packet sequence numbers to drop")->delimiter(',');
  sub->add_flag("--reorder", f.reorder, "Deliver packets out of order");
  sub->add_option("--grid", f.grid, "x_min,x_max,z_min,z_max,spacing of the focus grid (m)");
  sub->add_option("--roi", f.roi, "x_min,x_max,z_min,z_max of the integration region (m)");
  sub->add_flag("--dr,!--no-dr", f.dr, "Diagonal removal (default on)");
  sub->add_flag("--clean-sc,!--conventional", f.clean, "CLEAN-SC deconvolution (default on)");
  sub->add_option("--loop-gain", f.loop_gain, "CLEAN-SC loop gain in (0, 1]");
  sub->add_option("--max-iter", f.max_iter, "CLEAN-SC iteration limit");
  sub->add_option("--stop-threshold", f.stop_threshold, "CLEAN-SC stop level relative to the first peak");
}

/// Folds flags given on the command line into the JSON configuration.
Json build_config(CLI::App* sub, const CLI::App& app, const Flags& f, const std::string& command) {
  Json c = Json::object();
  if (!f.config.empty()) c = load_json_file(f.config);
  if (!c.is_object()) throw SchemaError("<root>", "expected an object");
  if (!c.contains("run")) c["run"] = command;
  auto given = [&](const char* name) { return sub->count(name) > 0; };
  if (app.count("--seed")) c["seed"] = f.seed;
  if (given("--scene")) c["scene"] = load_json_file(f.scene);
  if (given("--panels")) {
    const auto x = f.panels.find('x');
    if (x == std::string::npos) throw SchemaError("--panels", "expected <nx>x<nz>");
    try {
      c["geometry"]["panels"] = {std::stoul(f.panels.substr(0, x)), std::stoul(f.panels.substr(x + 1))};
    } catch (const std::exception&) {
      throw SchemaError("--panels", "expected <nx>x<nz>");
    }
  }
  if (given("--geometry-seed")) c["geometry"]["seed"] = f.geometry_seed;
  if (given("--subarray")) {
    if (f.subarray.rfind("pitch:", 0) == 0) {
      c["subarray"]["strategy"] = "pitch_series";
      try {
        c["subarray"]["index"] = std::stoi(f.subarray.substr(6));
      } catch (const std::exception&) {
        throw SchemaError("--subarray", "expected pitch:<index>");
      }
    } else {
      c["subarray"]["strategy"] = f.subarray;
    }
  }
  if (given("--freqs")) c["beamforming"]["frequencies"] = number_list(f.freqs, "--freqs");
  if (given("--f-range")) c["beamforming"]["f_range"] = number_list(f.f_range, "--f-range");
  if (given("--band")) c["beamforming"]["bands"] = f.band;
  if (given("--mode")) c["acquisition"]["mode"] = f.mode;
  if (given("--duration")) c["acquisition"]["duration"] = f.duration;
  if (given("--full-scale")) c["acquisition"]["full_scale"] = f.full_scale;
  if (given("--drop-rate")) c["acquisition"]["drop_rate"] = f.drop_rate;
  if (given("--drop")) c["acquisition"]["drop_packets"] = f.drop;
  if (given("--reorder")) c["acquisition"]["reorder"] = f.reorder;
  if (given("--grid")) {
    const auto g = number_list(f.grid, "--grid");
    if (g.size() != 5) throw SchemaError("--grid", "expected x_min,x_max,z_min,z_max,spacing");
    c["beamforming"]["grid"] = {{"x_min", g[0]}, {"x_max", g[1]}, {"z_min", g[2]}, {"z_max", g[3]}, {"spacing", g[4]}};
  }
  if (given("--roi")) c["beamforming"]["roi"] = number_list(f.roi, "--roi");
  if (given("--dr") || given("--no-dr")) c["beamforming"]["diagonal_removal"] = f.dr;
  if (given("--clean-sc") || given("--conventional")) c["beamforming"]["clean_sc"] = f.clean;
  if (given("--loop-gain")) c["beamforming"]["loop_gain"] = f.loop_gain;
  if (given("--max-iter")) c["beamforming"]["max_iterations"] = f.max_iter;
  if (given("--stop-threshold")) c["beamforming"]["stop_threshold"] = f.stop_threshold;
  if (sub->get_option_no_throw("--averaging") && given("--averaging")) c["beamforming"]["averaging"] = f.averaging;
  if (sub->get_option_no_throw("--fpga") && given("--fpga")) c["fpga"] = f.fpga;
  if (sub->get_option_no_throw("--mic") && given("--mic")) {
    Json mics = Json::array();
    for (const auto& m : f.mics) {
      const auto v = number_list(m, "--mic");
      if (v.size() != 3) throw SchemaError("--mic", "expected x,y,z");
      mics.push_back(v);
    }
    c["farfield"]["mics"] = mics;
  }
  if (app.count("--format")) {
    if (!c.contains("outputs")) c["outputs"] = Json::object();
    c["outputs"]["format"] = app.get_option("--format")->as<std::string>();
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Microphone-array acquisition, beamforming and directivity analysis"};
  app.require_subcommand(1);
  Flags f;
  std::size_t jobs = 1;
  std::string format, out, run_name;
  app.add_option("--seed", f.seed, "Seed for all random processes of the scene and the acquisition");
  app.add_option("--jobs", jobs, "Worker threads (outputs do not depend on it)")->check(CLI::Range(1, 1024));
  app.add_option("--format", format, "Output format: csv | json | bin")->check(CLI::IsMember({"csv", "json", "bin"}));
  app.add_option("--out", out, "Output root (default: $SIAM_OUTPUT_ROOT or ./siam_out)");
  app.add_option("--run", run_name, "Run directory name below the output root");

  auto* geometry = app.add_subcommand("geometry", "Generate the array layout (and optional sub-arrays)");
  auto* simulate = app.add_subcommand("simulate", "Synthesize CSMs (and PCM) for a scene");
  auto* acquire = app.add_subcommand("acquire", "Run one FPGA through modulator, packets and decimator");
  auto* beamform = app.add_subcommand("beamform", "Beamform a scene or a recorded CSM file");
  auto* directivity = app.add_subcommand("directivity", "Directivity from the pitch sub-array series");
  auto* farfield = app.add_subcommand("farfield", "Compare ROI spectra with virtual far-field microphones");
  auto* pipeline = app.add_subcommand("pipeline", "Full run from a configuration file");
  for (auto* s : {geometry, simulate, acquire, beamform, directivity, farfield, pipeline}) {
    add_common(s, f);
    s->fallthrough();
  }
  geometry->add_flag("--with-subarray", f.with_subarray, "Also export the selected sub-array(s)");
  simulate->add_flag("--wav", f.wav, "Also write the time series as 32-bit WAV (timeseries/pdm modes)");
  acquire->add_option("--fpga", f.fpga, "FPGA whose 200 channels are acquired");
  beamform->add_option("--csm", f.csm, "Recorded CSM file instead of a synthesized scene");
  directivity->add_option("--averaging", f.averaging, "Angle averaging of Gamma: db | linear");
  farfield->add_option("--mic", f.mics, "Virtual microphone x,y,z (repeatable)");
  pipeline->add_option("config_file", f.config, "Run configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  if (out.empty()) {
    const char* env = std::getenv("SIAM_OUTPUT_ROOT");
    out = env && *env ? env : "siam_out";
  }

  std::unique_ptr<siam::cli::Run> run;
  try {
    Json config = build_config(sub, app, f, command);
    if (!run_name.empty()) config["run"] = run_name;
    const auto cfg = siam::cli::run_config_from_json(config);
    run = std::make_unique<siam::cli::Run>(fs::path(out) / cfg.run, command, config);
    run->clear_previous();
    if (!f.config.empty()) run->input(f.config);
    if (!f.scene.empty()) run->input(f.scene);

    if (command == "geometry")
      siam::cli::cmd_geometry(cfg, *run, f.with_subarray);
    else if (command == "simulate")
      siam::cli::cmd_simulate(cfg, *run, f.wav);
    else if (command == "acquire")
      siam::cli::cmd_acquire(cfg, *run);
    else if (command == "beamform")
      siam::cli::cmd_beamform(cfg, *run, jobs, f.csm);
    else if (command == "directivity")
      siam::cli::cmd_directivity(cfg, *run, jobs);
    else if (command == "farfield")
      siam::cli::cmd_farfield(cfg, *run, jobs);
    else
      siam::cli::cmd_pipeline(cfg, *run, jobs);
    run->finish();
    std::cout << (run->root() / "manifest.json").string() << '\n';
    return 0;
  } catch (const SchemaError& e) {
    std::cerr << "siam: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "siam: invalid input" << (run ? " in " + run->stage : "") << ": " << e.what() << '\n';
    return 2;
  } catch (const ConstraintError& e) {
    std::cerr << "siam: invalid input" << (run ? " in " + run->stage : "") << ": " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "siam: numerical failure in stage " << (run ? run->stage : "setup") << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "siam: " << (run ? run->stage + ": " : "") << e.what() << '\n';
    return 1;
  }
}
