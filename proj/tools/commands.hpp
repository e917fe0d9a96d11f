#pragma once

// Subcommand bodies for the spiketime CLI. Kept separate from argument parsing
// so the integration tests can drive them directly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spiketime/spiketime.hpp"

namespace spiketime::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIngestion = 3,
  kCalibrationInfeasible = 4,
  kIo = 5,
};

class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  std::filesystem::path out;
  int trials = 20;
  std::uint64_t seed = 1;
  SyntheticSpec spec;
};

struct CalibrationSelection {
  std::vector<std::string> cells;  // "GAS:LEVEL" or "GAS:LEVEL:TRIAL"; empty = every level of cal_trial
  int cal_trial = 0;
  CalibrationConfig config;
};

struct EncodeConfig {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> params_file;
  bool calibrate = false;
  CalibrationSelection calibration;
  std::optional<double> solver_step;
  std::filesystem::path out;
  std::vector<std::string> dump;  // "GAS:LEVEL:TRIAL"
  std::filesystem::path dump_dir;
  unsigned jobs = 1;
};

struct CalibrateConfig {
  std::filesystem::path dataset;
  std::filesystem::path out;
  CalibrationSelection calibration;
  std::optional<double> solver_step;
  unsigned jobs = 1;
};

struct AnalyzeConfig {
  std::filesystem::path traces;
  std::filesystem::path out;
  std::vector<std::string> gases;  // empty = all present
};

inline TrialKey parse_cell(const std::string& text, int default_trial) {
  const auto parts = io::split(text, ':');
  if (parts.size() < 2 || parts.size() > 3) throw usage_error("cell '" + text + "' is not GAS:LEVEL[:TRIAL]");
  const auto gas = gas_from_string(parts[0]);
  const auto level = io::parse_double(parts[1]);
  const auto trial = parts.size() == 3 ? io::parse_double(parts[2]) : std::optional<double>(default_trial);
  if (!gas || !level || !trial) throw usage_error("cell '" + text + "' is not GAS:LEVEL[:TRIAL]");
  return {*gas, static_cast<int>(*level), static_cast<int>(*trial)};
}

inline std::vector<TrialRecord> load_all(const DatasetManifest& m, unsigned jobs) {
  std::vector<TrialRecord> out(m.trials.size());
  parallel_for(m.trials.size(), jobs, [&](std::size_t i) { out[i] = load_trial(m, m.trials[i]); });
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

inline std::vector<TrialRecord> select_calibration(const std::vector<TrialRecord>& all, const CalibrationSelection& sel) {
  std::vector<TrialKey> keys;
  if (sel.cells.empty()) {
    for (const auto& t : all) {
      if (t.key.trial == sel.cal_trial) keys.push_back(t.key);
    }
  } else {
    for (const auto& c : sel.cells) keys.push_back(parse_cell(c, sel.cal_trial));
  }
  std::vector<TrialRecord> picked;
  for (const auto& k : keys) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& t) { return t.key == k; });
    if (it == all.end()) throw usage_error("calibration cell " + to_string(k) + " not in dataset");
    picked.push_back(*it);
  }
  if (picked.empty()) throw usage_error("no calibration trials selected");
  return picked;
}

inline int cmd_synth(const SynthConfig& cfg, std::ostream& log) {
  if (cfg.out.empty()) throw usage_error("synth: --out is required");
  if (cfg.trials < 1) throw usage_error("synth: --trials must be >= 1");
  const auto m = write_synthetic_dataset(cfg.out, cfg.spec, cfg.trials, cfg.seed);
  log << (cfg.out / kManifestName).string() << "\n";
  log << m.size() << " trials written\n";
  return kOk;
}

inline CalibrationReport run_calibration(const std::vector<TrialRecord>& all, CalibrationSelection sel,
                                         std::optional<double> solver_step, std::ostream& log) {
  if (solver_step) sel.config.base.solver_step = *solver_step;
  const auto picked = select_calibration(all, sel);
  log << "calibrating on " << picked.size() << " trials\n";
  return calibrate(picked, sel.config);
}

inline int cmd_calibrate(const CalibrateConfig& cfg, std::ostream& log) {
  if (cfg.out.empty()) throw usage_error("calibrate: --out is required");
  const auto manifest = load_manifest(cfg.dataset);
  const auto all = load_all(manifest, cfg.jobs);
  const auto report = run_calibration(all, cfg.calibration, cfg.solver_step, log);
  save_report(report, cfg.out);
  const auto& p = report.params;
  log << "theta_cd=" << io::format_double(p.cd_cmp.threshold) << " V theta_em=" << io::format_double(p.em_cmp.threshold)
      << " V tau_in=" << io::format_double(p.integ.tau_in) << " s tau_leak=" << io::format_double(p.integ.tau_leak)
      << " s\n";
  log << cfg.out.string() << "\n";
  return kOk;
}

inline std::string series_csv(const TimeSeries& s, const char* column) {
  std::string out = std::string("time_s,") + column + "\n";
  for (std::size_t i = 0; i < s.size(); ++i) out += io::format_double(s.time_at(i)) + "," + io::format_double(s[i]) + "\n";
  return out;
}

inline std::string pulses_csv(const PulseTrain& cd, const PulseTrain& em) {
  std::string out = "signal,rise_s,fall_s\n";
  for (const auto& p : cd.pulses) out += "cd," + io::format_double(p.rise) + "," + io::format_optional(p.fall) + "\n";
  for (const auto& p : em.pulses) out += "em," + io::format_double(p.rise) + "," + io::format_optional(p.fall) + "\n";
  return out;
}

/// Input, differentiator, integrator and pulse files for one trial.
inline void dump_waveforms(const TrialRecord& t, const CircuitParams& p, const EncoderOptions& opts,
                           const std::filesystem::path& dir) {
  const auto run = simulate_trial(t.series, p, t.stimulus, opts);
  const auto stem = trial_file_name(t.key).stem().string();
  io::write_file(dir / (stem + "_input.csv"), series_csv(t.series, "voltage_V"));
  io::write_file(dir / (stem + "_differentiator.csv"), series_csv(run.differentiator, "differentiator_V"));
  io::write_file(dir / (stem + "_integrator.csv"), series_csv(run.integrator.signed_output, "integrator_V"));
  io::write_file(dir / (stem + "_pulses.csv"), pulses_csv(run.trace.cd, run.trace.em));
}

inline int cmd_encode(const EncodeConfig& cfg, std::ostream& log) {
  if (cfg.params_file.has_value() == cfg.calibrate)
    throw usage_error("encode: give exactly one of --params or --calibrate");
  if (cfg.out.empty()) throw usage_error("encode: --out is required");
  const auto manifest = load_manifest(cfg.dataset);
  const auto all = load_all(manifest, cfg.jobs);

  CircuitParams params;
  EncoderOptions opts;
  if (cfg.params_file) {
    const auto report = load_report(*cfg.params_file);
    params = report.params;
    opts = report.encoder;
  } else {
    const auto report = run_calibration(all, cfg.calibration, cfg.solver_step, log);
    params = report.params;
    opts = report.encoder;
  }
  if (cfg.solver_step) {
    params.solver_step = *cfg.solver_step;
    params.validate();
  }

  const auto traces = encode_all(all, params, opts, cfg.jobs);
  io::write_file(cfg.out, traces_csv(traces));
  std::size_t flagged = 0;
  for (const auto& kt : traces) flagged += kt.trace.valid() ? 0 : 1;
  log << traces.size() << " trials encoded, " << flagged << " without delta_t\n";

  for (const auto& cell : cfg.dump) {
    const auto key = parse_cell(cell, 0);
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& t) { return t.key == key; });
    if (it == all.end()) throw usage_error("dump: trial " + to_string(key) + " not in dataset");
    const auto dir = cfg.dump_dir.empty() ? cfg.out.parent_path() / "waveforms" : cfg.dump_dir;
    dump_waveforms(*it, params, opts, dir);
  }
  return kOk;
}

inline int cmd_analyze(const AnalyzeConfig& cfg, std::ostream& log) {
  if (cfg.out.empty()) throw usage_error("analyze: --out is required");
  auto traces = parse_traces_csv(io::read_file(cfg.traces));
  if (!cfg.gases.empty()) {
    std::vector<Gas> keep;
    for (const auto& g : cfg.gases) {
      const auto gas = gas_from_string(g);
      if (!gas) throw usage_error("unknown gas '" + g + "'");
      keep.push_back(*gas);
    }
    std::erase_if(traces, [&](const auto& kt) { return std::find(keep.begin(), keep.end(), kt.key.gas) == keep.end(); });
  }
  if (traces.empty()) throw ingestion_error("analyze: no traces in " + cfg.traces.string());
  const auto curves = aggregate(traces);
  export_curves(curves, cfg.out);
  for (const auto& c : curves) {
    std::size_t valid = 0, discarded = 0;
    for (const auto& s : c.levels) {
      valid += s.n_valid;
      discarded += s.n_discarded;
    }
    log << to_string(c.gas) << ": valid=" << valid << " discarded=" << discarded << " spearman=";
    try {
      log << io::format_double(monotonicity(c)) << "\n";
    } catch (const std::invalid_argument&) {
      log << "n/a\n";
    }
  }
  return kOk;
}

/// Maps exceptions onto exit codes and prints the reason.
template <class Fn>
int run_guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const usage_error& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ingestion_error& e) {
    err << "ingestion error: " << e.what() << "\n";
    return kIngestion;
  } catch (const calibration_error& e) {
    err << "calibration infeasible: " << e.what() << "\n";
    return kCalibrationInfeasible;
  } catch (const io_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace spiketime::cli
