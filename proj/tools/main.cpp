#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "commands.hpp"

namespace cli = spiketime::cli;

namespace {

void add_calibration_options(CLI::App* cmd, cli::CalibrationSelection& sel) {
  cmd->add_option("--cells", sel.cells, "Calibration cells GAS:LEVEL[:TRIAL] (default: every level of --cal-trial)")
      ->delimiter(',');
  cmd->add_option("--cal-trial", sel.cal_trial, "Trial index used when --cells is omitted")->capture_default_str();
  cmd->add_option("--k-sigma", sel.config.k_sigma, "CD threshold noise multiplier")->capture_default_str();
  cmd->add_option("--cd-floor", sel.config.cd_floor, "CD threshold floor [V]")->capture_default_str();
  cmd->add_option("--rail-margin", sel.config.rail_margin, "Allowed integrator peak as a fraction of the rail")
      ->capture_default_str();
  cmd->add_option("--em-fraction", sel.config.em_fraction, "EM threshold as a fraction of the weakest peak")
      ->capture_default_str();
  cmd->add_option("--guard", sel.config.encoder.guard, "Pre-onset guard window for CD rises [s]")->capture_default_str();
  cmd->add_option("--min-gap", sel.config.encoder.min_gap, "CD fragments closer than this are merged [s]")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spiketime: two-pulse spike-time encoder for MOx load-voltage recordings"};
  app.set_config("--config", "", "INI/TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  const unsigned hw_jobs = std::max(1U, std::thread::hardware_concurrency());

  cli::SynthConfig synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic 4-gas x 5-level dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--trials", synth.trials, "Trials per (gas, level) cell")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Additive Gaussian noise sigma [V]")->capture_default_str();
  synth_cmd->add_option("--sample-rate", synth.spec.sample_rate_hz, "Sample rate [Hz]")->capture_default_str();
  synth_cmd->add_option("--jitter", synth.spec.amplitude_jitter, "Relative per-trial amplitude jitter")
      ->capture_default_str();

  cli::CalibrateConfig calib;
  std::optional<double> calib_step;
  auto* calib_cmd = app.add_subcommand("calibrate", "Tune thresholds and integrator gain on calibration trials");
  calib_cmd->add_option("--dataset", calib.dataset, "Dataset directory or manifest")->required();
  calib_cmd->add_option("--out", calib.out, "Calibration report (JSON)")->required();
  calib_cmd->add_option("--solver-step", calib_step, "Override solver step [s]");
  calib_cmd->add_option("--jobs", calib.jobs, "Worker threads")->default_val(hw_jobs);
  add_calibration_options(calib_cmd, calib.calibration);

  cli::EncodeConfig enc;
  std::string params_file;
  std::optional<double> enc_step;
  auto* enc_cmd = app.add_subcommand("encode", "Encode every trial into CD/EM event times");
  enc_cmd->add_option("--dataset", enc.dataset, "Dataset directory or manifest")->required();
  auto* params_opt = enc_cmd->add_option("--params", params_file, "Calibration report to take parameters from");
  auto* calib_flag = enc_cmd->add_flag("--calibrate", enc.calibrate, "Calibrate on the dataset first");
  params_opt->excludes(calib_flag);
  enc_cmd->add_option("--out", enc.out, "Per-trial event table (CSV)")->required();
  enc_cmd->add_option("--solver-step", enc_step, "Override solver step [s]");
  enc_cmd->add_option("--dump", enc.dump, "Dump waveforms for GAS:LEVEL:TRIAL")->delimiter(',');
  enc_cmd->add_option("--dump-dir", enc.dump_dir, "Waveform output directory (default: <out dir>/waveforms)");
  enc_cmd->add_option("--jobs", enc.jobs, "Worker threads")->default_val(hw_jobs);
  add_calibration_options(enc_cmd, enc.calibration);

  cli::AnalyzeConfig ana;
  auto* ana_cmd = app.add_subcommand("analyze", "Aggregate an event table into per-gas concentration curves");
  ana_cmd->add_option("--traces", ana.traces, "Event table written by encode")->required();
  ana_cmd->add_option("--out", ana.out, "Output directory for curves.csv / curves.svg")->required();
  ana_cmd->add_option("--gas", ana.gases, "Restrict to these gases")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  return cli::run_guarded(
      [&] {
        if (*synth_cmd) return cli::cmd_synth(synth, std::cout);
        if (*calib_cmd) {
          calib.solver_step = calib_step;
          return cli::cmd_calibrate(calib, std::cout);
        }
        if (*enc_cmd) {
          if (!params_file.empty()) enc.params_file = params_file;
          enc.solver_step = enc_step;
          return cli::cmd_encode(enc, std::cout);
        }
        return cli::cmd_analyze(ana, std::cout);
      },
      std::cerr);
}
