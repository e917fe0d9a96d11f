#pragma once

// Parameter tuning on a handful of calibration trials, and held-out validation.
//
// Procedure:
//   1. CD threshold = max(k * sigma_d, floor), sigma_d being the pooled
//      baseline std of the differentiator output. If a calibration baseline
//      still trips the comparator, the threshold is raised above the largest
//      baseline excursion.
//   2. Integrator gain (tau_in) is lowered until the strongest calibration
//      trial peaks at or under rail_margin * v_rail.
//   3. EM threshold = em_fraction * the weakest calibration peak.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spiketime/analysis.hpp"
#include "spiketime/circuit.hpp"
#include "spiketime/dataset.hpp"
#include "spiketime/encoder.hpp"
#include "spiketime/errors.hpp"
#include "spiketime/io.hpp"

namespace spiketime {

/// Starting point of the parameter search. Thresholds are placeholders that
/// calibrate() overwrites.
inline CircuitParams default_circuit_params() {
  CircuitParams p;
  p.diff = {2.0, 0.2, 5.0};
  p.cd_cmp = {0.01, 0.0005, Polarity::below};
  p.integ = {0.05, 20.0, 1e-3, 5.0};
  p.em_cmp = {0.1, 0.005, Polarity::above};
  p.solver_step = 1e-4;
  return p;
}

struct CalibrationConfig {
  CircuitParams base = default_circuit_params();
  double k_sigma = 6.0;
  double cd_floor = 0.01;    // volts
  double rail_margin = 0.9;  // peak integrator magnitude <= rail_margin * v_rail
  double em_fraction = 0.5;
  double hysteresis_fraction = 0.05;
  int max_iterations = 16;
  EncoderOptions encoder;
};

struct TrialDiagnostics {
  TrialKey key;
  double peak_differentiator = 0.0;  // on the asserting side of the CD comparator
  double peak_integrator = 0.0;      // |v|
  double margin_to_rail = 0.0;       // v_rail - peak_integrator
  int baseline_false_triggers = 0;
  std::optional<double> delta_t;
  FlagSet flags;
};

struct CalibrationReport {
  CircuitParams params;
  EncoderOptions encoder;
  double sigma_d = 0.0;
  bool cd_threshold_raised = false;
  double rail_margin = 0.9;
  std::vector<TrialDiagnostics> diagnostics;
};

/// Interval before onset in which any CD event is a false trigger.
inline TimeWindow baseline_window(const TrialRecord& t, const EncoderOptions& opts) {
  return {t.series.t0(), t.stimulus.onset - opts.guard};
}

inline int count_baseline_cd_events(const PulseTrain& cd, const TimeWindow& window) {
  return static_cast<int>(std::count_if(cd.pulses.begin(), cd.pulses.end(),
                                        [&](const Pulse& p) { return window.contains(p.rise); }));
}

/// CD events in the baseline window for one trial under `p`.
inline int baseline_false_triggers(const TrialRecord& t, const CircuitParams& p, const EncoderOptions& opts) {
  const auto y = differentiator_response(t.series, p.diff, p.solver_step);
  return count_baseline_cd_events(comparator(y, p.cd_cmp), baseline_window(t, opts));
}

namespace detail {

inline double asserting_sign(const ComparatorParams& c) { return c.polarity == Polarity::below ? -1.0 : 1.0; }

inline double peak_of(const TimeSeries& s, double sign) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : s.values()) peak = std::max(peak, sign * v);
  return peak;
}

}  // namespace detail

inline CalibrationReport calibrate(std::span<const TrialRecord> calib_trials, const CalibrationConfig& cfg = {}) {
  if (calib_trials.empty()) throw std::invalid_argument("calibrate: no calibration trials");
  if (!(cfg.k_sigma > 0.0) || !(cfg.cd_floor > 0.0) || !(cfg.rail_margin > 0.0 && cfg.rail_margin <= 1.0) ||
      !(cfg.em_fraction > 0.0 && cfg.em_fraction < 1.0) ||
      !(cfg.hysteresis_fraction >= 0.0 && cfg.hysteresis_fraction < 1.0))
    throw std::invalid_argument("calibrate: configuration out of range");
  CircuitParams p = cfg.base;
  p.validate();
  const EncoderOptions& opts = cfg.encoder;

  // Differentiator parameters are fixed by the search space; only thresholds move.
  std::vector<TimeSeries> diff_out;
  diff_out.reserve(calib_trials.size());
  for (const auto& t : calib_trials) diff_out.push_back(differentiator_response(t.series, p.diff, p.solver_step));

  CalibrationReport report;
  report.encoder = opts;
  report.rail_margin = cfg.rail_margin;

  // 1. CD threshold from pooled baseline noise.
  double sum = 0.0, sum_sq = 0.0, excursion = 0.0;
  std::size_t n = 0;
  const double sign = detail::asserting_sign(p.cd_cmp);
  for (std::size_t i = 0; i < calib_trials.size(); ++i) {
    const auto win = baseline_window(calib_trials[i], opts);
    const auto& y = diff_out[i];
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double t = y.time_at(k);
      if (win.contains(t)) {
        sum += y[k];
        sum_sq += y[k] * y[k];
        ++n;
      }
      // One sample past the window end bounds any crossing interpolated into it.
      if (t < win.end + y.dt()) excursion = std::max(excursion, sign * y[k]);
    }
  }
  if (n == 0) throw calibration_error("calibration trials have no baseline samples before onset - guard");
  const double mean = sum / static_cast<double>(n);
  report.sigma_d = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean));
  double theta_cd = std::max(cfg.k_sigma * report.sigma_d, cfg.cd_floor);
  p.cd_cmp.threshold = theta_cd;
  p.cd_cmp.hysteresis = cfg.hysteresis_fraction * theta_cd;
  int false_triggers = 0;
  for (std::size_t i = 0; i < calib_trials.size(); ++i)
    false_triggers += count_baseline_cd_events(comparator(diff_out[i], p.cd_cmp), baseline_window(calib_trials[i], opts));
  if (false_triggers > 0) {
    theta_cd = std::max(theta_cd, 1.05 * excursion);
    p.cd_cmp.threshold = theta_cd;
    p.cd_cmp.hysteresis = cfg.hysteresis_fraction * theta_cd;
    report.cd_threshold_raised = true;
  }
  for (std::size_t i = 0; i < calib_trials.size(); ++i) {
    if (detail::peak_of(diff_out[i], sign) < theta_cd)
      throw calibration_error("CD threshold " + io::format_double(theta_cd) + " V exceeds the peak differentiator " +
                              "output of calibration trial " + to_string(calib_trials[i].key) + " (" +
                              io::format_double(detail::peak_of(diff_out[i], sign)) + " V)");
  }

  // 2. Integrator gain against the rail. With clamping disabled the peak is
  //    exactly proportional to 1/tau_in, so this converges in one or two passes.
  const double ceiling = cfg.rail_margin * p.integ.v_rail;
  const double leak_ratio = p.integ.tau_leak / p.integ.tau_in;
  std::vector<double> peaks(calib_trials.size());
  bool fits = false;
  for (int iter = 0; iter < cfg.max_iterations && !fits; ++iter) {
    CircuitParams probe = p;
    probe.integ.v_rail = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < calib_trials.size(); ++i) {
      const auto& t = calib_trials[i];
      const auto run = simulate_trial(t.series, probe, t.stimulus, opts);
      peaks[i] = detail::peak_of(run.integrator.magnitude, 1.0);
    }
    const double pmax = *std::max_element(peaks.begin(), peaks.end());
    if (pmax <= ceiling) {
      fits = true;
      break;
    }
    const double scale = pmax / ceiling * (1.0 + 1e-3);
    p.integ.tau_in *= scale;
    if (p.integ.tau_leak <= p.integ.tau_in) p.integ.tau_leak = p.integ.tau_in * leak_ratio;
  }
  if (!fits)
    throw calibration_error("integrator peak could not be brought under " + io::format_double(ceiling) +
                            " V within " + std::to_string(cfg.max_iterations) + " iterations");

  // 3. EM threshold from the weakest calibration response.
  const double pmin = *std::min_element(peaks.begin(), peaks.end());
  if (!(pmin > 0.0))
    throw calibration_error("a calibration trial never charges the integrator; no EM threshold > 0 fits all trials");
  p.em_cmp.threshold = cfg.em_fraction * pmin;
  p.em_cmp.hysteresis = cfg.hysteresis_fraction * p.em_cmp.threshold;
  p.validate();
  report.params = p;

  // Diagnostics under the final, clamped parameters.
  for (std::size_t i = 0; i < calib_trials.size(); ++i) {
    const auto& t = calib_trials[i];
    const auto run = simulate_trial(t.series, p, t.stimulus, opts);
    TrialDiagnostics d;
    d.key = t.key;
    d.peak_differentiator = detail::peak_of(run.differentiator, sign);
    d.peak_integrator = detail::peak_of(run.integrator.magnitude, 1.0);
    d.margin_to_rail = p.integ.v_rail - d.peak_integrator;
    d.baseline_false_triggers = count_baseline_cd_events(run.cd_raw, baseline_window(t, opts));
    d.delta_t = run.trace.delta_t;
    d.flags = run.trace.flags;
    report.diagnostics.push_back(d);
  }
  for (const auto& d : report.diagnostics) {
    if (d.baseline_false_triggers != 0)
      throw calibration_error("calibration trial " + to_string(d.key) + " still has baseline CD events");
    if (d.peak_integrator > ceiling)
      throw calibration_error("calibration trial " + to_string(d.key) + " exceeds the rail margin");
  }
  return report;
}

struct ValidationSummary {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t no_cd = 0;
  std::size_t no_em = 0;
  std::size_t multiple_cd = 0;
  std::size_t unterminated = 0;
  std::vector<KeyedTrace> traces;

  [[nodiscard]] double fraction_valid() const {
    return total == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(total);
  }
};

/// Encodes held-out trials and tallies the outcome flags.
inline ValidationSummary validate(const CircuitParams& params, std::span<const TrialRecord> held_out,
                                  const EncoderOptions& opts = {}, unsigned jobs = 1) {
  ValidationSummary s;
  s.traces = encode_all(held_out, params, opts, jobs);
  s.total = s.traces.size();
  for (const auto& kt : s.traces) {
    const auto& f = kt.trace.flags;
    if (kt.trace.valid()) ++s.valid;
    if (f.has(Flag::no_cd)) ++s.no_cd;
    if (f.has(Flag::no_em)) ++s.no_em;
    if (f.has(Flag::multiple_cd)) ++s.multiple_cd;
    if (f.has(Flag::unterminated)) ++s.unterminated;
  }
  return s;
}

// ---- report file ----------------------------------------------------------

inline nlohmann::json params_to_json(const CircuitParams& p) {
  auto cmp = [](const ComparatorParams& c) {
    return nlohmann::json{{"threshold_V", c.threshold}, {"hysteresis_V", c.hysteresis}, {"polarity", to_string(c.polarity)}};
  };
  return {{"differentiator",
           {{"tau_d_s", p.diff.tau_d}, {"tau_parasitic_s", p.diff.tau_parasitic}, {"v_rail_V", p.diff.v_rail}}},
          {"cd_comparator", cmp(p.cd_cmp)},
          {"integrator",
           {{"tau_in_s", p.integ.tau_in},
            {"tau_leak_s", p.integ.tau_leak},
            {"tau_reset_s", p.integ.tau_reset},
            {"v_rail_V", p.integ.v_rail}}},
          {"em_comparator", cmp(p.em_cmp)},
          {"solver_step_s", p.solver_step}};
}

inline CircuitParams params_from_json(const nlohmann::json& j) {
  auto cmp = [](const nlohmann::json& c) {
    return ComparatorParams{c.at("threshold_V").get<double>(), c.at("hysteresis_V").get<double>(),
                            polarity_from_string(c.at("polarity").get<std::string>())};
  };
  CircuitParams p;
  const auto& d = j.at("differentiator");
  p.diff = {d.at("tau_d_s").get<double>(), d.at("tau_parasitic_s").get<double>(), d.at("v_rail_V").get<double>()};
  p.cd_cmp = cmp(j.at("cd_comparator"));
  const auto& in = j.at("integrator");
  p.integ = {in.at("tau_in_s").get<double>(), in.at("tau_leak_s").get<double>(), in.at("tau_reset_s").get<double>(),
             in.at("v_rail_V").get<double>()};
  p.em_cmp = cmp(j.at("em_comparator"));
  p.solver_step = j.at("solver_step_s").get<double>();
  p.validate();
  return p;
}

inline nlohmann::json report_to_json(const CalibrationReport& r) {
  nlohmann::json diag = nlohmann::json::array();
  for (const auto& d : r.diagnostics) {
    diag.push_back({{"gas", to_string(d.key.gas)},
                    {"level", d.key.level},
                    {"trial", d.key.trial},
                    {"peak_differentiator_V", d.peak_differentiator},
                    {"peak_integrator_V", d.peak_integrator},
                    {"margin_to_rail_V", d.margin_to_rail},
                    {"baseline_false_triggers", d.baseline_false_triggers},
                    {"delta_t_s", d.delta_t ? nlohmann::json(*d.delta_t) : nlohmann::json(nullptr)},
                    {"flags", d.flags.str()}});
  }
  return {{"format", "spiketime-calibration/1"},
          {"params", params_to_json(r.params)},
          {"encoder", {{"guard_s", r.encoder.guard}, {"min_gap_s", r.encoder.min_gap}}},
          {"sigma_d_V", r.sigma_d},
          {"cd_threshold_raised", r.cd_threshold_raised},
          {"rail_margin", r.rail_margin},
          {"diagnostics", diag}};
}

inline CalibrationReport report_from_json(const nlohmann::json& j) {
  CalibrationReport r;
  r.params = params_from_json(j.at("params"));
  if (j.contains("encoder")) {
    r.encoder.guard = j.at("encoder").value("guard_s", r.encoder.guard);
    r.encoder.min_gap = j.at("encoder").value("min_gap_s", r.encoder.min_gap);
  }
  r.sigma_d = j.value("sigma_d_V", 0.0);
  r.cd_threshold_raised = j.value("cd_threshold_raised", false);
  r.rail_margin = j.value("rail_margin", 0.9);
  for (const auto& d : j.value("diagnostics", nlohmann::json::array())) {
    TrialDiagnostics td;
    const auto gas = gas_from_string(d.at("gas").get<std::string>());
    if (!gas) throw ingestion_error("calibration report: unknown gas");
    td.key = {*gas, d.at("level").get<int>(), d.at("trial").get<int>()};
    td.peak_differentiator = d.at("peak_differentiator_V").get<double>();
    td.peak_integrator = d.at("peak_integrator_V").get<double>();
    td.margin_to_rail = d.at("margin_to_rail_V").get<double>();
    td.baseline_false_triggers = d.at("baseline_false_triggers").get<int>();
    if (!d.at("delta_t_s").is_null()) td.delta_t = d.at("delta_t_s").get<double>();
    td.flags = FlagSet::parse(d.value("flags", std::string{}));
    r.diagnostics.push_back(td);
  }
  return r;
}

inline void save_report(const CalibrationReport& r, const std::filesystem::path& file) {
  io::write_file(file, report_to_json(r).dump(2) + "\n");
}

inline CalibrationReport load_report(const std::filesystem::path& file) {
  try {
    return report_from_json(nlohmann::json::parse(io::read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw ingestion_error("calibration report " + file.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ingestion_error("calibration report " + file.string() + ": " + e.what());
  }
}

}  // namespace spiketime
