#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spiketime/calibration.hpp"

using namespace spiketime;

namespace {

std::vector<TrialRecord> make_trials(const SyntheticSpec& spec, std::initializer_list<int> levels, int trials,
                                     std::uint64_t seed) {
  std::vector<TrialRecord> out;
  for (Gas g : spec.gases) {
    for (int level : levels) {
      for (int t = 0; t < trials; ++t) {
        const TrialKey k{g, level, t};
        out.push_back({k, synth_trial(spec, k, seed), StimulusWindow{0.0, 1.0}});
      }
    }
  }
  return out;
}

SyntheticSpec noiseless() {
  SyntheticSpec s;
  s.noise_sigma = 0.0;
  s.amplitude_jitter = 0.0;
  return s;
}

}  // namespace

TEST(Calibration, EmptyInputRejected) {
  EXPECT_THROW(calibrate({}), std::invalid_argument);
}

TEST(Calibration, BadConfigRejected) {
  const auto trials = make_trials(noiseless(), {5}, 1, 1);
  CalibrationConfig cfg;
  cfg.em_fraction = 1.5;
  EXPECT_THROW(calibrate(trials, cfg), std::invalid_argument);
}

TEST(Calibration, NoiselessFamilyUsesFloor) {
  const auto trials = make_trials(noiseless(), {1, 2, 3, 4, 5}, 1, 1);
  const auto r = calibrate(trials);
  EXPECT_EQ(r.sigma_d, 0.0);
  EXPECT_DOUBLE_EQ(r.params.cd_cmp.threshold, 0.01);
  EXPECT_DOUBLE_EQ(r.params.cd_cmp.hysteresis, 0.05 * 0.01);
  EXPECT_DOUBLE_EQ(r.params.em_cmp.hysteresis, 0.05 * r.params.em_cmp.threshold);
  EXPECT_FALSE(r.cd_threshold_raised);
  ASSERT_EQ(r.diagnostics.size(), 20u);
  double min_peak = 1e9;
  for (const auto& d : r.diagnostics) {
    EXPECT_TRUE(d.delta_t) << to_string(d.key) << " " << d.flags.str();
    min_peak = std::min(min_peak, d.peak_integrator);
  }
  EXPECT_NEAR(r.params.em_cmp.threshold, 0.5 * min_peak, 1e-9);
}

TEST(Calibration, ContractHoldsOnNoisyData) {
  const auto trials = make_trials(SyntheticSpec{}, {1, 2, 3, 4, 5}, 1, 7);
  const auto r = calibrate(trials);
  EXPECT_GT(r.sigma_d, 0.0);
  EXPECT_GE(r.params.cd_cmp.threshold, 6.0 * r.sigma_d - 1e-15);
  EXPECT_NO_THROW(r.params.validate());
  for (const auto& d : r.diagnostics) {
    EXPECT_EQ(d.baseline_false_triggers, 0) << to_string(d.key);
    EXPECT_LE(d.peak_integrator, 0.9 * r.params.integ.v_rail + 1e-12) << to_string(d.key);
    EXPECT_GT(d.margin_to_rail, 0.0);
    EXPECT_TRUE(d.delta_t) << to_string(d.key);
  }
}

TEST(Calibration, StrongestLevelOnlyLeavesWeakGasSilent) {
  const auto cal = make_trials(noiseless(), {5}, 1, 1);
  const auto r = calibrate(cal);
  const auto weak = make_trials(noiseless(), {1}, 1, 1);
  for (const auto& t : weak) {
    if (t.key.gas != Gas::H2) continue;
    const auto tr = encode_trial(t.series, r.params, t.stimulus, r.encoder);
    EXPECT_TRUE(tr.flags.has(Flag::no_em)) << tr.flags.str();
    EXPECT_FALSE(tr.valid());
  }
}

TEST(Calibration, Deterministic) {
  const auto trials = make_trials(SyntheticSpec{}, {1, 5}, 1, 3);
  EXPECT_EQ(report_to_json(calibrate(trials)), report_to_json(calibrate(trials)));
}

TEST(Calibration, FalseTriggersNonIncreasingInK) {
  // Higher noise than the default so low k values actually misfire.
  SyntheticSpec spec;
  spec.noise_sigma = 3e-3;
  const auto trials = make_trials(spec, {3}, 2, 11);
  int previous = std::numeric_limits<int>::max();
  for (double k : {1.0, 2.0, 3.0, 4.0, 6.0, 8.0}) {
    auto p = default_circuit_params();
    CalibrationConfig cfg;
    double pooled = 0.0;
    std::size_t n = 0;
    for (const auto& t : trials) {
      const auto y = differentiator_response(t.series, p.diff, p.solver_step);
      const auto b = baseline_stats(y, baseline_window(t, cfg.encoder));
      pooled += b.sigma * b.sigma * b.samples;
      n += b.samples;
    }
    p.cd_cmp.threshold = k * std::sqrt(pooled / n);
    p.cd_cmp.hysteresis = 0.05 * p.cd_cmp.threshold;
    int total = 0;
    for (const auto& t : trials) total += baseline_false_triggers(t, p, cfg.encoder);
    EXPECT_LE(total, previous) << "k=" << k;
    previous = total;
  }
  EXPECT_EQ(previous, 0);
}

TEST(Calibration, RaisesThresholdWhenNoiseIsHeavyTailed) {
  // A single baseline glitch far above k*sigma forces the threshold up.
  auto trials = make_trials(noiseless(), {5}, 1, 1);
  std::vector<double> v(trials[0].series.values().begin(), trials[0].series.values().end());
  for (std::size_t i = 500; i < v.size(); ++i) v[i] += 1e-4 * std::min<double>(i - 500, 20);
  trials[0].series = TimeSeries(trials[0].series.t0(), trials[0].series.dt(), v);
  const auto r = calibrate(trials);
  EXPECT_TRUE(r.cd_threshold_raised);
  EXPECT_GT(r.params.cd_cmp.threshold, 0.01);
  for (const auto& d : r.diagnostics) EXPECT_EQ(d.baseline_false_triggers, 0);
}

TEST(Calibration, InfeasibleSeparation) {
  // Calibration trials with no stimulus give nothing to scale against.
  SyntheticSpec spec = noiseless();
  spec.level_amplitudes = {0.0, 0.0, 0.0, 0.0, 0.0};
  const auto trials = make_trials(spec, {1}, 1, 1);
  EXPECT_THROW(calibrate(trials), calibration_error);
}

TEST(Validation, HeldOutSyntheticAllValid) {
  const auto cal = make_trials(SyntheticSpec{}, {1, 2, 3, 4, 5}, 1, 5);
  const auto r = calibrate(cal);
  std::vector<TrialRecord> held;
  for (auto& t : make_trials(SyntheticSpec{}, {1, 3, 5}, 3, 5)) {
    if (t.key.trial > 0) held.push_back(std::move(t));
  }
  const auto s = validate(r.params, held, r.encoder, 4);
  EXPECT_EQ(s.total, held.size());
  EXPECT_EQ(s.valid, s.total);
  EXPECT_DOUBLE_EQ(s.fraction_valid(), 1.0);
  for (const auto& kt : s.traces) EXPECT_TRUE(kt.trace.flags.empty()) << to_string(kt.key) << " " << kt.trace.flags.str();
}

TEST(Validation, EmptyHeldOut) {
  const auto s = validate(default_circuit_params(), {});
  EXPECT_EQ(s.total, 0u);
  EXPECT_TRUE(s.traces.empty());
  EXPECT_EQ(s.fraction_valid(), 0.0);
}

TEST(Report, JsonRoundTrip) {
  fixtures::TempDir dir;
  const auto trials = make_trials(SyntheticSpec{}, {2, 4}, 1, 8);
  const auto r = calibrate(trials);
  save_report(r, dir / "cal.json");
  const auto back = load_report(dir / "cal.json");
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_EQ(back.params.cd_cmp.threshold, r.params.cd_cmp.threshold);
  EXPECT_EQ(back.params.integ.tau_in, r.params.integ.tau_in);
  EXPECT_EQ(back.params.em_cmp.polarity, Polarity::above);
  EXPECT_EQ(params_from_json(params_to_json(r.params)).cd_cmp.polarity, Polarity::below);
}
