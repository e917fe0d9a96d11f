#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "spiketime/encoder.hpp"

using namespace spiketime;

namespace {

PulseTrain train(std::initializer_list<Pulse> p) { return PulseTrain{std::vector<Pulse>(p)}; }

const StimulusWindow kStimulus{0.0, 1.0};

// Two ramps separated by a plateau, so the slope detector fires twice.
TimeSeries double_step() {
  std::vector<double> v(6001);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = -2.0 + i * 1e-3;
    double x = 0.5;
    if (t > 0.0) x += 0.4 * std::min(t, 0.5) / 0.5;
    if (t > 1.0) x += 0.4 * std::min(t - 1.0, 0.5) / 0.5;
    v[i] = x;
  }
  return TimeSeries(-2.0, 1e-3, v);
}

}  // namespace

TEST(FlagSet, StringRoundTrip) {
  FlagSet f;
  EXPECT_EQ(f.str(), "");
  f.insert(Flag::unterminated);
  f.insert(Flag::no_cd);
  EXPECT_EQ(f.str(), "no_cd|unterminated");
  EXPECT_EQ(FlagSet::parse(f.str()), f);
  EXPECT_TRUE(FlagSet::parse("").empty());
  EXPECT_THROW(FlagSet::parse("bogus"), std::invalid_argument);
}

TEST(EdgesToSpikes, RisingAndFalling) {
  const auto p = train({{1.0, 2.0}, {3.0, std::nullopt}});
  EXPECT_EQ(edges_to_spikes(p, Edge::rising).times, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(edges_to_spikes(p, Edge::falling).times, (std::vector<double>{2.0}));
  EXPECT_TRUE(edges_to_spikes(PulseTrain{}, Edge::rising).times.empty());
}

TEST(MergeChatter, FusesCloseFragments) {
  const auto merged = merge_chatter(train({{1.0, 1.1}, {1.11, 1.5}}), 0.02);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged.pulses[0].rise, 1.0);
  EXPECT_EQ(*merged.pulses[0].fall, 1.5);
}

TEST(MergeChatter, KeepsDistantPulses) {
  const auto p = train({{1.0, 1.1}, {1.5, 1.6}});
  EXPECT_EQ(merge_chatter(p, 0.02), p);
  EXPECT_EQ(merge_chatter(p, 0.0), p);
}

TEST(MergeChatter, OpenTailAbsorbs) {
  const auto merged = merge_chatter(train({{1.0, 1.1}, {1.105, std::nullopt}}), 0.02);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_TRUE(merged.unterminated());
}

TEST(MergeChatter, RejectsNegativeGap) {
  EXPECT_THROW(merge_chatter(PulseTrain{}, -1.0), std::invalid_argument);
}

TEST(MergeChatter, Idempotent) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> gap(0.0, 0.05), width(0.001, 0.1);
  for (int trial = 0; trial < 200; ++trial) {
    PulseTrain p;
    double t = 0.0;
    const int n = 1 + trial % 12;
    for (int i = 0; i < n; ++i) {
      const double rise = t + gap(rng);
      const double fall = rise + width(rng);
      p.pulses.push_back({rise, fall});
      t = fall;
    }
    if (trial % 3 == 0) p.pulses.back().fall.reset();
    const double g = gap(rng);
    const auto once = merge_chatter(p, g);
    EXPECT_EQ(merge_chatter(once, g), once);
    EXPECT_LE(once.size(), p.size());
  }
}

TEST(Encoder, ConstantInputHasNoCd) {
  const TimeSeries flat(-2.0, 1e-3, std::vector<double>(7001, 0.5));
  const auto tr = encode_trial(flat, fixtures::ideal_params(), kStimulus);
  EXPECT_TRUE(tr.flags.has(Flag::no_cd));
  EXPECT_FALSE(tr.valid());
  EXPECT_FALSE(tr.delta_t);
}

TEST(Encoder, NoBaselineRejected) {
  const TimeSeries late(0.0, 1e-3, std::vector<double>(3001, 0.5));
  EXPECT_THROW(encode_trial(late, fixtures::ideal_params(), kStimulus), std::invalid_argument);
  const TimeSeries short_trace(-1.0, 1e-3, std::vector<double>(1500, 0.5));
  EXPECT_THROW(encode_trial(short_trace, fixtures::ideal_params(), kStimulus), std::invalid_argument);
}

TEST(Encoder, FamilyMatchesRampOracle) {
  const auto params = fixtures::ideal_params();
  const double h = params.solver_step;
  double previous = 1e9;
  for (double a : fixtures::family_amplitudes()) {
    const auto in = synth_trapezoid(fixtures::gas_pulse(a), 1e-3, 0.0, 0);
    const auto tr = encode_trial(in, params, kStimulus);
    ASSERT_TRUE(tr.valid()) << "a=" << a << " flags=" << tr.flags.str();
    EXPECT_TRUE(tr.flags.empty()) << tr.flags.str();
    EXPECT_GT(*tr.cd_rise, -h);
    EXPECT_LT(*tr.cd_rise, 0.0);
    const double t_em = oracle::ramp_charge_crossing(a, 0.1, 10.0, 0.5, 1.0);
    EXPECT_NEAR(*tr.em_rise, t_em, 2 * h) << "a=" << a;
    EXPECT_GT(*tr.delta_t, 0.0);
    EXPECT_LT(*tr.delta_t, previous);
    previous = *tr.delta_t;
  }
}

TEST(Encoder, FrozenRampCrossings) {
  const double expected[] = {0.7155392537372507, 0.5042016210843575, 0.41104507176585225, 0.3556490580830765,
                             0.31790325389775276};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(oracle::ramp_charge_crossing(fixtures::family_amplitudes()[i], 0.1, 10.0, 0.5, 1.0), expected[i],
                1e-12);
  }
}

TEST(Encoder, TimeShiftEquivariant) {
  auto params = fixtures::ideal_params();
  params.diff.tau_parasitic = 0.02;
  params.cd_cmp.hysteresis = 0.002;
  const auto base = synth_trapezoid(fixtures::gas_pulse(0.6), 1e-3, 1e-4, 9);
  for (double shift : {0.25, 10.0, -3.7}) {
    const TimeSeries moved(base.t0() + shift, base.dt(), std::vector<double>(base.values().begin(), base.values().end()));
    const auto a = encode_trial(base, params, kStimulus);
    const auto b = encode_trial(moved, params, StimulusWindow{shift, 1.0 + shift});
    ASSERT_TRUE(a.valid());
    ASSERT_TRUE(b.valid());
    EXPECT_NEAR(*a.delta_t, *b.delta_t, 1e-9) << "shift=" << shift;
    EXPECT_NEAR(*b.cd_rise - shift, *a.cd_rise, 1e-9);
  }
}

TEST(Encoder, DoubleStepFlagsMultipleCd) {
  const auto tr = encode_trial(double_step(), fixtures::ideal_params(), kStimulus);
  EXPECT_TRUE(tr.flags.has(Flag::multiple_cd));
  ASSERT_TRUE(tr.cd_rise);
  EXPECT_LT(*tr.cd_rise, 0.01);
}

TEST(Encoder, PreGuardCdIgnored) {
  // A disturbance well before onset must not be taken as the CD event.
  auto in = synth_trapezoid(fixtures::gas_pulse(0.6), 1e-3, 0.0, 0);
  std::vector<double> v(in.values().begin(), in.values().end());
  for (std::size_t i = 500; i < 600; ++i) v[i] += 0.3 * (i - 500) / 100.0;
  for (std::size_t i = 600; i < 700; ++i) v[i] += 0.3 * (700 - i) / 100.0;
  const TimeSeries disturbed(in.t0(), in.dt(), v);
  const auto tr = encode_trial(disturbed, fixtures::ideal_params(), kStimulus);
  EXPECT_TRUE(tr.flags.has(Flag::multiple_cd));
  ASSERT_TRUE(tr.cd_rise);
  EXPECT_GT(*tr.cd_rise, -0.05);
}

TEST(Encoder, WeakStimulusHasNoEm) {
  auto params = fixtures::ideal_params();
  params.em_cmp.threshold = 50.0;
  const auto in = synth_trapezoid(fixtures::gas_pulse(0.2), 1e-3, 0.0, 0);
  const auto tr = encode_trial(in, params, kStimulus);
  EXPECT_TRUE(tr.cd_rise);
  EXPECT_TRUE(tr.flags.has(Flag::no_em));
  EXPECT_FALSE(tr.valid());
}

TEST(Encoder, DeltaTPositiveOnNoisyTrials) {
  auto params = fixtures::ideal_params();
  params.diff.tau_parasitic = 0.05;
  params.cd_cmp.hysteresis = 0.0025;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto in = synth_trapezoid(fixtures::gas_pulse(0.2 + 0.08 * seed), 1e-3, 3e-4, seed);
    const auto tr = encode_trial(in, params, kStimulus);
    if (tr.valid()) {
      EXPECT_GT(*tr.delta_t, 0.0);
      EXPECT_GT(*tr.em_rise, *tr.cd_rise);
    }
  }
}

TEST(Encoder, SimulateExposesIntermediates) {
  const auto in = synth_trapezoid(fixtures::gas_pulse(0.6), 1e-3, 0.0, 0);
  const auto run = simulate_trial(in, fixtures::ideal_params(), kStimulus);
  EXPECT_EQ(run.differentiator.dt(), 1e-4);
  EXPECT_EQ(run.integrator.magnitude.size(), run.differentiator.size());
  EXPECT_FALSE(run.cd_raw.empty());
  EXPECT_EQ(run.trace.cd, merge_chatter(run.cd_raw, 0.02));
}
