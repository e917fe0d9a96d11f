#pragma once

// Change-detection / exposure-measurement pipeline and the two-pulse time code.

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spiketime/circuit.hpp"
#include "spiketime/signal.hpp"

namespace spiketime {

enum class Flag : std::uint8_t {
  no_cd = 1U << 0,
  no_em = 1U << 1,
  multiple_cd = 1U << 2,
  unterminated = 1U << 3,
};

namespace detail {
struct NamedFlag {
  Flag flag;
  const char* name;
};
inline constexpr NamedFlag kFlagNames[] = {{Flag::no_cd, "no_cd"},
                                           {Flag::no_em, "no_em"},
                                           {Flag::multiple_cd, "multiple_cd"},
                                           {Flag::unterminated, "unterminated"}};
}  // namespace detail

class FlagSet {
 public:
  FlagSet() = default;

  void insert(Flag f) { bits_ |= static_cast<std::uint8_t>(f); }
  [[nodiscard]] bool has(Flag f) const { return (bits_ & static_cast<std::uint8_t>(f)) != 0; }
  [[nodiscard]] bool empty() const { return bits_ == 0; }
  [[nodiscard]] std::uint8_t bits() const { return bits_; }

  /// '|'-joined names in fixed order, "" when empty.
  [[nodiscard]] std::string str() const {
    std::string s;
    for (const auto& [flag, name] : detail::kFlagNames) {
      if (has(flag)) {
        if (!s.empty()) s += '|';
        s += name;
      }
    }
    return s;
  }

  static FlagSet parse(const std::string& text) {
    FlagSet fs;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '|')) {
      if (tok.empty()) continue;
      bool known = false;
      for (const auto& [flag, name] : detail::kFlagNames) {
        if (tok == name) {
          fs.insert(flag);
          known = true;
        }
      }
      if (!known) throw std::invalid_argument("unknown flag '" + tok + "'");
    }
    return fs;
  }

  friend bool operator==(const FlagSet&, const FlagSet&) = default;

 private:
  std::uint8_t bits_ = 0;
};

struct EventTrace {
  PulseTrain cd;
  PulseTrain em;
  std::optional<double> cd_rise;
  std::optional<double> em_rise;
  std::optional<double> delta_t;  // em_rise - cd_rise, present iff both rises are
  FlagSet flags;

  [[nodiscard]] bool valid() const { return delta_t.has_value(); }
};

struct SpikeTrain {
  std::vector<double> times;  // strictly increasing
};

enum class Edge { rising, falling };

/// One spike per selected edge. Open pulses contribute no falling spike.
inline SpikeTrain edges_to_spikes(const PulseTrain& pulses, Edge edge) {
  SpikeTrain spikes;
  for (const auto& p : pulses.pulses) {
    if (edge == Edge::rising) {
      spikes.times.push_back(p.rise);
    } else if (p.fall) {
      spikes.times.push_back(*p.fall);
    }
  }
  return spikes;
}

/// Fuses pulses separated by less than `min_gap`. Idempotent.
inline PulseTrain merge_chatter(const PulseTrain& pulses, double min_gap) {
  if (!(min_gap >= 0.0)) throw std::invalid_argument("min_gap must be >= 0");
  PulseTrain merged;
  for (const auto& p : pulses.pulses) {
    if (!merged.pulses.empty()) {
      Pulse& last = merged.pulses.back();
      if (last.fall && p.rise - *last.fall < min_gap) {
        last.fall = p.fall;
        continue;
      }
    }
    merged.pulses.push_back(p);
  }
  return merged;
}

struct EncoderOptions {
  double guard = 0.05;    // CD rises this long before onset still count
  double min_gap = 0.02;  // CD fragments closer than this are fused
};

/// Every intermediate waveform of one simulated trial.
struct CircuitRun {
  TimeSeries differentiator;
  PulseTrain cd_raw;
  IntegratorOutput integrator;
  EventTrace trace;
};

/// Differentiator -> CD comparator -> gate -> integrator (reset on CD fall)
/// -> EM comparator. Degenerate outcomes are reported through flags.
inline CircuitRun simulate_trial(const TimeSeries& input, const CircuitParams& params,
                                 const StimulusWindow& stimulus, const EncoderOptions& opts = {}) {
  params.validate();
  if (!(input.t0() < stimulus.onset))
    throw std::invalid_argument("input has no pre-stimulus baseline");
  if (input.t_end() < stimulus.offset)
    throw std::invalid_argument("input ends before the stimulus window closes");
  if (!(opts.guard >= 0.0)) throw std::invalid_argument("guard must be >= 0");

  CircuitRun run;
  run.differentiator = differentiator_response(input, params.diff, params.solver_step);
  run.cd_raw = comparator(run.differentiator, params.cd_cmp);
  EventTrace& tr = run.trace;
  tr.cd = merge_chatter(run.cd_raw, opts.min_gap);

  run.integrator = gated_integrator(input, tr.cd, params.integ, params.em_cmp.threshold,
                                    params.solver_step, InputReference::gate_onset);
  tr.em = comparator(run.integrator.magnitude, params.em_cmp);

  if (tr.cd.size() > 1) tr.flags.insert(Flag::multiple_cd);
  if (tr.cd.unterminated() || tr.em.unterminated()) tr.flags.insert(Flag::unterminated);

  // First CD pulse at or after the guard-adjusted onset wins.
  for (const auto& p : tr.cd.pulses) {
    if (p.rise >= stimulus.onset - opts.guard) {
      tr.cd_rise = p.rise;
      break;
    }
  }
  if (!tr.cd_rise) {
    tr.flags.insert(Flag::no_cd);
    return run;
  }
  for (const auto& p : tr.em.pulses) {
    if (p.rise > *tr.cd_rise) {
      tr.em_rise = p.rise;
      break;
    }
  }
  if (!tr.em_rise) {
    tr.flags.insert(Flag::no_em);
    return run;
  }
  tr.delta_t = *tr.em_rise - *tr.cd_rise;
  return run;
}

inline EventTrace encode_trial(const TimeSeries& input, const CircuitParams& params,
                               const StimulusWindow& stimulus, const EncoderOptions& opts = {}) {
  return simulate_trial(input, params, stimulus, opts).trace;
}

}  // namespace spiketime
