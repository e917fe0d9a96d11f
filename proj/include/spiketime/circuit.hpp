#pragma once

// Behavioral models of the analog front-end blocks: an inverting differentiator,
// threshold comparators, and a gated lossy integrator with a fast reset path.
// Op-amps are ideal apart from rail clamping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spiketime/errors.hpp"
#include "spiketime/signal.hpp"

namespace spiketime {

struct DifferentiatorParams {
  double tau_d = 0.0;          // R*C gain constant
  double tau_parasitic = 0.0;  // input series-R roll-off; 0 = ideal
  double v_rail = 0.0;

  void validate() const {
    if (!(tau_d > 0.0)) throw std::invalid_argument("differentiator: tau_d must be > 0");
    if (!(tau_parasitic >= 0.0))
      throw std::invalid_argument("differentiator: tau_parasitic must be >= 0");
    if (tau_parasitic > tau_d / 10.0)
      throw std::invalid_argument("differentiator: tau_parasitic must be <= tau_d/10");
    if (!(v_rail > 0.0)) throw std::invalid_argument("differentiator: v_rail must be > 0");
  }
};

struct IntegratorParams {
  double tau_in = 0.0;     // R_in*C
  double tau_leak = 0.0;   // R_f*C
  double tau_reset = 0.0;  // discharge through the reset switch
  double v_rail = 0.0;

  void validate() const {
    if (!(tau_in > 0.0)) throw std::invalid_argument("integrator: tau_in must be > 0");
    if (!(tau_leak > tau_in)) throw std::invalid_argument("integrator: tau_leak must exceed tau_in");
    if (!(tau_reset > 0.0) || !(tau_reset < tau_in / 10.0))
      throw std::invalid_argument("integrator: tau_reset must be in (0, tau_in/10)");
    if (!(v_rail > 0.0)) throw std::invalid_argument("integrator: v_rail must be > 0");
  }
};

enum class Polarity { above, below };

inline const char* to_string(Polarity p) { return p == Polarity::above ? "above" : "below"; }

inline Polarity polarity_from_string(const std::string& s) {
  if (s == "above") return Polarity::above;
  if (s == "below") return Polarity::below;
  throw std::invalid_argument("unknown polarity '" + s + "'");
}

/// Threshold comparator. With Polarity::below the pulse asserts while the input
/// sits at or under -threshold and releases once it climbs back to
/// -(threshold - hysteresis); Polarity::above mirrors this.
struct ComparatorParams {
  double threshold = 0.0;
  double hysteresis = 0.0;
  Polarity polarity = Polarity::above;

  void validate() const {
    if (!(threshold > 0.0)) throw std::invalid_argument("comparator: threshold must be > 0");
    if (!(hysteresis >= 0.0) || !(hysteresis < threshold))
      throw std::invalid_argument("comparator: hysteresis must be in [0, threshold)");
  }
};

struct CircuitParams {
  DifferentiatorParams diff;
  ComparatorParams cd_cmp;
  IntegratorParams integ;
  ComparatorParams em_cmp;
  double solver_step = 0.0;

  /// Largest step that still resolves the fastest active time constant.
  [[nodiscard]] double max_solver_step() const {
    const double diff_tau = diff.tau_parasitic > 0.0 ? diff.tau_parasitic : diff.tau_d;
    return std::min({diff_tau, integ.tau_in, integ.tau_reset * 10.0}) / 20.0;
  }

  void validate() const {
    diff.validate();
    cd_cmp.validate();
    integ.validate();
    em_cmp.validate();
    if (!(solver_step > 0.0)) throw std::invalid_argument("solver_step must be > 0");
    // Small slack so that a step equal to the bound is not rejected on rounding.
    if (solver_step > max_solver_step() * (1.0 + 1e-12))
      throw std::invalid_argument("solver_step " + std::to_string(solver_step) +
                                  " exceeds resolvable bound " + std::to_string(max_solver_step()));
  }
};

/// One comparator on-interval. `fall` is empty when the pulse is still high at
/// the end of the trace.
struct Pulse {
  double rise = 0.0;
  std::optional<double> fall;

  [[nodiscard]] bool open() const { return !fall.has_value(); }
  friend bool operator==(const Pulse&, const Pulse&) = default;
};

struct PulseTrain {
  std::vector<Pulse> pulses;  // disjoint, sorted; only the last may be open

  [[nodiscard]] bool empty() const { return pulses.empty(); }
  [[nodiscard]] std::size_t size() const { return pulses.size(); }
  [[nodiscard]] bool unterminated() const { return !pulses.empty() && pulses.back().open(); }
  [[nodiscard]] bool active_at(double t) const {
    for (const auto& p : pulses) {
      if (t >= p.rise && (p.open() || t < *p.fall)) return true;
    }
    return false;
  }
  friend bool operator==(const PulseTrain&, const PulseTrain&) = default;
};

/// Classical fourth-order Runge-Kutta step for dv/dt = rhs(t, v).
template <class Rhs>
double solve_step(double state, Rhs&& rhs, double t, double h) {
  if (!std::isfinite(state)) throw numeric_error("non-finite solver state at t=" + std::to_string(t));
  const double k1 = rhs(t, state);
  const double k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1);
  const double k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2);
  const double k4 = rhs(t + h, state + h * k3);
  const double next = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!std::isfinite(next)) throw numeric_error("solver diverged at t=" + std::to_string(t));
  return next;
}

namespace detail {

inline std::size_t grid_steps(const TimeSeries& input, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("solver step must be > 0");
  return static_cast<std::size_t>(std::floor(input.duration() / step + 1e-9));
}

inline double clamp_rail(double v, double rail) { return std::clamp(v, -rail, rail); }

}  // namespace detail

/// Inverting differentiator H(s) = -s*tau_d / (1 + s*tau_parasitic), sampled on
/// the solver grid and clamped to the rails. A rising input yields a negative
/// output.
inline TimeSeries differentiator_response(const TimeSeries& input, const DifferentiatorParams& p,
                                          double step) {
  p.validate();
  if (!(input.duration() > 0.0)) throw std::invalid_argument("differentiator: input duration must be > 0");
  const std::size_t n = detail::grid_steps(input, step);
  std::vector<double> out(n + 1);
  const double t0 = input.t0();

  if (p.tau_parasitic == 0.0) {
    // Ideal: output follows the slope of the interpolated input segment.
    const std::size_t last_seg = input.size() - 2;
    for (std::size_t k = 0; k <= n; ++k) {
      const double x = static_cast<double>(k) * step / input.dt();
      auto seg = static_cast<std::size_t>(std::floor(x + 1e-9));
      seg = std::min(seg, last_seg);
      const double slope = (input[seg + 1] - input[seg]) / input.dt();
      out[k] = detail::clamp_rail(-p.tau_d * slope, p.v_rail);
    }
    return TimeSeries(t0, step, std::move(out));
  }

  // State z = y + g*x with g = tau_d/tau_parasitic obeys
  //   tau_parasitic * dz/dt = -z + g*x(t),
  // which needs no derivative of the sampled input.
  const double gain = p.tau_d / p.tau_parasitic;
  const double tau = p.tau_parasitic;
  auto rhs = [&](double t, double z) { return (-z + gain * input.value_at(t)) / tau; };
  // Start at rest on the input averaged over one time constant. Anchoring to
  // the first sample alone would turn its noise into a tau_p-long offset.
  double offset = 0.0;
  std::size_t anchor_n = 0;
  for (; anchor_n < input.size() && input.time_at(anchor_n) <= t0 + tau; ++anchor_n) offset += input[anchor_n] - input[0];
  double z = gain * (input[0] + offset / static_cast<double>(anchor_n));
  out[0] = detail::clamp_rail(z - gain * input[0], p.v_rail);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) * step;
    z = solve_step(z, rhs, t, step);
    const double tn = t0 + static_cast<double>(k + 1) * step;
    out[k + 1] = detail::clamp_rail(z - gain * input.value_at(tn), p.v_rail);
  }
  return TimeSeries(t0, step, std::move(out));
}

/// Threshold comparator with hysteresis. Edge instants are refined by linear
/// interpolation between neighbouring samples.
inline PulseTrain comparator(const TimeSeries& input, const ComparatorParams& p) {
  p.validate();
  const double sign = p.polarity == Polarity::below ? -1.0 : 1.0;
  const double assert_level = p.threshold;
  const double release_level = p.threshold - p.hysteresis;
  const bool strict_release = p.hysteresis == 0.0;

  auto crossing = [&](std::size_t i, double level) {
    if (i == 0) return input.t0();
    const double a = sign * input[i - 1];
    const double b = sign * input[i];
    const double frac = (b == a) ? 1.0 : (level - a) / (b - a);
    return input.time_at(i - 1) + std::clamp(frac, 0.0, 1.0) * input.dt();
  };

  PulseTrain train;
  bool on = false;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double s = sign * input[i];
    if (!on) {
      if (s >= assert_level) {
        train.pulses.push_back({crossing(i, assert_level), std::nullopt});
        on = true;
      }
    } else {
      const bool release = strict_release ? s < release_level : s <= release_level;
      if (release) {
        train.pulses.back().fall = crossing(i, release_level);
        on = false;
      }
    }
  }
  return train;
}

/// What the integrator charges from while its input switch is closed.
enum class InputReference {
  gate_onset,  // V1(t) - V1(t_gate_rise)
  absolute,    // V1(t) as given
};

struct IntegratorOutput {
  TimeSeries signed_output;  // inverting: positive input drives it negative
  TimeSeries magnitude;      // |v|, compared against the EM threshold
};

/// Gated lossy inverting integrator:
///   dv/dt = -g(t) * u(t) / tau_in - v / tau_eff(t)
/// g is 1 inside gate pulses. After each gate fall the reset switch holds
/// tau_eff at tau_reset until |v| < 1% of `em_threshold`; otherwise tau_eff is
/// tau_leak. Gate edges split solver steps so the switching instants are exact.
inline IntegratorOutput gated_integrator(const TimeSeries& input, const PulseTrain& gate,
                                         const IntegratorParams& p, double em_threshold, double step,
                                         InputReference reference = InputReference::gate_onset) {
  p.validate();
  const double t0 = input.t0();
  const double t_end = input.t_end();
  const double tol = 1e-9 * input.dt();
  for (const auto& pulse : gate.pulses) {
    if (pulse.rise < t0 - tol || pulse.rise > t_end + tol ||
        (pulse.fall && (*pulse.fall < pulse.rise || *pulse.fall > t_end + tol)))
      throw std::invalid_argument("gate interval outside input domain");
  }

  // Edge list: (time, is_rise).
  struct Edge {
    double t;
    bool rise;
  };
  std::vector<Edge> edges;
  for (const auto& pulse : gate.pulses) {
    edges.push_back({pulse.rise, true});
    if (pulse.fall) edges.push_back({*pulse.fall, false});
  }

  const std::size_t n = detail::grid_steps(input, step);
  std::vector<double> out(n + 1, 0.0);
  const double release = 0.01 * em_threshold;

  double v = 0.0;
  bool gate_on = false;
  bool reset_pending = false;
  double u_ref = 0.0;
  std::size_t next_edge = 0;

  auto apply_edges_up_to = [&](double t) {
    while (next_edge < edges.size() && edges[next_edge].t <= t) {
      const Edge& e = edges[next_edge++];
      if (e.rise) {
        gate_on = true;
        reset_pending = false;
        u_ref = reference == InputReference::gate_onset ? input.value_at(std::max(e.t, t0)) : 0.0;
      } else {
        gate_on = false;
        reset_pending = true;
      }
    }
  };

  auto advance = [&](double a, double b) {
    if (!(b > a)) return;
    const double g = gate_on ? 1.0 : 0.0;
    const double tau_eff = (!gate_on && reset_pending) ? p.tau_reset : p.tau_leak;
    const double ref = u_ref;
    auto rhs = [&](double t, double x) {
      const double drive = g != 0.0 ? (input.value_at(std::min(t, t_end)) - ref) / p.tau_in : 0.0;
      return -g * drive - x / tau_eff;
    };
    v = detail::clamp_rail(solve_step(v, rhs, a, b - a), p.v_rail);
    if (reset_pending && !gate_on && std::abs(v) < release) reset_pending = false;
  };

  apply_edges_up_to(t0);
  for (std::size_t k = 0; k < n; ++k) {
    double a = t0 + static_cast<double>(k) * step;
    const double b = t0 + static_cast<double>(k + 1) * step;
    while (next_edge < edges.size() && edges[next_edge].t < b) {
      const double te = edges[next_edge].t;
      advance(a, te);
      a = std::max(a, te);
      apply_edges_up_to(te);
    }
    advance(a, b);
    out[k + 1] = v;
  }

  std::vector<double> mag(out.size());
  std::transform(out.begin(), out.end(), mag.begin(), [](double x) { return std::abs(x); });
  return {TimeSeries(t0, step, std::move(out)), TimeSeries(t0, step, std::move(mag))};
}

}  // namespace spiketime
