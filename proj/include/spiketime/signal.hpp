#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spiketime {

/// Half-open time interval [start, end) in seconds.
struct TimeWindow {
  double start = 0.0;
  double end = 0.0;

  [[nodiscard]] bool contains(double t) const { return t >= start && t < end; }
  [[nodiscard]] double length() const { return end - start; }
};

/// Gas release interval. The recording protocol releases at 0 s and stops at 1 s.
struct StimulusWindow {
  double onset = 0.0;
  double offset = 1.0;

  StimulusWindow() = default;
  StimulusWindow(double on, double off) : onset(on), offset(off) {
    if (!(on < off)) throw std::invalid_argument("stimulus onset must precede offset");
  }
};

/// Uniformly sampled voltage trace. Immutable after construction.
class TimeSeries {
 public:
  TimeSeries() = default;

  TimeSeries(double t0, double dt_sample, std::vector<double> values)
      : t0_(t0), dt_(dt_sample), values_(std::move(values)) {
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw std::invalid_argument("dt_sample must be > 0");
    if (!std::isfinite(t0_)) throw std::invalid_argument("t0 must be finite");
    if (values_.empty()) throw std::invalid_argument("time series needs at least one sample");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]))
        throw std::invalid_argument("non-finite sample at index " + std::to_string(i));
    }
  }

  [[nodiscard]] double t0() const { return t0_; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] bool empty() const { return values_.empty(); }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] double time_at(std::size_t i) const { return t0_ + static_cast<double>(i) * dt_; }
  [[nodiscard]] double duration() const {
    return values_.empty() ? 0.0 : static_cast<double>(values_.size() - 1) * dt_;
  }
  [[nodiscard]] double t_end() const { return t0_ + duration(); }

  /// Linear interpolation; exact at sample instants.
  [[nodiscard]] double value_at(double t) const {
    const double x = (t - t0_) / dt_;
    const double last = static_cast<double>(values_.size() - 1);
    // Tolerate rounding in callers that compute t as t0 + k*h.
    constexpr double kSnap = 1e-9;
    if (!(x >= -kSnap && x <= last + kSnap)) {
      throw std::domain_error("time " + std::to_string(t) + " outside series domain [" +
                              std::to_string(t0_) + ", " + std::to_string(t_end()) + "]");
    }
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= kSnap) return values_[static_cast<std::size_t>(nearest)];
    const auto i = static_cast<std::size_t>(std::floor(x));
    const double frac = x - static_cast<double>(i);
    return values_[i] + frac * (values_[i + 1] - values_[i]);
  }

  friend bool operator==(const TimeSeries&, const TimeSeries&) = default;

 private:
  double t0_ = 0.0;
  double dt_ = 1.0;
  std::vector<double> values_;
};

inline double value_at(const TimeSeries& series, double t) { return series.value_at(t); }

struct BaselineStats {
  double mean = 0.0;
  double sigma = 0.0;  // population standard deviation
  TimeWindow window;
  std::size_t samples = 0;
};

/// Mean and population sigma over the samples whose time falls inside `pre_window`.
inline BaselineStats baseline_stats(const TimeSeries& series, TimeWindow pre_window) {
  // Accumulate offsets from the first sample: exact for flat baselines and
  // better conditioned for small noise on a large DC level.
  std::optional<double> ref;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (pre_window.contains(series.time_at(i))) {
      if (!ref) ref = series[i];
      sum += series[i] - *ref;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("baseline window contains no samples");
  const double offset = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (pre_window.contains(series.time_at(i))) {
      const double d = (series[i] - *ref) - offset;
      ss += d * d;
    }
  }
  return {*ref + offset, std::sqrt(ss / static_cast<double>(n)), pre_window, n};
}

/// Piecewise-linear stimulus response. The ramp starts at t = 0; `lead` seconds
/// of baseline precede it and `tail` seconds of baseline follow the fall.
struct Trapezoid {
  double base = 0.0;
  double amplitude = 1.0;
  double rise = 1.0;
  double hold = 0.0;
  double fall = 3.0;
  double lead = 2.0;
  double tail = 2.0;

  [[nodiscard]] double shape(double t) const {
    if (t <= 0.0) return base;
    if (t < rise) return base + amplitude * (t / rise);
    if (t <= rise + hold) return base + amplitude;
    const double s = t - rise - hold;
    if (s < fall) return base + amplitude * (1.0 - s / fall);
    return base;
  }
};

inline TimeSeries synth_trapezoid(const Trapezoid& trap, double dt_sample, double noise_sigma,
                                  std::uint64_t seed) {
  if (!(trap.rise > 0.0) || !(trap.fall > 0.0))
    throw std::invalid_argument("rise and fall must be > 0");
  if (!(dt_sample > 0.0)) throw std::invalid_argument("dt_sample must be > 0");
  if (trap.hold < 0.0 || trap.lead < 0.0 || trap.tail < 0.0)
    throw std::invalid_argument("hold, lead and tail must be >= 0");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");

  const double span = trap.lead + trap.rise + trap.hold + trap.fall + trap.tail;
  const auto n = static_cast<std::size_t>(std::llround(span / dt_sample)) + 1;
  const double t0 = -trap.lead;

  std::vector<double> v(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = trap.shape(t0 + static_cast<double>(i) * dt_sample);
    if (noise_sigma > 0.0) v[i] += noise(rng);
  }
  return TimeSeries(t0, dt_sample, std::move(v));
}

/// Noise-free trapezoids sharing `timing`, one per amplitude.
inline std::vector<TimeSeries> synth_concentration_family(const Trapezoid& timing,
                                                          std::span<const double> amplitudes,
                                                          double dt_sample) {
  for (std::size_t i = 1; i < amplitudes.size(); ++i) {
    if (!(amplitudes[i] > amplitudes[i - 1]))
      throw std::invalid_argument("amplitudes must be strictly increasing");
  }
  std::vector<TimeSeries> family;
  family.reserve(amplitudes.size());
  for (double a : amplitudes) {
    Trapezoid t = timing;
    t.amplitude = a;
    family.push_back(synth_trapezoid(t, dt_sample, 0.0, 0));
  }
  return family;
}

}  // namespace spiketime
