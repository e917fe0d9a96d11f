#pragma once

// Per-gas concentration curves: Δt statistics by level, rank monotonicity, and
// the CSV / SVG reports.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spiketime/dataset.hpp"
#include "spiketime/encoder.hpp"
#include "spiketime/io.hpp"

namespace spiketime {

struct KeyedTrace {
  TrialKey key;
  EventTrace trace;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown by any worker is rethrown on the caller's thread.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1U, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

/// Encodes every trial; output is sorted by key regardless of `jobs`.
inline std::vector<KeyedTrace> encode_all(std::span<const TrialRecord> trials, const CircuitParams& params,
                                          const EncoderOptions& opts = {}, unsigned jobs = 1) {
  std::vector<KeyedTrace> out(trials.size());
  parallel_for(trials.size(), jobs, [&](std::size_t i) {
    out[i] = {trials[i].key, encode_trial(trials[i].series, params, trials[i].stimulus, opts)};
  });
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

struct LevelStats {
  int level = 0;
  std::size_t n_valid = 0;
  std::size_t n_discarded = 0;
  std::optional<double> mean_dt;          // seconds
  std::optional<double> std_dt;           // population
  std::optional<double> mean_inverse_dt;  // 1 / mean_dt
  std::optional<double> mean_of_inverse;  // mean(1 / dt)
  std::optional<double> std_of_inverse;   // population

  [[nodiscard]] bool empty() const { return n_valid == 0; }
};

struct ConcentrationCurve {
  Gas gas = Gas::EB;
  std::array<LevelStats, kMaxLevel> levels{};
};

namespace detail {

struct MeanStd {
  double mean;
  double sd;
};

/// Sorted before summation so the result does not depend on input order.
inline MeanStd mean_std(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

}  // namespace detail

/// Groups traces by (gas, level). Traces without Δt count as discarded. Only
/// gases that appear in `traces` get a curve, in Gas order.
inline std::vector<ConcentrationCurve> aggregate(std::span<const KeyedTrace> traces) {
  std::map<Gas, std::array<std::vector<double>, kMaxLevel>> valid;
  std::map<Gas, std::array<std::size_t, kMaxLevel>> discarded;
  for (const auto& kt : traces) {
    if (kt.key.level < kMinLevel || kt.key.level > kMaxLevel)
      throw std::invalid_argument("trace level out of range: " + to_string(kt.key));
    const auto li = static_cast<std::size_t>(kt.key.level - 1);
    auto& cell = valid[kt.key.gas];
    auto& disc = discarded[kt.key.gas];
    if (kt.trace.delta_t) {
      cell[li].push_back(*kt.trace.delta_t);
    } else {
      ++disc[li];
    }
  }

  std::vector<ConcentrationCurve> curves;
  for (Gas g : kAllGases) {
    if (!valid.contains(g)) continue;
    ConcentrationCurve c;
    c.gas = g;
    for (std::size_t li = 0; li < kMaxLevel; ++li) {
      LevelStats& s = c.levels[li];
      s.level = static_cast<int>(li) + 1;
      const auto& dts = valid[g][li];
      s.n_valid = dts.size();
      s.n_discarded = discarded[g][li];
      if (dts.empty()) continue;
      const auto dt = detail::mean_std(dts);
      s.mean_dt = dt.mean;
      s.std_dt = dt.sd;
      s.mean_inverse_dt = 1.0 / dt.mean;
      std::vector<double> inv(dts.size());
      std::transform(dts.begin(), dts.end(), inv.begin(), [](double x) { return 1.0 / x; });
      const auto iv = detail::mean_std(std::move(inv));
      s.mean_of_inverse = iv.mean;
      s.std_of_inverse = iv.sd;
    }
    curves.push_back(c);
  }
  return curves;
}

namespace detail {

inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Spearman rank correlation. Returns 0 when either side has no spread.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: size mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const auto rx = detail::average_ranks(x);
  const auto ry = detail::average_ranks(y);
  const double n = static_cast<double>(x.size());
  const bool ties = std::set<double>(rx.begin(), rx.end()).size() != rx.size() ||
                    std::set<double>(ry.begin(), ry.end()).size() != ry.size();
  if (!ties) {
    // Closed form keeps perfect agreement at exactly +/-1.
    double d2 = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  }
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman(level, 1/mean Δt) over the non-empty levels of a curve.
inline double monotonicity(const ConcentrationCurve& curve) {
  std::vector<double> lv, inv;
  for (const auto& s : curve.levels) {
    if (s.mean_inverse_dt) {
      lv.push_back(s.level);
      inv.push_back(*s.mean_inverse_dt);
    }
  }
  if (lv.size() < 2) throw std::invalid_argument("monotonicity needs at least two non-empty levels");
  return spearman(lv, inv);
}

inline constexpr const char* kCurvesCsvHeader =
    "gas,level,n_valid,n_discarded,mean_dt_s,std_dt_s,mean_inv_dt_per_s";

inline std::string curves_csv(std::span<const ConcentrationCurve> curves) {
  std::string out = std::string(kCurvesCsvHeader) + "\n";
  for (const auto& c : curves) {
    for (const auto& s : c.levels) {
      out += std::string(to_string(c.gas)) + "," + std::to_string(s.level) + "," + std::to_string(s.n_valid) +
             "," + std::to_string(s.n_discarded) + "," + io::format_optional(s.mean_dt) + "," +
             io::format_optional(s.std_dt) + "," + io::format_optional(s.mean_inverse_dt) + "\n";
    }
  }
  return out;
}

/// Companion table with per-trial inverse statistics, mean(1/Δt) and its std.
inline std::string inverse_csv(std::span<const ConcentrationCurve> curves) {
  std::string out = "gas,level,n_valid,mean_of_inv_dt_per_s,std_of_inv_dt_per_s\n";
  for (const auto& c : curves) {
    for (const auto& s : c.levels) {
      out += std::string(to_string(c.gas)) + "," + std::to_string(s.level) + "," + std::to_string(s.n_valid) +
             "," + io::format_optional(s.mean_of_inverse) + "," + io::format_optional(s.std_of_inverse) + "\n";
    }
  }
  return out;
}

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

/// One panel per gas: 1/mean(Δt) dots with ±std(1/Δt) error bars.
inline std::string curves_svg(std::span<const ConcentrationCurve> curves) {
  using detail::fmt2;
  constexpr double kPanelW = 260, kPanelH = 220, kLeft = 50, kRight = 15, kTop = 30, kBottom = 40;
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(curves.size(), 1));
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(width) + "\" height=\"" +
                    fmt2(kPanelH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    const double ox = kPanelW * static_cast<double>(ci);
    const double pw = kPanelW - kLeft - kRight;
    const double ph = kPanelH - kTop - kBottom;
    double ymax = 0.0;
    for (const auto& s : c.levels) {
      if (s.mean_inverse_dt) ymax = std::max(ymax, *s.mean_inverse_dt + s.std_of_inverse.value_or(0.0));
    }
    ymax = ymax > 0.0 ? ymax * 1.1 : 1.0;
    auto px = [&](int level) { return ox + kLeft + pw * (static_cast<double>(level) - 0.5) / kMaxLevel; };
    auto py = [&](double v) { return kTop + ph * (1.0 - v / ymax); };

    svg += "<g>\n";
    svg += "<text x=\"" + fmt2(ox + kLeft + pw / 2) + "\" y=\"18\" text-anchor=\"middle\">" + to_string(c.gas) +
           "</text>\n";
    svg += "<line x1=\"" + fmt2(ox + kLeft) + "\" y1=\"" + fmt2(kTop + ph) + "\" x2=\"" + fmt2(ox + kLeft + pw) +
           "\" y2=\"" + fmt2(kTop + ph) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt2(ox + kLeft) + "\" y1=\"" + fmt2(kTop) + "\" x2=\"" + fmt2(ox + kLeft) +
           "\" y2=\"" + fmt2(kTop + ph) + "\" stroke=\"black\"/>\n";
    for (int level = kMinLevel; level <= kMaxLevel; ++level) {
      svg += "<text x=\"" + fmt2(px(level)) + "\" y=\"" + fmt2(kTop + ph + 15) + "\" text-anchor=\"middle\">C" +
             std::to_string(level) + "</text>\n";
    }
    svg += "<text x=\"" + fmt2(ox + kLeft - 5) + "\" y=\"" + fmt2(kTop + 4) + "\" text-anchor=\"end\">" +
           fmt2(ymax) + "</text>\n";
    svg += "<text x=\"" + fmt2(ox + kLeft - 5) + "\" y=\"" + fmt2(kTop + ph) + "\" text-anchor=\"end\">0</text>\n";
    svg += "<text x=\"" + fmt2(ox + kLeft + pw / 2) + "\" y=\"" + fmt2(kPanelH - 8) +
           "\" text-anchor=\"middle\">concentration level (1/dt in 1/s)</text>\n";
    for (const auto& s : c.levels) {
      if (!s.mean_inverse_dt) continue;
      const double x = px(s.level);
      const double y = *s.mean_inverse_dt;
      const double e = s.std_of_inverse.value_or(0.0);
      svg += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(py(y - e)) + "\" x2=\"" + fmt2(x) + "\" y2=\"" +
             fmt2(py(y + e)) + "\" stroke=\"black\"/>\n";
      svg += "<circle cx=\"" + fmt2(x) + "\" cy=\"" + fmt2(py(y)) + "\" r=\"3.5\" fill=\"steelblue\"/>\n";
    }
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Writes curves.csv, curves_inverse.csv and curves.svg into `dir`.
inline void export_curves(std::span<const ConcentrationCurve> curves, const std::filesystem::path& dir) {
  if (curves.empty()) throw std::invalid_argument("no curves to export");
  io::write_file(dir / "curves.csv", curves_csv(curves));
  io::write_file(dir / "curves_inverse.csv", inverse_csv(curves));
  io::write_file(dir / "curves.svg", curves_svg(curves));
}

inline constexpr const char* kTracesCsvHeader = "gas,level,trial,cd_rise_s,em_rise_s,delta_t_s,flags";

inline std::string traces_csv(std::span<const KeyedTrace> traces) {
  std::string out = std::string(kTracesCsvHeader) + "\n";
  for (const auto& kt : traces) {
    out += std::string(to_string(kt.key.gas)) + "," + std::to_string(kt.key.level) + "," +
           std::to_string(kt.key.trial) + "," + io::format_optional(kt.trace.cd_rise) + "," +
           io::format_optional(kt.trace.em_rise) + "," + io::format_optional(kt.trace.delta_t) + "," +
           kt.trace.flags.str() + "\n";
  }
  return out;
}

/// Reads the table written by traces_csv. Pulse trains are not stored.
inline std::vector<KeyedTrace> parse_traces_csv(std::string_view text) {
  auto lines = io::split(text, '\n');
  while (!lines.empty() && io::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty() || io::trim(lines[0]) != kTracesCsvHeader)
    throw ingestion_error("traces table: missing or unexpected header");
  std::vector<KeyedTrace> out;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto f = io::split(io::trim(lines[row]), ',');
    const std::string where = " at line " + std::to_string(row + 1);
    if (f.size() != 7) throw ingestion_error("traces table: expected 7 fields" + where);
    const auto gas = gas_from_string(f[0]);
    const auto level = io::parse_double(f[1]);
    const auto trial = io::parse_double(f[2]);
    if (!gas || !level || !trial) throw ingestion_error("traces table: bad key" + where);
    KeyedTrace kt;
    kt.key = {*gas, static_cast<int>(*level), static_cast<int>(*trial)};
    auto opt = [&](std::string_view s) -> std::optional<double> {
      if (io::trim(s).empty()) return std::nullopt;
      const auto v = io::parse_double(s);
      if (!v) throw ingestion_error("traces table: bad number" + where);
      return v;
    };
    kt.trace.cd_rise = opt(f[3]);
    kt.trace.em_rise = opt(f[4]);
    kt.trace.delta_t = opt(f[5]);
    try {
      kt.trace.flags = FlagSet::parse(std::string(f[6]));
    } catch (const std::invalid_argument& e) {
      throw ingestion_error(std::string("traces table: ") + e.what() + where);
    }
    out.push_back(std::move(kt));
  }
  return out;
}

}  // namespace spiketime
