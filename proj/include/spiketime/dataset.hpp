#pragma once

// E-nose trial ingestion and the canonical on-disk layout:
//
//   <dir>/manifest.json            trial index, column mapping, metadata
//   <dir>/trials/<gas>_C<level>_T<trial>.csv
//
// Trial files are UTF-8 CSV with a header row. The manifest's "columns" block
// maps external layouts onto (time, voltage); see README for the schema.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <json.hpp>

#include "spiketime/errors.hpp"
#include "spiketime/io.hpp"
#include "spiketime/signal.hpp"

namespace spiketime {

enum class Gas : std::uint8_t { EB, Eu, IA, H2 };

inline constexpr std::array<Gas, 4> kAllGases = {Gas::EB, Gas::Eu, Gas::IA, Gas::H2};
inline constexpr int kMinLevel = 1;
inline constexpr int kMaxLevel = 5;

inline const char* to_string(Gas g) {
  switch (g) {
    case Gas::EB: return "EB";
    case Gas::Eu: return "Eu";
    case Gas::IA: return "IA";
    case Gas::H2: return "2H";
  }
  return "?";
}

inline std::optional<Gas> gas_from_string(std::string_view s) {
  for (Gas g : kAllGases) {
    if (s == to_string(g)) return g;
  }
  return std::nullopt;
}

/// Identity of one recording within the gas x level x trial grid.
struct TrialKey {
  Gas gas = Gas::EB;
  int level = 1;
  int trial = 0;

  friend auto operator<=>(const TrialKey&, const TrialKey&) = default;
};

inline std::string to_string(const TrialKey& k) {
  return std::string(to_string(k.gas)) + "/C" + std::to_string(k.level) + "/T" + std::to_string(k.trial);
}

struct TrialRecord {
  TrialKey key;
  TimeSeries series;  // onset at 0 s
  StimulusWindow stimulus;
  double load_resistance = 27e3;

  [[nodiscard]] Gas gas() const { return key.gas; }
  [[nodiscard]] int level() const { return key.level; }
  [[nodiscard]] int trial() const { return key.trial; }
};

/// Column selector: header name or zero-based index.
using ColumnRef = std::variant<std::string, int>;

struct ColumnMapping {
  std::optional<ColumnRef> time = ColumnRef{std::string("time_s")};  // empty: derive from sample rate
  ColumnRef voltage = std::string("voltage_V");
  double voltage_scale = 1.0;
  double onset_s = 0.0;  // file time of stimulus onset
  char delimiter = ',';
};

struct ManifestEntry {
  std::filesystem::path file;  // relative to the manifest directory
  TrialKey key;
  double sample_rate_hz = 0.0;
  std::optional<double> onset_s;  // overrides ColumnMapping::onset_s
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> trials;
  std::map<std::string, std::string> dilution;
  ColumnMapping columns;
  StimulusWindow stimulus{0.0, 1.0};
  double load_resistance = 27e3;

  [[nodiscard]] std::size_t size() const { return trials.size(); }
};

inline constexpr const char* kManifestFormat = "spiketime-manifest/1";
inline constexpr const char* kManifestName = "manifest.json";
/// Minimum recording span around onset required of every trial.
inline constexpr double kRequiredLead = 2.0;
inline constexpr double kRequiredTail = 5.0;
inline constexpr double kJitterTolerance = 0.01;

namespace detail {

inline ColumnRef column_from_json(const nlohmann::json& j, const char* what) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer() && j.get<int>() >= 0) return j.get<int>();
  throw ingestion_error(std::string("manifest: column '") + what + "' must be a name or index");
}

inline nlohmann::json column_to_json(const ColumnRef& c) {
  return std::visit([](const auto& v) { return nlohmann::json(v); }, c);
}

inline void validate_entries(const std::vector<ManifestEntry>& trials) {
  std::set<TrialKey> seen;
  for (const auto& e : trials) {
    if (e.key.level < kMinLevel || e.key.level > kMaxLevel)
      throw ingestion_error("manifest: level " + std::to_string(e.key.level) + " out of range for " +
                            e.file.string());
    if (e.key.trial < 0) throw ingestion_error("manifest: negative trial index for " + e.file.string());
    if (!(e.sample_rate_hz > 0.0) || !std::isfinite(e.sample_rate_hz))
      throw ingestion_error("manifest: sample_rate_hz must be > 0 for " + e.file.string());
    if (!seen.insert(e.key).second)
      throw ingestion_error("manifest: duplicate key " + to_string(e.key));
  }
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = kManifestFormat;
  j["load_resistance_ohm"] = m.load_resistance;
  j["stimulus"] = {{"onset_s", m.stimulus.onset}, {"offset_s", m.stimulus.offset}};
  nlohmann::json cols;
  cols["time"] = m.columns.time ? detail::column_to_json(*m.columns.time) : nlohmann::json(nullptr);
  cols["voltage"] = detail::column_to_json(m.columns.voltage);
  cols["voltage_scale"] = m.columns.voltage_scale;
  cols["onset_s"] = m.columns.onset_s;
  cols["delimiter"] = std::string(1, m.columns.delimiter);
  j["columns"] = cols;
  j["dilution"] = m.dilution;
  j["trials"] = nlohmann::json::array();
  for (const auto& e : m.trials) {
    nlohmann::json t = {{"file", e.file.generic_string()},
                        {"gas", to_string(e.key.gas)},
                        {"level", e.key.level},
                        {"trial", e.key.trial},
                        {"sample_rate_hz", e.sample_rate_hz}};
    if (e.onset_s) t["onset_s"] = *e.onset_s;
    j["trials"].push_back(t);
  }
  return j;
}

/// `path` may name the manifest file or the directory holding manifest.json.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / kManifestName;
  if (!std::filesystem::exists(file)) throw io_error("manifest not found: " + file.string());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ingestion_error("manifest parse error in " + file.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.root = file.parent_path();
  try {
    if (j.value("format", std::string{}) != kManifestFormat)
      throw ingestion_error("manifest: unsupported format in " + file.string());
    m.load_resistance = j.value("load_resistance_ohm", 27e3);
    if (j.contains("stimulus")) {
      const auto& s = j.at("stimulus");
      m.stimulus = StimulusWindow(s.at("onset_s").get<double>(), s.at("offset_s").get<double>());
    }
    if (j.contains("columns")) {
      const auto& c = j.at("columns");
      if (c.contains("time")) {
        m.columns.time = c.at("time").is_null() ? std::nullopt
                                                : std::optional(detail::column_from_json(c.at("time"), "time"));
      }
      if (c.contains("voltage")) m.columns.voltage = detail::column_from_json(c.at("voltage"), "voltage");
      m.columns.voltage_scale = c.value("voltage_scale", 1.0);
      m.columns.onset_s = c.value("onset_s", 0.0);
      const auto delim = c.value("delimiter", std::string(","));
      if (delim.size() != 1) throw ingestion_error("manifest: delimiter must be one character");
      m.columns.delimiter = delim[0];
    }
    if (j.contains("dilution")) m.dilution = j.at("dilution").get<std::map<std::string, std::string>>();
    for (const auto& t : j.value("trials", nlohmann::json::array())) {
      ManifestEntry e;
      e.file = t.at("file").get<std::string>();
      const auto gas_name = t.at("gas").get<std::string>();
      const auto gas = gas_from_string(gas_name);
      if (!gas) throw ingestion_error("manifest: unknown gas '" + gas_name + "'");
      e.key = {*gas, t.at("level").get<int>(), t.at("trial").get<int>()};
      e.sample_rate_hz = t.at("sample_rate_hz").get<double>();
      if (t.contains("onset_s")) e.onset_s = t.at("onset_s").get<double>();
      m.trials.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ingestion_error("manifest " + file.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ingestion_error("manifest " + file.string() + ": " + e.what());
  }
  detail::validate_entries(m.trials);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
  io::write_file(file, manifest_to_json(m).dump(2) + "\n");
}

/// Reads one trial and re-references its time axis so stimulus onset is 0 s.
inline TrialRecord load_trial(const DatasetManifest& manifest, const ManifestEntry& entry) {
  const auto path = entry.file.is_absolute() ? entry.file : manifest.root / entry.file;
  const std::string where = path.string() + " (" + to_string(entry.key) + ")";
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const io_error&) {
    throw ingestion_error("missing trial file " + where);
  }

  const ColumnMapping& cols = manifest.columns;
  std::vector<std::string_view> lines = io::split(text, '\n');
  while (!lines.empty() && io::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ingestion_error("empty trial file " + where);

  const auto header = io::split(lines[0], cols.delimiter);
  auto resolve = [&](const ColumnRef& ref) -> std::size_t {
    if (const int* idx = std::get_if<int>(&ref)) {
      if (static_cast<std::size_t>(*idx) >= header.size())
        throw ingestion_error("column index " + std::to_string(*idx) + " out of range in " + where);
      return static_cast<std::size_t>(*idx);
    }
    const auto& name = std::get<std::string>(ref);
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (io::trim(header[i]) == name) return i;
    }
    throw ingestion_error("column '" + name + "' not found in " + where);
  };
  const std::optional<std::size_t> time_col =
      cols.time ? std::optional(resolve(*cols.time)) : std::nullopt;
  const std::size_t volt_col = resolve(cols.voltage);

  std::vector<double> times;
  std::vector<double> volts;
  volts.reserve(lines.size());
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (io::trim(lines[row]).empty()) continue;
    const auto fields = io::split(lines[row], cols.delimiter);
    auto field = [&](std::size_t col, const char* what) {
      if (col >= fields.size())
        throw ingestion_error(std::string("missing ") + what + " at line " + std::to_string(row + 1) +
                              " of " + where);
      const auto v = io::parse_double(fields[col]);
      if (!v) throw ingestion_error(std::string("unparsable ") + what + " at line " +
                                    std::to_string(row + 1) + " of " + where);
      if (!std::isfinite(*v))
        throw ingestion_error(std::string("non-finite ") + what + " at line " + std::to_string(row + 1) +
                              " of " + where);
      return *v;
    };
    if (time_col) times.push_back(field(*time_col, "time"));
    volts.push_back(field(volt_col, "voltage") * cols.voltage_scale);
  }
  if (volts.size() < 2) throw ingestion_error("fewer than two samples in " + where);

  const double dt = 1.0 / entry.sample_rate_hz;
  const double onset = entry.onset_s.value_or(cols.onset_s);
  double first_time = 0.0;
  if (time_col) {
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double step = times[i] - times[i - 1];
      if (std::abs(step - dt) > kJitterTolerance * dt)
        throw ingestion_error("non-uniform sampling at line " + std::to_string(i + 2) + " of " + where +
                              ": step " + io::format_double(step) + " s vs " + io::format_double(dt) + " s");
    }
    first_time = times.front();
  }

  TrialRecord rec{entry.key, TimeSeries(first_time - onset, dt, std::move(volts)), manifest.stimulus,
                  manifest.load_resistance};
  const double tol = 1e-9 + 1e-6 * dt;
  if (rec.series.t0() > rec.stimulus.onset - kRequiredLead + tol ||
      rec.series.t_end() < rec.stimulus.onset + kRequiredTail - tol)
    throw ingestion_error("trial " + where + " spans [" + io::format_double(rec.series.t0()) + ", " +
                          io::format_double(rec.series.t_end()) + "] s, needs at least [-2, 5] s around onset");
  return rec;
}

inline std::vector<TrialRecord> load_trials(const DatasetManifest& manifest) {
  std::vector<TrialRecord> out;
  out.reserve(manifest.trials.size());
  for (const auto& e : manifest.trials) out.push_back(load_trial(manifest, e));
  return out;
}

/// Writes the canonical two-column CSV for one series.
inline std::string trial_csv(const TimeSeries& s) {
  std::string out = "time_s,voltage_V\n";
  out.reserve(s.size() * 24);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += io::format_double(s.time_at(i));
    out += ',';
    out += io::format_double(s[i]);
    out += '\n';
  }
  return out;
}

/// Synthetic stand-in for the recordings: per gas, five linearly spaced
/// trapezoid amplitudes scaled by a gas-specific sensitivity.
struct SyntheticSpec {
  double base = 0.5;
  std::array<double, kMaxLevel> level_amplitudes = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::array<double, 4> gas_sensitivity = {1.0, 0.8, 0.6, 0.4};  // EB, Eu, IA, 2H
  Trapezoid timing{0.0, 0.0, 1.0, 0.0, 3.0, 2.0, 2.0};
  double sample_rate_hz = 1000.0;
  double noise_sigma = 3e-4;
  double amplitude_jitter = 0.02;  // relative, per trial
  std::vector<Gas> gases{kAllGases.begin(), kAllGases.end()};
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline std::uint64_t trial_seed(std::uint64_t seed, const TrialKey& k) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(k.gas));
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(k.level));
  return detail::splitmix64(h ^ static_cast<std::uint64_t>(k.trial));
}

inline TimeSeries synth_trial(const SyntheticSpec& spec, const TrialKey& k, std::uint64_t seed) {
  const std::uint64_t s = trial_seed(seed, k);
  std::mt19937_64 rng(s);
  std::normal_distribution<double> jitter(0.0, 1.0);
  Trapezoid trap = spec.timing;
  trap.base = spec.base;
  trap.amplitude = spec.level_amplitudes[static_cast<std::size_t>(k.level - 1)] *
                   spec.gas_sensitivity[static_cast<std::size_t>(k.gas)];
  if (spec.amplitude_jitter > 0.0) trap.amplitude *= 1.0 + spec.amplitude_jitter * jitter(rng);
  return synth_trapezoid(trap, 1.0 / spec.sample_rate_hz, spec.noise_sigma, detail::splitmix64(s));
}

inline std::filesystem::path trial_file_name(const TrialKey& k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_C%d_T%02d.csv", to_string(k.gas), k.level, k.trial);
  return std::filesystem::path("trials") / buf;
}

inline DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticSpec& spec,
                                               int trials_per_cell, std::uint64_t seed) {
  if (trials_per_cell < 0) throw std::invalid_argument("trials_per_cell must be >= 0");
  if (!(spec.sample_rate_hz > 0.0)) throw std::invalid_argument("sample_rate_hz must be > 0");
  DatasetManifest m;
  m.root = dir;
  m.dilution = {{"EB", "1:5"}, {"Eu", "1:5"}, {"IA", "1:5"}, {"2H", "1:50"}};
  for (Gas g : spec.gases) {
    for (int level = kMinLevel; level <= kMaxLevel; ++level) {
      for (int trial = 0; trial < trials_per_cell; ++trial) {
        const TrialKey k{g, level, trial};
        const auto rel = trial_file_name(k);
        io::write_file(dir / rel, trial_csv(synth_trial(spec, k, seed)));
        m.trials.push_back({rel, k, spec.sample_rate_hz, std::nullopt});
      }
    }
  }
  save_manifest(m, dir / kManifestName);
  return m;
}

}  // namespace spiketime
