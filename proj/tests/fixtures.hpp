#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "spiketime/circuit.hpp"
#include "spiketime/signal.hpp"

namespace fixtures {

/// Ideal differentiator, comparators without hysteresis, unsaturating
/// integrator. Event times then follow the closed forms in oracles.hpp.
inline spiketime::CircuitParams ideal_params() {
  spiketime::CircuitParams p;
  p.diff = {1.0, 0.0, 5.0};
  p.cd_cmp = {0.05, 0.0, spiketime::Polarity::below};
  p.integ = {0.1, 10.0, 1e-3, 100.0};
  p.em_cmp = {0.5, 0.0, spiketime::Polarity::above};
  p.solver_step = 1e-4;
  return p;
}

/// Noise-free 1 s ramp from 0.5 V, 3 s decay, 2 s of baseline either side.
inline spiketime::Trapezoid gas_pulse(double amplitude) {
  return {0.5, amplitude, 1.0, 0.0, 3.0, 2.0, 2.0};
}

inline const std::vector<double>& family_amplitudes() {
  static const std::vector<double> a{0.2, 0.4, 0.6, 0.8, 1.0};
  return a;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("spiketime_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
