#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evuda {

/// Worst finite-difference mismatch of one family of analytic gradients.
struct SuiteResult {
  std::string name;
  std::size_t points = 0;
  double worst = 0.0;
  double tolerance = 0.0;

  bool passed() const { return worst <= tolerance; }
};

/// ml, ce, mse, kl, ddc, coral, homm, mmda (tolerance 1e-4) and e2e, a tiny
/// model under the full training loss (tolerance 1e-3).
const std::vector<std::string>& gradient_suite_names();

/// Evaluates `points` random points (e2e caps this at 5). Unknown names raise ConfigError.
SuiteResult run_gradient_suite(std::string_view name, std::size_t points, std::uint64_t seed);

}  // namespace evuda
