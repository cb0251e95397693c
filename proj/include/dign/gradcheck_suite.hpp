#pragma once

#include <string>
#include <vector>

namespace dign {

struct GradCheckOptions {
  /// Restrict to one family; empty runs all.
  std::string only;
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Largest fraction of probes kink screening may set aside before a case fails.
  double max_kink_fraction = 0.1;
  /// Routes every checked loss through an identity whose backward is off by 1%.
  bool inject_fault = false;
};

struct GradCheckResult {
  std::string family;
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  /// Probes set aside by kink screening (whole-network case only).
  std::size_t kinks = 0;
  bool passed = false;
};

std::vector<std::string> gradcheck_families();

/// 64-bit central-difference checks of every differentiable operation.
/// Throws ConfigError for an unknown family.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace dign
