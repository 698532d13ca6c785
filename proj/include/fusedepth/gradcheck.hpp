#pragma once

#include "fusedepth/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fusedepth {

/// Extended precision keeps finite-difference rounding well below the
/// tolerance even through long recurrent chains.
using CheckScalar = long double;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so entries whose true
  /// gradient is ~0 are compared absolutely.
  double floor = 1e-5;
  /// Entries probed per tensor (all of them if the tensor is smaller).
  int samples = 12;
  std::uint64_t seed = 7;
  /// Multiplies analytic gradients by (1 + corrupt); a test fixture for
  /// proving that the harness fails.
  double corrupt = 0.0;
};

struct GradCheckReport {
  std::string name;
  bool passed = true;
  double max_error = 0.0;
  int entries = 0;
  std::string worst;  // "<tensor>[index]" of the largest error
  std::string note;
};

struct GradTarget {
  std::string name;
  Var<CheckScalar> var;
};

/// Compares the reverse-mode gradient of `loss` (a scalar-valued graph
/// builder) with central differences on sampled entries of every target.
GradCheckReport check_gradients(const std::string& name, const std::function<Var<CheckScalar>()>& loss,
                                const std::vector<GradTarget>& targets, const GradCheckOptions& opt);

/// Scalar sum(out * R) with a fixed random R, turning any tensor output
/// into a loss with a generic upstream gradient.
Var<CheckScalar> projection_loss(const Var<CheckScalar>& out, std::uint64_t seed);

struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// Every layer and module check, on inputs no larger than 16 x 16.
std::vector<GradCheckCase> registered_gradient_checks();

/// Bound checks of the affinity normalisation: per-pixel sum |w| <= c <= 1
/// over random draws with gamma = K = 8, and the saturation case.
std::vector<GradCheckReport> affinity_bound_suite(std::uint64_t seed = 11, int draws = 100);

}  // namespace fusedepth
