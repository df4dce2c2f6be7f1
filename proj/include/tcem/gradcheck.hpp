#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcem/primitives.hpp"

namespace tcem {

// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradcheckFloor = 1e-6;

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t failures = 0;  // coordinates above tolerance
  bool passed() const { return failures == 0; }
};

struct GradcheckReport {
  double step = 0.0;
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
  std::string format() const;
};

double relative_error(double analytic, double numeric);

// Compares each tensor's current `grad` against central differences of
// `loss_fn`. The caller must have filled the grads at the current point.
// Values are restored bit-exactly after each probe.
GradcheckReport gradcheck(const std::function<double()>& loss_fn,
                          std::span<ParamTensor* const> params, double step, double tol);

}  // namespace tcem
