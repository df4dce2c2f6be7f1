#include "tcem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tcem/errors.hpp"

namespace tcem {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradcheckReport::format() const {
  std::ostringstream os;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf,
                  "tensor=%s max_rel_error=%.3e worst_index=%zu analytic=%.9e numeric=%.9e "
                  "status=%s\n",
                  e.name.c_str(), e.max_rel_error, e.worst_index, e.analytic, e.numeric,
                  e.passed() ? "pass" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "gradcheck step=%.1e tol=%.1e max_rel_error=%.3e result=%s\n",
                step, tolerance, max_rel_error(), passed() ? "pass" : "FAIL");
  os << buf;
  return os.str();
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(const std::function<double()>& loss_fn,
                          std::span<ParamTensor* const> params, double step, double tol) {
  if (!(step > 0.0)) throw ArgumentError("gradcheck step must be positive");

  const double base = loss_fn();
  const double again = loss_fn();
  if (!(base == again)) {
    throw DeterminismError("loss is not deterministic under a fixed seed: " +
                           std::to_string(base) + " vs " + std::to_string(again));
  }

  GradcheckReport report;
  report.step = step;
  report.tolerance = tol;
  for (ParamTensor* p : params) {
    GradcheckEntry entry;
    entry.name = p->name;
    auto values = p->value.flat();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn();
      values[i] = saved - step;
      const double down = loss_fn();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric);
      if (err > tol) ++entry.failures;
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tcem
