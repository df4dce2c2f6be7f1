#pragma once

// Full-model finite-difference harness on toy cohorts.

#include <cstdint>
#include <string>

#include "tcem/data.hpp"
#include "tcem/gradcheck.hpp"
#include "tcem/model.hpp"

namespace tcem {

// Synthetic cohort, imputed and z-scored with its own statistics. Labels are
// stage ids in [0, stages).
Cohort toy_cohort(std::size_t features, std::size_t stages, std::size_t patients,
                  std::size_t visits, std::uint64_t seed, double missing_rate = 0.2);

// The toy configuration used for gradient verification: F=5, D=6, d=6, L=3,
// latent=4, three labels.
ModelConfig toy_model_config(Mode mode);

struct ModelGradcheckOptions {
  std::size_t patients = 2;
  std::size_t visits = 4;
  double kl_weight = 0.7;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  std::string corrupt_tensor;  // test hook: perturbs this tensor's analytic gradient
};

inline constexpr std::size_t kGradcheckParameterLimit = 50000;

GradcheckReport model_gradcheck(const ModelConfig& config, const ModelGradcheckOptions& options);

}  // namespace tcem
