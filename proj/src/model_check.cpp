#include "tcem/model_check.hpp"

#include "tcem/batch.hpp"
#include "tcem/errors.hpp"

namespace tcem {

Cohort toy_cohort(std::size_t features, std::size_t stages, std::size_t patients,
                  std::size_t visits, std::uint64_t seed, double missing_rate) {
  SyntheticConfig sc;
  sc.patients = patients;
  sc.visits_min = sc.visits_max = visits;
  sc.features = features;
  sc.stages = stages;
  sc.transition = Matrix(stages, stages);
  for (std::size_t s = 0; s < stages; ++s) {
    if (s + 1 < stages) {
      sc.transition(s, s) = 0.6;
      sc.transition(s, s + 1) = 0.4;
    } else {
      sc.transition(s, s) = 1.0;
    }
  }
  sc.missing_rate = missing_rate;
  sc.seed = seed;
  Cohort c = generate_synthetic(sc);
  // Every feature needs at least one observation for the column statistics.
  for (std::size_t f = 0; f < features; ++f) {
    auto& p = c.patients.front();
    if (!p.is_observed(0, f)) {
      p.observed[f] = 1;
      p.values(0, f) = 0.25 * static_cast<double>(f);
    }
  }
  c.norm = compute_normalization(c);
  c = impute(c);
  normalize(c, *c.norm);
  return c;
}

ModelConfig toy_model_config(Mode mode) {
  ModelConfig m;
  m.mode = mode;
  m.features = 5;
  m.labels = mode == Mode::supervised ? 3 : 0;
  m.hidden = 6;
  m.latent = 4;
  m.memory_slots = 3;
  m.memory_width = 6;
  m.label_dim = 4;
  return m;
}

GradcheckReport model_gradcheck(const ModelConfig& config, const ModelGradcheckOptions& o) {
  TcemParams params = init_params(config, o.seed);
  if (params.parameter_count() >= kGradcheckParameterLimit)
    throw ConfigError("gradcheck is limited to toy models (< " +
                      std::to_string(kGradcheckParameterLimit) + " parameters, this one has " +
                      std::to_string(params.parameter_count()) +
                      "); shrink hidden/latent/memory_width");

  const std::size_t stages = config.supervised() ? config.labels : 3;
  const Cohort cohort = toy_cohort(config.features, stages, o.patients, o.visits, o.seed + 1);
  const auto batch = pointers(cohort.patients);
  const BatchOptions bo{o.kl_weight, o.seed + 2, true};

  params.zero_grad();
  batch_gradients_serial(params, batch, bo, params);
  if (!o.corrupt_tensor.empty()) {
    ParamTensor* t = params.find(o.corrupt_tensor);
    if (t == nullptr) throw ArgumentError("no tensor named " + o.corrupt_tensor);
    t->grad[0] += 1.0;
  }

  auto loss_fn = [&] { return batch_loss(params, batch, bo).total; };
  auto tensors = params.tensors();
  return gradcheck(loss_fn, tensors, o.step, o.tolerance);
}

}  // namespace tcem
