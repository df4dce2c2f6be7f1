#include "tcem/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "tcem/errors.hpp"

namespace tcem {

double anneal_weight(std::size_t step, std::size_t threshold) {
  if (threshold == 0) throw ArgumentError("annealing threshold must be positive");
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(threshold));
}

double cross_entropy(std::span<const Vec> probs, std::span<const int> labels) {
  if (probs.size() != labels.size())
    throw ArgumentError("cross_entropy: " + std::to_string(probs.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  if (probs.empty()) throw ArgumentError("cross_entropy of zero visits");
  double sum = 0.0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= probs[t].size())
      throw DataError("label " + std::to_string(labels[t]) + " at visit " + std::to_string(t) +
                      " out of range for " + std::to_string(probs[t].size()) + " classes");
    sum += -std::log(std::max(probs[t][static_cast<std::size_t>(labels[t])], kProbabilityFloor));
  }
  return sum / static_cast<double>(probs.size());
}

double reconstruction_mse(const Matrix& reconstruction, const Matrix& target,
                          std::span<const std::uint8_t> mask) {
  if (!reconstruction.same_shape(target) || mask.size() != target.size())
    throw DimensionError("reconstruction_mse: shapes " + reconstruction.shape_str() + " and " +
                         target.shape_str() + " with mask of " + std::to_string(mask.size()));
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = reconstruction[i] - target[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw DataError("reconstruction_mse: no observed entries");
  return sum / static_cast<double>(n);
}

void adam_step(std::span<ParamTensor* const> params, OptimizerState& state,
               const AdamOptions& o) {
  if (state.m.empty()) {
    for (const ParamTensor* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state layout changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k]->value.flat();
    auto grad = params[k]->grad.flat();
    auto m = state.m[k].flat();
    auto v = state.v[k].flat();
    if (m.size() != value.size()) throw DimensionError("adam_step: moment shape mismatch for " + params[k]->name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (anneal_steps == 0) throw ConfigError("anneal_steps (x) must be positive");
  if (batch_size == 0 || hidden == 0 || latent == 0 || memory_slots == 0 || memory_width == 0 ||
      label_dim == 0)
    throw ConfigError("batch_size and all model sizes must be positive");
  if (clusters < 2) throw ConfigError("cluster count K must be at least 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be a finite non-negative number");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

ModelConfig TrainConfig::model_config(std::size_t features, std::size_t labels) const {
  ModelConfig m;
  m.mode = mode;
  m.features = features;
  m.labels = mode == Mode::supervised ? labels : 0;
  m.hidden = hidden;
  m.latent = latent;
  m.memory_slots = memory_slots;
  m.memory_width = memory_width;
  m.label_dim = label_dim;
  m.score = score;
  m.prior = prior;
  m.global_memory = global_memory;
  return m;
}

std::string format_epoch_record(const EpochRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "epoch=%zu step=%zu total=%.17g kl_term=%.17g task_term=%.17g anneal=%.17g "
                "val_loss=%.17g",
                r.epoch, r.step, r.train.total, r.train.kl_term, r.train.task_term,
                r.train.kl_weight, r.val_loss);
  return buf;
}

TrainResult train(const TrainConfig& config, const Cohort& train_set, const Cohort& val_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  const ModelConfig mc = config.model_config(train_set.features(), train_set.label_vocab.size());
  return train_from(config, init_params(mc, config.seed), train_set, val_set, on_epoch);
}

TrainResult train_from(const TrainConfig& config, TcemParams params, const Cohort& train_set,
                       const Cohort& val_set, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.patients.empty() || val_set.patients.empty())
    throw ArgumentError("training needs non-empty train and validation splits");
  if (config.mode == Mode::supervised && (!train_set.has_labels() || !val_set.has_labels()))
    throw ConfigError("supervised training requires labels for every patient");

  const auto train_ptrs = pointers(train_set.patients);
  const auto val_ptrs = pointers(val_set.patients);
  const std::uint64_t eval_seed = mix_seed(config.seed, 0xe7a1);

  TrainResult result;
  result.params = params;
  double best_val = std::numeric_limits<double>::infinity();

  OptimizerState opt;
  const AdamOptions adam{config.learning_rate};
  std::vector<std::size_t> order(train_ptrs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const PatientSequence*> batch;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 shuffler(mix_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffler);

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
        batch.push_back(train_ptrs[order[k]]);
      ++step;
      const BatchOptions bo{anneal_weight(step, config.anneal_steps),
                            mix_seed(config.seed ^ 0x5eed, step), true};
      params.zero_grad();
      const LossBreakdown loss = batch_gradients_parallel(params, batch, bo, params, config.workers);
      if (!std::isfinite(loss.total))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
      auto tensors = params.tensors();
      adam_step(tensors, opt, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.train = batch_loss(params, train_ptrs, {anneal_weight(step, config.anneal_steps), eval_seed, true});
    rec.val_loss = batch_loss(params, val_ptrs, {1.0, eval_seed, true}).total;
    if (!std::isfinite(rec.train.total) || !std::isfinite(rec.val_loss))
      throw TrainingError("non-finite loss at end of epoch " + std::to_string(epoch));
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.best_epoch = epoch;
      result.params = params;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (config.epochs == 0) result.params = params;
  result.params.zero_grad();
  result.steps = step;
  return result;
}

}  // namespace tcem
