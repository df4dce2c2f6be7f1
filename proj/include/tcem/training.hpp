#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcem/batch.hpp"
#include "tcem/data.hpp"
#include "tcem/model.hpp"

namespace tcem {

// KL annealing weight min(1, step / threshold).
double anneal_weight(std::size_t step, std::size_t threshold);

// Mean over visits of -log p(true label), p floored at 1e-12.
double cross_entropy(std::span<const Vec> probs, std::span<const int> labels);

// Mean squared error over entries with mask != 0.
double reconstruction_mse(const Matrix& reconstruction, const Matrix& target,
                          std::span<const std::uint8_t> mask);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

// Bias-corrected Adam on each tensor's `grad`; lazily sizes the moments.
void adam_step(std::span<ParamTensor* const> params, OptimizerState& state,
               const AdamOptions& options);

struct TrainConfig {
  Mode mode = Mode::unsupervised;
  std::size_t anneal_steps = 700;  // threshold x of the KL schedule
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 70;
  std::size_t hidden = 128;
  std::size_t latent = 128;
  std::size_t memory_slots = 10;
  std::size_t memory_width = 128;
  std::size_t label_dim = 16;
  std::size_t clusters = 3;
  std::uint64_t seed = 0;
  int workers = 1;
  ScoreMode score = ScoreMode::additive;
  PriorKind prior = PriorKind::learned;
  GlobalMemoryPolicy global_memory = GlobalMemoryPolicy::per_patient;

  void validate() const;
  ModelConfig model_config(std::size_t features, std::size_t labels) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown train;  // full pass over the training split at epoch end
  double val_loss = 0.0;
};

// One line-delimited key=value record.
std::string format_epoch_record(const EpochRecord& r);

struct TrainResult {
  TcemParams params;  // at the best validation epoch
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& config, const Cohort& train_set, const Cohort& val_set,
                  const EpochCallback& on_epoch = {});

// Same as above starting from given parameters.
TrainResult train_from(const TrainConfig& config, TcemParams initial, const Cohort& train_set,
                       const Cohort& val_set, const EpochCallback& on_epoch = {});

}  // namespace tcem
