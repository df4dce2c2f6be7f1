#include "tcem/batch.hpp"

#include <exception>
#include <memory>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tcem/errors.hpp"

namespace tcem {

namespace {

struct BatchTotals {
  std::size_t patients = 0;
  std::size_t visits = 0;
  std::size_t observed = 0;
};

BatchTotals totals_of(std::span<const PatientSequence* const> batch, Mode mode) {
  BatchTotals t;
  t.patients = batch.size();
  for (const PatientSequence* p : batch) {
    t.visits += p->visits();
    t.observed += p->observed_count();
  }
  if (t.patients == 0) throw ArgumentError("empty batch");
  if (mode == Mode::unsupervised && t.observed == 0)
    throw DataError("batch has no observed entries to reconstruct");
  return t;
}

double task_scale(const BatchTotals& t, Mode mode) {
  return mode == Mode::supervised ? 1.0 / static_cast<double>(t.visits)
                                  : 1.0 / static_cast<double>(t.observed);
}

LossWeights weights_for(const PatientSequence& p, const BatchTotals& t, Mode mode, double kl_weight) {
  return {kl_weight / (static_cast<double>(t.patients) * static_cast<double>(p.visits())),
          task_scale(t, mode)};
}

// Adds one patient's contribution in a fixed order so serial and parallel
// kernels produce identical sums.
void add_to_breakdown(LossBreakdown& acc, const SequenceLoss& s, const BatchTotals& t, Mode mode) {
  acc.kl_term += s.kl_sum / static_cast<double>(s.visits) / static_cast<double>(t.patients);
  acc.task_term += s.task_sum * task_scale(t, mode);
}

void finish(LossBreakdown& acc, double kl_weight) {
  acc.kl_weight = kl_weight;
  acc.total = kl_weight * acc.kl_term + acc.task_term;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t patient_noise_seed(std::uint64_t batch_seed, std::size_t position) {
  return mix_seed(batch_seed, position);
}

std::vector<const PatientSequence*> pointers(std::span<const PatientSequence> patients) {
  std::vector<const PatientSequence*> out;
  out.reserve(patients.size());
  for (const auto& p : patients) out.push_back(&p);
  return out;
}

LossBreakdown batch_loss(const TcemParams& params, std::span<const PatientSequence* const> batch,
                         const BatchOptions& options) {
  const Mode mode = params.config.mode;
  const BatchTotals totals = totals_of(batch, mode);
  std::optional<MemoryBank> shared;
  if (params.config.global_memory == GlobalMemoryPolicy::shared)
    shared = params.global_memory.empty_bank();

  LossBreakdown acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardOptions fo{options.sample, patient_noise_seed(options.noise_seed, i),
                      shared ? &*shared : nullptr};
    const ForwardTrace trace = forward_sequence(params, *batch[i], fo);
    add_to_breakdown(acc, sequence_loss(trace), totals, mode);
  }
  finish(acc, options.kl_weight);
  return acc;
}

LossBreakdown batch_gradients_serial(const TcemParams& params,
                                     std::span<const PatientSequence* const> batch,
                                     const BatchOptions& options, TcemParams& grads) {
  const Mode mode = params.config.mode;
  const BatchTotals totals = totals_of(batch, mode);
  std::optional<MemoryBank> shared;
  if (params.config.global_memory == GlobalMemoryPolicy::shared)
    shared = params.global_memory.empty_bank();

  TcemParams buffer = params.gradient_buffer();
  LossBreakdown acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardOptions fo{options.sample, patient_noise_seed(options.noise_seed, i),
                      shared ? &*shared : nullptr};
    ForwardTrace trace = forward_sequence(params, *batch[i], fo);
    add_to_breakdown(acc, sequence_loss(trace), totals, mode);
    buffer.zero_grad();
    backward(params, trace, weights_for(*batch[i], totals, mode, options.kl_weight), buffer);
    grads.accumulate_grad(buffer);
  }
  finish(acc, options.kl_weight);
  return acc;
}

LossBreakdown batch_gradients_parallel(const TcemParams& params,
                                       std::span<const PatientSequence* const> batch,
                                       const BatchOptions& options, TcemParams& grads,
                                       int workers) {
  if (workers <= 1 || params.config.global_memory == GlobalMemoryPolicy::shared)
    return batch_gradients_serial(params, batch, options, grads);

  const Mode mode = params.config.mode;
  const BatchTotals totals = totals_of(batch, mode);
  const auto wave = static_cast<std::size_t>(workers);
  std::vector<TcemParams> buffers(std::min(wave, batch.size()), params.gradient_buffer());
  std::vector<SequenceLoss> losses(buffers.size());
  std::vector<std::exception_ptr> errors(buffers.size());

  LossBreakdown acc;
  for (std::size_t start = 0; start < batch.size(); start += wave) {
    const auto count = static_cast<long>(std::min(wave, batch.size() - start));
#pragma omp parallel for num_threads(workers) schedule(static)
    for (long k = 0; k < count; ++k) {
      const auto slot = static_cast<std::size_t>(k);
      const std::size_t i = start + slot;
      try {
        ForwardOptions fo{options.sample, patient_noise_seed(options.noise_seed, i), nullptr};
        ForwardTrace trace = forward_sequence(params, *batch[i], fo);
        losses[slot] = sequence_loss(trace);
        buffers[slot].zero_grad();
        backward(params, trace, weights_for(*batch[i], totals, mode, options.kl_weight),
                 buffers[slot]);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    }
    for (std::size_t slot = 0; slot < static_cast<std::size_t>(count); ++slot) {
      if (errors[slot]) std::rethrow_exception(errors[slot]);
      add_to_breakdown(acc, losses[slot], totals, mode);
      grads.accumulate_grad(buffers[slot]);
    }
  }
  finish(acc, options.kl_weight);
  return acc;
}

Matrix encode_cohort(const TcemParams& params, std::span<const PatientSequence> patients,
                     Representation repr, int workers) {
  std::vector<Matrix> parts(patients.size());
  if (params.config.global_memory == GlobalMemoryPolicy::shared) {
    MemoryBank bank = params.global_memory.empty_bank();
    for (std::size_t i = 0; i < patients.size(); ++i)
      parts[i] = representation_for_clustering(
          forward_sequence(params, patients[i], {false, 0, &bank}), repr);
  } else {
    std::vector<std::exception_ptr> errors(patients.size());
    const auto n = static_cast<long>(patients.size());
#pragma omp parallel for num_threads(workers > 0 ? workers : 1) schedule(dynamic)
    for (long k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(k);
      try {
        parts[i] = representation_for_clustering(
            forward_sequence(params, patients[i], {false, 0, nullptr}), repr);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::size_t rows = 0, cols = 0;
  for (const auto& m : parts) {
    rows += m.rows();
    cols = m.cols();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const auto& m : parts)
    for (std::size_t i = 0; i < m.rows(); ++i, ++r)
      std::copy(m.row(i).begin(), m.row(i).end(), out.row(r).begin());
  return out;
}

}  // namespace tcem
