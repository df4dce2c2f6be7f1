#pragma once

// Mini-batch loss and gradient kernels. The serial versions are the
// reference; the OpenMP versions must agree with them bit for bit, which is
// why both accumulate per-patient gradient buffers in patient order.

#include <cstdint>
#include <span>
#include <vector>

#include "tcem/model.hpp"

namespace tcem {

// total == kl_weight * kl_term + task_term.
struct LossBreakdown {
  double total = 0.0;
  double kl_term = 0.0;    // KL averaged per visit, then per patient
  double task_term = 0.0;  // cross-entropy per visit or MSE per observed entry
  double kl_weight = 0.0;
};

struct BatchOptions {
  double kl_weight = 1.0;
  std::uint64_t noise_seed = 0;
  bool sample = true;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t patient_noise_seed(std::uint64_t batch_seed, std::size_t position);

// Forward only.
LossBreakdown batch_loss(const TcemParams& params, std::span<const PatientSequence* const> batch,
                         const BatchOptions& options);

// Forward + backward. Gradients of the batch total are added to grads.*.grad.
LossBreakdown batch_gradients_serial(const TcemParams& params,
                                     std::span<const PatientSequence* const> batch,
                                     const BatchOptions& options, TcemParams& grads);

// Patients are processed in waves of `workers` OpenMP threads; falls back to
// the serial kernel for the shared global-memory policy.
LossBreakdown batch_gradients_parallel(const TcemParams& params,
                                       std::span<const PatientSequence* const> batch,
                                       const BatchOptions& options, TcemParams& grads,
                                       int workers);

// Deterministic posterior-mean representations for every visit of every
// patient, stacked in patient order. Parallel over patients.
Matrix encode_cohort(const TcemParams& params, std::span<const PatientSequence> patients,
                     Representation repr, int workers = 1);

std::vector<const PatientSequence*> pointers(std::span<const PatientSequence> patients);

}  // namespace tcem
