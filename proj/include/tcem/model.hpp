#pragma once

// The per-sequence forward pass: LSTM encoder, global memory read,
// (supervised) patient-level label memory with calibration, posterior/prior
// heads, reparameterized latent, and a prediction or reconstruction head.
// Memory writes happen after the step's outputs are produced.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcem/data.hpp"
#include "tcem/memory.hpp"
#include "tcem/primitives.hpp"

namespace tcem {

enum class Mode { supervised, unsupervised };
enum class PriorKind { learned, standard };
enum class GlobalMemoryPolicy { per_patient, shared };
enum class Representation { mu_and_memory, mu };

inline constexpr double kLogSigmaMin = -8.0;
inline constexpr double kLogSigmaMax = 8.0;
inline constexpr double kProbabilityFloor = 1e-12;

std::string to_string(Mode m);
std::string to_string(ScoreMode m);
std::string to_string(PriorKind p);
std::string to_string(GlobalMemoryPolicy g);
std::string to_string(Representation r);
Mode parse_mode(const std::string& s);
ScoreMode parse_score_mode(const std::string& s);
PriorKind parse_prior(const std::string& s);
GlobalMemoryPolicy parse_global_memory(const std::string& s);
Representation parse_representation(const std::string& s);

struct ModelConfig {
  Mode mode = Mode::unsupervised;
  std::size_t features = 0;
  std::size_t labels = 0;  // class count; supervised only
  std::size_t hidden = 128;
  std::size_t latent = 128;
  std::size_t memory_slots = 10;
  std::size_t memory_width = 128;
  std::size_t label_dim = 16;
  std::size_t patient_memory_width = 0;  // 0: same as memory_width
  ScoreMode score = ScoreMode::additive;
  PriorKind prior = PriorKind::learned;
  GlobalMemoryPolicy global_memory = GlobalMemoryPolicy::per_patient;

  std::size_t patient_width() const {
    return patient_memory_width == 0 ? memory_width : patient_memory_width;
  }
  bool supervised() const { return mode == Mode::supervised; }
  std::size_t head_input_width() const { return latent + memory_width; }
  void validate() const;
};

struct TcemParams {
  ModelConfig config;
  LstmCellParams encoder;
  MemoryParams global_memory;
  // supervised only
  ParamTensor label_embedding;  // labels x label_dim
  MemoryParams patient_memory;
  ParamTensor calib_w;  // d x d_p
  ParamTensor calib_b;  // d x 1
  // posterior over [h ; x]
  ParamTensor post_mu_w, post_mu_b, post_logsig_w, post_logsig_b;
  // learned prior over h
  ParamTensor prior_mu_w, prior_mu_b, prior_logsig_w, prior_logsig_b;
  // prediction (labels rows) or reconstruction (features rows) over [z ; e]
  ParamTensor head_w, head_b;

  TcemParams() = default;
  explicit TcemParams(const ModelConfig& config);

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
  ParamTensor* find(const std::string& name);
  void zero_grad();
  std::size_t parameter_count() const;
  // Same layout with zeroed gradients, for per-worker accumulation.
  TcemParams gradient_buffer() const;
  // grad += other.grad, tensor by tensor in canonical order.
  void accumulate_grad(const TcemParams& other);
};

// Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias +1.
TcemParams init_params(const ModelConfig& config, std::uint64_t seed);

// --- per-step operations ------------------------------------------------------

struct Posterior {
  Vec mu;
  Vec log_sigma_pre;  // before clamping
  Vec sigma;
};

Posterior posterior_params(std::span<const double> h, std::span<const double> x,
                           const TcemParams& params);
Posterior prior_params(std::span<const double> h, const TcemParams& params);

Vec reparameterize(std::span<const double> mu, std::span<const double> sigma,
                   std::span<const double> eps);

double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q,
                   std::span<const double> mu_p, std::span<const double> sigma_p);

// --- sequence forward / backward ------------------------------------------------

struct ForwardStep {
  Vec x;
  std::vector<std::uint8_t> observed;
  int label = kMissingLabel;

  LstmCache lstm;
  ReadCache global_read;
  Vec e_global;
  ReadCache patient_read;
  Vec e_patient;
  CalibrateCache calib;
  Vec e;  // memory read fed to the head (calibrated when supervised)

  Posterior posterior;
  Posterior prior;
  Vec eps;
  Vec z;
  Vec head_in;
  Vec output;  // class probabilities or reconstruction

  WriteCache global_write;
  WriteCache patient_write;
};

struct ForwardTrace {
  std::string patient_id;
  Mode mode = Mode::unsupervised;
  std::vector<ForwardStep> steps;
  bool backward_done = false;

  std::size_t length() const { return steps.size(); }
};

struct ForwardOptions {
  bool sample = true;  // false: eps = 0, z = mu
  std::uint64_t noise_seed = 0;
  // Shared-policy global bank, carried across sequences. Read/written in place.
  MemoryBank* global_bank = nullptr;
};

ForwardTrace forward_sequence(const TcemParams& params, const PatientSequence& seq,
                              const ForwardOptions& options = {});

struct SequenceLoss {
  double kl_sum = 0.0;    // sum over visits
  double task_sum = 0.0;  // CE summed over visits, or SSE over observed entries
  std::size_t visits = 0;
  std::size_t observed = 0;
};

SequenceLoss sequence_loss(const ForwardTrace& trace);

// Loss seen by backward: kl_per_visit * kl_sum + task_scale * task_sum.
struct LossWeights {
  double kl_per_visit = 0.0;
  double task_scale = 0.0;
};

double weighted_loss(const SequenceLoss& loss, const LossWeights& w);

// Reverse pass through time over the trace; accumulates into grads.*.grad.
// A trace can be consumed once.
void backward(const TcemParams& params, ForwardTrace& trace, const LossWeights& weights,
              TcemParams& grads);

// Per-visit vectors for k-means: mu (+) e by default, mu alone for Representation::mu.
Matrix representation_for_clustering(const ForwardTrace& trace,
                                     Representation repr = Representation::mu_and_memory);

}  // namespace tcem
