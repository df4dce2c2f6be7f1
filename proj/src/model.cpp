#include "tcem/model.hpp"

#include <algorithm>
#include <cmath>

#include "tcem/errors.hpp"

namespace tcem {

namespace {

template <typename Enum>
struct Names {
  Enum value;
  const char* name;
};

constexpr Names<Mode> kModes[] = {{Mode::supervised, "supervised"},
                                  {Mode::unsupervised, "unsupervised"}};
constexpr Names<ScoreMode> kScores[] = {{ScoreMode::additive, "add"},
                                        {ScoreMode::multiplicative, "mul"}};
constexpr Names<PriorKind> kPriors[] = {{PriorKind::learned, "learned"},
                                        {PriorKind::standard, "standard"}};
constexpr Names<GlobalMemoryPolicy> kPolicies[] = {{GlobalMemoryPolicy::per_patient, "per_patient"},
                                                   {GlobalMemoryPolicy::shared, "shared"}};
constexpr Names<Representation> kReprs[] = {{Representation::mu_and_memory, "mu_e"},
                                            {Representation::mu, "z"}};

template <typename Enum, std::size_t N>
std::string name_of(const Names<Enum> (&table)[N], Enum v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename Enum, std::size_t N>
Enum parse_name(const Names<Enum> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string options;
  for (const auto& e : table) options += (options.empty() ? "" : "|") + std::string(e.name);
  throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected " + options + ")");
}

double clamp_log_sigma(double v) { return std::clamp(v, kLogSigmaMin, kLogSigmaMax); }

Posterior gaussian_head(const ParamTensor& mu_w, const ParamTensor& mu_b,
                        const ParamTensor& ls_w, const ParamTensor& ls_b,
                        std::span<const double> input) {
  Posterior out;
  out.mu = linear_forward(mu_w.value, mu_b.value.flat(), input);
  out.log_sigma_pre = linear_forward(ls_w.value, ls_b.value.flat(), input);
  out.sigma.resize(out.mu.size());
  for (std::size_t i = 0; i < out.sigma.size(); ++i)
    out.sigma[i] = std::exp(clamp_log_sigma(out.log_sigma_pre[i]));
  return out;
}

// dL/d(pre-clamp log sigma) from dL/d(log sigma); zero where the clamp is active.
Vec through_clamp(const Vec& dlog_sigma, const Vec& pre) {
  Vec out(dlog_sigma.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (pre[i] > kLogSigmaMin && pre[i] < kLogSigmaMax) ? dlog_sigma[i] : 0.0;
  return out;
}

}  // namespace

std::string to_string(Mode m) { return name_of(kModes, m); }
std::string to_string(ScoreMode m) { return name_of(kScores, m); }
std::string to_string(PriorKind p) { return name_of(kPriors, p); }
std::string to_string(GlobalMemoryPolicy g) { return name_of(kPolicies, g); }
std::string to_string(Representation r) { return name_of(kReprs, r); }
Mode parse_mode(const std::string& s) { return parse_name(kModes, s, "mode"); }
ScoreMode parse_score_mode(const std::string& s) { return parse_name(kScores, s, "score"); }
PriorKind parse_prior(const std::string& s) { return parse_name(kPriors, s, "prior"); }
GlobalMemoryPolicy parse_global_memory(const std::string& s) {
  return parse_name(kPolicies, s, "global_memory");
}
Representation parse_representation(const std::string& s) {
  return parse_name(kReprs, s, "repr");
}

void ModelConfig::validate() const {
  if (features == 0 || hidden == 0 || latent == 0 || memory_slots == 0 || memory_width == 0)
    throw ConfigError("model sizes (features, hidden, latent, memory_slots, memory_width) must be positive");
  if (supervised() && (labels < 2 || label_dim == 0))
    throw ConfigError("supervised mode needs at least 2 labels and a positive label_dim");
}

TcemParams::TcemParams(const ModelConfig& c) : config(c) {
  c.validate();
  const std::size_t D = c.hidden, F = c.features, Z = c.latent, d = c.memory_width;
  encoder = LstmCellParams("encoder", F, D);
  global_memory = MemoryParams("global_memory", c.memory_slots, d, D, D);
  if (c.supervised()) {
    const std::size_t dp = c.patient_width();
    label_embedding = ParamTensor("label_embedding", c.labels, c.label_dim);
    patient_memory = MemoryParams("patient_memory", c.memory_slots, dp, D, c.label_dim);
    calib_w = ParamTensor("calibrate.w", d, dp);
    calib_b = ParamTensor("calibrate.b", d, 1);
  }
  post_mu_w = ParamTensor("posterior.mu_w", Z, D + F);
  post_mu_b = ParamTensor("posterior.mu_b", Z, 1);
  post_logsig_w = ParamTensor("posterior.logsig_w", Z, D + F);
  post_logsig_b = ParamTensor("posterior.logsig_b", Z, 1);
  if (c.prior == PriorKind::learned) {
    prior_mu_w = ParamTensor("prior.mu_w", Z, D);
    prior_mu_b = ParamTensor("prior.mu_b", Z, 1);
    prior_logsig_w = ParamTensor("prior.logsig_w", Z, D);
    prior_logsig_b = ParamTensor("prior.logsig_b", Z, 1);
  }
  const std::size_t out = c.supervised() ? c.labels : F;
  const std::string head = c.supervised() ? "pred" : "recon";
  head_w = ParamTensor(head + ".w", out, c.head_input_width());
  head_b = ParamTensor(head + ".b", out, 1);
}

std::vector<ParamTensor*> TcemParams::tensors() {
  std::vector<ParamTensor*> t = {&encoder.w_input, &encoder.w_hidden, &encoder.bias,
                                 &global_memory.key, &global_memory.project,
                                 &global_memory.gate_w, &global_memory.gate_b,
                                 &global_memory.strengths};
  if (config.supervised()) {
    t.insert(t.end(), {&label_embedding, &patient_memory.key, &patient_memory.project,
                       &patient_memory.gate_w, &patient_memory.gate_b, &patient_memory.strengths,
                       &calib_w, &calib_b});
  }
  t.insert(t.end(), {&post_mu_w, &post_mu_b, &post_logsig_w, &post_logsig_b});
  if (config.prior == PriorKind::learned)
    t.insert(t.end(), {&prior_mu_w, &prior_mu_b, &prior_logsig_w, &prior_logsig_b});
  t.insert(t.end(), {&head_w, &head_b});
  return t;
}

std::vector<const ParamTensor*> TcemParams::tensors() const {
  auto mut = const_cast<TcemParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

ParamTensor* TcemParams::find(const std::string& name) {
  for (ParamTensor* t : tensors())
    if (t->name == name) return t;
  return nullptr;
}

void TcemParams::zero_grad() {
  for (ParamTensor* t : tensors()) t->zero_grad();
}

std::size_t TcemParams::parameter_count() const {
  std::size_t n = 0;
  for (const ParamTensor* t : tensors()) n += t->size();
  return n;
}

TcemParams TcemParams::gradient_buffer() const {
  TcemParams g = *this;
  g.zero_grad();
  return g;
}

void TcemParams::accumulate_grad(const TcemParams& other) {
  auto mine = tensors();
  auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw DimensionError("accumulate_grad: layouts differ");
  for (std::size_t k = 0; k < mine.size(); ++k) {
    auto dst = mine[k]->grad.flat();
    auto src = theirs[k]->grad.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

TcemParams init_params(const ModelConfig& config, std::uint64_t seed) {
  TcemParams p(config);
  std::mt19937_64 rng(seed);
  const std::size_t D = config.hidden, F = config.features;
  p.encoder.init(rng);
  p.global_memory.init(rng);
  if (config.supervised()) {
    // Embedding rows behave like inputs, so draw them at unit fan-in scale.
    init_uniform(p.label_embedding, 1, rng);
    p.patient_memory.init(rng);
    init_uniform(p.calib_w, config.patient_width(), rng);
    p.calib_b.value.fill(0.0);
  }
  init_uniform(p.post_mu_w, D + F, rng);
  init_uniform(p.post_logsig_w, D + F, rng);
  if (config.prior == PriorKind::learned) {
    init_uniform(p.prior_mu_w, D, rng);
    init_uniform(p.prior_logsig_w, D, rng);
  }
  init_uniform(p.head_w, config.head_input_width(), rng);
  p.zero_grad();
  return p;
}

Posterior posterior_params(std::span<const double> h, std::span<const double> x,
                           const TcemParams& params) {
  const auto& c = params.config;
  if (h.size() != c.hidden || x.size() != c.features) {
    throw DimensionError("posterior: expected h of " + std::to_string(c.hidden) + " and x of " +
                         std::to_string(c.features) + ", got " + std::to_string(h.size()) +
                         " and " + std::to_string(x.size()));
  }
  const Vec input = concat(h, x);
  return gaussian_head(params.post_mu_w, params.post_mu_b, params.post_logsig_w,
                       params.post_logsig_b, input);
}

Posterior prior_params(std::span<const double> h, const TcemParams& params) {
  const auto& c = params.config;
  if (c.prior == PriorKind::standard) {
    return {Vec(c.latent, 0.0), Vec(c.latent, 0.0), Vec(c.latent, 1.0)};
  }
  return gaussian_head(params.prior_mu_w, params.prior_mu_b, params.prior_logsig_w,
                       params.prior_logsig_b, h);
}

Vec reparameterize(std::span<const double> mu, std::span<const double> sigma,
                   std::span<const double> eps) {
  if (sigma.size() != mu.size() || eps.size() != mu.size())
    throw DimensionError("reparameterize: mu, sigma, eps lengths differ");
  Vec z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + sigma[i] * eps[i];
  return z;
}

double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q,
                   std::span<const double> mu_p, std::span<const double> sigma_p) {
  const std::size_t n = mu_q.size();
  if (sigma_q.size() != n || mu_p.size() != n || sigma_p.size() != n)
    throw DimensionError("gaussian_kl: parameter lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigma_q[i] > 0.0) || !(sigma_p[i] > 0.0))
      throw ArgumentError("gaussian_kl: standard deviations must be positive");
    const double diff = mu_q[i] - mu_p[i];
    const double vp = sigma_p[i] * sigma_p[i];
    kl += std::log(sigma_p[i] / sigma_q[i]) + (sigma_q[i] * sigma_q[i] + diff * diff) / (2.0 * vp) - 0.5;
  }
  return kl;
}

ForwardTrace forward_sequence(const TcemParams& params, const PatientSequence& seq,
                              const ForwardOptions& options) {
  const ModelConfig& c = params.config;
  if (seq.visits() == 0) throw DataError("patient " + seq.id + " has no visits");
  if (seq.features() != c.features)
    throw DimensionError("patient " + seq.id + " has " + std::to_string(seq.features()) +
                         " features, model expects " + std::to_string(c.features));
  const bool supervised = c.supervised();
  if (supervised) {
    if (seq.labels.size() != seq.visits())
      throw DataError("patient " + seq.id + " has no labels (supervised mode)");
    for (std::size_t t = 0; t < seq.visits(); ++t) {
      if (seq.labels[t] == kMissingLabel)
        throw DataError("patient " + seq.id + " is missing a label at visit " + std::to_string(t));
      if (seq.labels[t] < 0 || static_cast<std::size_t>(seq.labels[t]) >= c.labels)
        throw DataError("patient " + seq.id + " visit " + std::to_string(t) + ": label " +
                        std::to_string(seq.labels[t]) + " out of range");
    }
  }

  ForwardTrace trace;
  trace.patient_id = seq.id;
  trace.mode = c.mode;
  trace.steps.resize(seq.visits());

  MemoryBank local_global = params.global_memory.empty_bank();
  MemoryBank& global_bank = options.global_bank != nullptr ? *options.global_bank : local_global;
  MemoryBank patient_bank;
  if (supervised) patient_bank = params.patient_memory.empty_bank();

  std::mt19937_64 rng(options.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Vec h(c.hidden, 0.0), cell(c.hidden, 0.0);
  for (std::size_t t = 0; t < seq.visits(); ++t) {
    ForwardStep& s = trace.steps[t];
    auto xs = seq.values.row(t);
    s.x.assign(xs.begin(), xs.end());
    s.observed.assign(seq.observed.begin() + static_cast<std::ptrdiff_t>(t * c.features),
                      seq.observed.begin() + static_cast<std::ptrdiff_t>((t + 1) * c.features));
    if (supervised) s.label = seq.labels[t];

    s.lstm = lstm_cell(params.encoder, s.x, h, cell);
    h = s.lstm.h;
    cell = s.lstm.c;

    s.e_global = memory_read(global_bank, params.global_memory, h, c.score, &s.global_read).e;
    if (supervised) {
      s.e_patient = memory_read(patient_bank, params.patient_memory, h, c.score, &s.patient_read).e;
      s.e = calibrate(s.e_global, s.e_patient, params.calib_w.value, params.calib_b.value.flat(),
                      &s.calib);
    } else {
      s.e = s.e_global;
    }

    s.posterior = posterior_params(h, s.x, params);
    s.prior = prior_params(h, params);
    s.eps.assign(c.latent, 0.0);
    if (options.sample)
      for (double& v : s.eps) v = normal(rng);
    s.z = reparameterize(s.posterior.mu, s.posterior.sigma, s.eps);

    s.head_in = concat(s.z, s.e);
    Vec head = linear_forward(params.head_w.value, params.head_b.value.flat(), s.head_in);
    s.output = supervised ? softmax(head) : std::move(head);

    // Outputs for step t are final; now record this visit in memory.
    memory_write(global_bank, params.global_memory, h, &s.global_write);
    if (supervised) {
      auto emb = params.label_embedding.value.row(static_cast<std::size_t>(s.label));
      memory_write(patient_bank, params.patient_memory, emb, &s.patient_write);
    }
  }
  return trace;
}

SequenceLoss sequence_loss(const ForwardTrace& trace) {
  SequenceLoss loss;
  for (const ForwardStep& s : trace.steps) {
    loss.kl_sum += gaussian_kl(s.posterior.mu, s.posterior.sigma, s.prior.mu, s.prior.sigma);
    ++loss.visits;
    if (trace.mode == Mode::supervised) {
      const double p = s.output[static_cast<std::size_t>(s.label)];
      loss.task_sum += -std::log(std::max(p, kProbabilityFloor));
    } else {
      for (std::size_t f = 0; f < s.x.size(); ++f) {
        if (!s.observed[f]) continue;
        const double diff = s.output[f] - s.x[f];
        loss.task_sum += diff * diff;
        ++loss.observed;
      }
    }
  }
  return loss;
}

double weighted_loss(const SequenceLoss& loss, const LossWeights& w) {
  return w.kl_per_visit * loss.kl_sum + w.task_scale * loss.task_sum;
}

void backward(const TcemParams& params, ForwardTrace& trace, const LossWeights& weights,
              TcemParams& grads) {
  if (trace.backward_done)
    throw StateError("backward already ran on the trace of patient " + trace.patient_id +
                     "; re-run forward first");
  trace.backward_done = true;

  const ModelConfig& c = params.config;
  const bool supervised = c.supervised();
  const std::size_t D = c.hidden, Z = c.latent, d = c.memory_width;

  Matrix dglobal(c.memory_slots, d);
  Matrix dpatient;
  if (supervised) dpatient = Matrix(c.memory_slots, c.patient_width());
  Vec dh_next(D, 0.0), dc_next(D, 0.0);

  for (std::size_t ti = trace.steps.size(); ti-- > 0;) {
    const ForwardStep& s = trace.steps[ti];
    Vec dh(D, 0.0);

    // Writes happened last, so they are undone first.
    if (supervised) {
      Vec demb(c.label_dim, 0.0);
      memory_write_backward(params.patient_memory, s.patient_write, dpatient, grads.patient_memory,
                            demb);
      auto row = grads.label_embedding.grad.row(static_cast<std::size_t>(s.label));
      for (std::size_t j = 0; j < demb.size(); ++j) row[j] += demb[j];
    }
    memory_write_backward(params.global_memory, s.global_write, dglobal, grads.global_memory, dh);

    // Task head.
    Vec dhead(s.output.size(), 0.0);
    if (supervised) {
      const auto label = static_cast<std::size_t>(s.label);
      if (s.output[label] >= kProbabilityFloor) {
        dhead = softmax_cross_entropy_grad(s.output, label);
        for (double& v : dhead) v *= weights.task_scale;
      }
    } else {
      for (std::size_t f = 0; f < s.x.size(); ++f)
        if (s.observed[f]) dhead[f] = weights.task_scale * 2.0 * (s.output[f] - s.x[f]);
    }
    Vec dhead_in(s.head_in.size(), 0.0);
    linear_backward(params.head_w.value, s.head_in, dhead, grads.head_w.grad,
                    grads.head_b.grad.flat(), dhead_in);

    // KL(q || p) in terms of (mu, log sigma).
    Vec dmu_q(Z), dls_q(Z), dmu_p(Z), dls_p(Z);
    for (std::size_t i = 0; i < Z; ++i) {
      const double sq = s.posterior.sigma[i], sp = s.prior.sigma[i];
      const double diff = s.posterior.mu[i] - s.prior.mu[i];
      const double vp = sp * sp;
      dmu_q[i] = weights.kl_per_visit * diff / vp;
      dmu_p[i] = -dmu_q[i];
      dls_q[i] = weights.kl_per_visit * (-1.0 + sq * sq / vp);
      dls_p[i] = weights.kl_per_visit * (1.0 - (sq * sq + diff * diff) / vp);
    }
    // z = mu + sigma * eps
    for (std::size_t i = 0; i < Z; ++i) {
      const double dz = dhead_in[i];
      dmu_q[i] += dz;
      dls_q[i] += dz * s.eps[i] * s.posterior.sigma[i];
    }

    const Vec post_in = concat(s.lstm.h, s.x);
    Vec dpost_in(post_in.size(), 0.0);
    linear_backward(params.post_mu_w.value, post_in, dmu_q, grads.post_mu_w.grad,
                    grads.post_mu_b.grad.flat(), dpost_in);
    linear_backward(params.post_logsig_w.value, post_in,
                    through_clamp(dls_q, s.posterior.log_sigma_pre), grads.post_logsig_w.grad,
                    grads.post_logsig_b.grad.flat(), dpost_in);
    for (std::size_t j = 0; j < D; ++j) dh[j] += dpost_in[j];

    if (c.prior == PriorKind::learned) {
      linear_backward(params.prior_mu_w.value, s.lstm.h, dmu_p, grads.prior_mu_w.grad,
                      grads.prior_mu_b.grad.flat(), dh);
      linear_backward(params.prior_logsig_w.value, s.lstm.h,
                      through_clamp(dls_p, s.prior.log_sigma_pre), grads.prior_logsig_w.grad,
                      grads.prior_logsig_b.grad.flat(), dh);
    }

    // Memory reads.
    std::span<const double> de(dhead_in.data() + Z, d);
    if (supervised) {
      Vec de_global(d, 0.0), de_patient(c.patient_width(), 0.0);
      calibrate_backward(params.calib_w.value, s.calib, de, grads.calib_w.grad,
                         grads.calib_b.grad.flat(), de_global, de_patient);
      memory_read_backward(params.patient_memory, s.patient_read, c.score, de_patient, dpatient,
                           grads.patient_memory, dh);
      memory_read_backward(params.global_memory, s.global_read, c.score, de_global, dglobal,
                           grads.global_memory, dh);
    } else {
      memory_read_backward(params.global_memory, s.global_read, c.score, de, dglobal,
                           grads.global_memory, dh);
    }

    for (std::size_t j = 0; j < D; ++j) dh[j] += dh_next[j];
    LstmGradients lg = lstm_cell_backward(params.encoder, s.lstm, dh, dc_next, grads.encoder);
    dh_next = std::move(lg.dh_prev);
    dc_next = std::move(lg.dc_prev);
  }
}

Matrix representation_for_clustering(const ForwardTrace& trace, Representation repr) {
  if (trace.steps.empty()) return {};
  const std::size_t z = trace.steps.front().posterior.mu.size();
  const std::size_t e = repr == Representation::mu ? 0 : trace.steps.front().e.size();
  Matrix out(trace.steps.size(), z + e);
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    auto row = out.row(t);
    const ForwardStep& s = trace.steps[t];
    std::copy(s.posterior.mu.begin(), s.posterior.mu.end(), row.begin());
    if (e > 0) std::copy(s.e.begin(), s.e.end(), row.begin() + static_cast<std::ptrdiff_t>(z));
  }
  return out;
}

}  // namespace tcem
