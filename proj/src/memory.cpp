#include "tcem/memory.hpp"

#include <cmath>

#include "tcem/errors.hpp"

namespace tcem {

namespace {

void check_len(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(n) +
                         ", got " + std::to_string(v.size()));
  }
}

double score_of(double strength, double cosine, ScoreMode mode) {
  return mode == ScoreMode::additive ? strength + cosine : std::exp(strength) * cosine;
}

}  // namespace

bool MemoryBank::is_occupied(std::size_t l) const {
  // Writes fill slots 0,1,2,... in order, so the occupied set is a prefix.
  return l < occupied;
}

MemoryParams::MemoryParams(const std::string& prefix, std::size_t slots, std::size_t width,
                           std::size_t query_width, std::size_t input_width)
    : key(prefix + ".key", width, query_width),
      project(prefix + ".project", width, input_width),
      gate_w(prefix + ".gate_w", 2 * width, input_width + width),
      gate_b(prefix + ".gate_b", 2 * width, 1),
      strengths(prefix + ".strengths", slots, 1) {}

void MemoryParams::init(std::mt19937_64& rng) {
  init_uniform(key, query_width(), rng);
  init_uniform(project, input_width(), rng);
  init_uniform(gate_w, input_width() + width(), rng);
  gate_b.value.fill(0.0);
  gate_b.zero_grad();
  strengths.value.fill(0.0);
  strengths.zero_grad();
}

ReadResult memory_read(const MemoryBank& bank, const MemoryParams& p,
                       std::span<const double> query, ScoreMode mode, ReadCache* cache) {
  check_len(query, p.query_width(), "memory_read query");
  if (bank.width() != p.width() || bank.slot_count() != p.slot_count()) {
    throw DimensionError("memory_read: bank " + bank.slots.shape_str() +
                         " does not match parameters with L=" + std::to_string(p.slot_count()) +
                         ", d=" + std::to_string(p.width()));
  }
  const std::size_t d = p.width();
  const std::size_t n = bank.occupied;

  ReadResult out;
  out.e.assign(d, 0.0);
  out.weights.assign(bank.slot_count(), 0.0);

  Vec key(d, 0.0);
  Vec cosines(n), weights;
  if (n > 0) {
    const Vec zero_bias(d, 0.0);
    key = linear_forward(p.key.value, zero_bias, query);
    Vec scores(n);
    for (std::size_t l = 0; l < n; ++l) {
      cosines[l] = cosine_similarity(key, bank.slots.row(l));
      scores[l] = score_of(p.strengths.value[l], cosines[l], mode);
    }
    weights = softmax(scores);
    for (std::size_t l = 0; l < n; ++l) {
      out.weights[l] = weights[l];
      axpy(weights[l], bank.slots.row(l), out.e);
    }
  }

  if (cache != nullptr) {
    cache->query.assign(query.begin(), query.end());
    cache->key = key;
    cache->slots.resize(n);
    cache->contents = Matrix(n, d);
    for (std::size_t l = 0; l < n; ++l) {
      cache->slots[l] = l;
      auto src = bank.slots.row(l);
      std::copy(src.begin(), src.end(), cache->contents.row(l).begin());
    }
    cache->cosines = cosines;
    cache->weights = weights;
  }
  return out;
}

void memory_read_backward(const MemoryParams& p, const ReadCache& cache, ScoreMode mode,
                          std::span<const double> de, Matrix& dslots, MemoryParams& grads,
                          std::span<double> dquery) {
  const std::size_t n = cache.slots.size();
  if (n == 0) return;
  const std::size_t d = p.width();
  check_len(de, d, "memory_read_backward de");

  // e = sum_l w_l m_l
  Vec dw(n);
  for (std::size_t l = 0; l < n; ++l) {
    dw[l] = dot(de, cache.contents.row(l));
    axpy(cache.weights[l], de, dslots.row(cache.slots[l]));
  }
  const Vec dscore = softmax_backward(cache.weights, dw);

  Vec dkey(d, 0.0);
  for (std::size_t l = 0; l < n; ++l) {
    const std::size_t slot = cache.slots[l];
    double dcos = 0.0;
    if (mode == ScoreMode::additive) {
      grads.strengths.grad[slot] += dscore[l];
      dcos = dscore[l];
    } else {
      const double s = std::exp(p.strengths.value[slot]);
      grads.strengths.grad[slot] += dscore[l] * s * cache.cosines[l];
      dcos = dscore[l] * s;
    }
    cosine_backward(cache.key, cache.contents.row(l), dcos, dkey, dslots.row(slot));
  }
  linear_backward(p.key.value, cache.query, dkey, grads.key.grad, {}, dquery);
}

void write_with_gates(MemoryBank& bank, std::span<const double> projected,
                      std::span<const double> r, std::span<const double> v) {
  const std::size_t d = bank.width();
  check_len(projected, d, "write projected");
  check_len(r, d, "write gate r");
  check_len(v, d, "write gate v");
  auto row = bank.slots.row(bank.cursor);
  for (std::size_t j = 0; j < d; ++j) row[j] = r[j] * row[j] + v[j] * projected[j];
  bank.cursor = (bank.cursor + 1) % bank.slot_count();
  if (bank.occupied < bank.slot_count()) ++bank.occupied;
}

void memory_write(MemoryBank& bank, const MemoryParams& p, std::span<const double> input,
                  WriteCache* cache) {
  check_len(input, p.input_width(), "memory_write input");
  const std::size_t d = p.width();
  const std::size_t slot = bank.cursor;
  const auto old_span = bank.slots.row(slot);
  Vec old_row(old_span.begin(), old_span.end());

  const Vec zero_bias(d, 0.0);
  Vec projected = linear_forward(p.project.value, zero_bias, input);
  const Vec gate_in = concat(input, old_row);
  const Vec gates = sigmoid(linear_forward(p.gate_w.value, p.gate_b.value.flat(), gate_in));
  Vec r(gates.begin(), gates.begin() + static_cast<std::ptrdiff_t>(d));
  Vec v(gates.begin() + static_cast<std::ptrdiff_t>(d), gates.end());

  write_with_gates(bank, projected, r, v);

  if (cache != nullptr) {
    cache->slot = slot;
    cache->input.assign(input.begin(), input.end());
    cache->old_row = std::move(old_row);
    cache->projected = std::move(projected);
    cache->r = std::move(r);
    cache->v = std::move(v);
  }
}

void memory_write_backward(const MemoryParams& p, const WriteCache& cache, Matrix& dslots,
                           MemoryParams& grads, std::span<double> dinput) {
  const std::size_t d = p.width();
  auto dnew = dslots.row(cache.slot);

  Vec dgate_pre(2 * d);
  Vec dprojected(d);
  Vec dold(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double dr = dnew[j] * cache.old_row[j];
    const double dv = dnew[j] * cache.projected[j];
    dgate_pre[j] = dr * cache.r[j] * (1.0 - cache.r[j]);
    dgate_pre[d + j] = dv * cache.v[j] * (1.0 - cache.v[j]);
    dprojected[j] = dnew[j] * cache.v[j];
    dold[j] = dnew[j] * cache.r[j];
  }

  const Vec gate_in = concat(cache.input, cache.old_row);
  Vec dgate_in(gate_in.size(), 0.0);
  linear_backward(p.gate_w.value, gate_in, dgate_pre, grads.gate_w.grad, grads.gate_b.grad.flat(),
                  dgate_in);
  const std::size_t in_w = p.input_width();
  for (std::size_t j = 0; j < d; ++j) dold[j] += dgate_in[in_w + j];
  if (!dinput.empty()) {
    for (std::size_t j = 0; j < in_w; ++j) dinput[j] += dgate_in[j];
  }
  linear_backward(p.project.value, cache.input, dprojected, grads.project.grad, {}, dinput);

  // The slot's pre-write value only reaches the future through this write.
  std::copy(dold.begin(), dold.end(), dnew.begin());
}

Vec calibrate(std::span<const double> e_global, std::span<const double> e_patient,
              const Matrix& embed_w, std::span<const double> embed_b, CalibrateCache* cache) {
  if (embed_w.cols() != e_patient.size() || embed_w.rows() != e_global.size()) {
    throw DimensionError("calibrate: embed " + embed_w.shape_str() + " cannot map patient read of " +
                         std::to_string(e_patient.size()) + " onto global read of " +
                         std::to_string(e_global.size()));
  }
  Vec gate = sigmoid(linear_forward(embed_w, embed_b, e_patient));
  Vec out = hadamard(e_global, gate);
  if (cache != nullptr) {
    cache->e_global.assign(e_global.begin(), e_global.end());
    cache->e_patient.assign(e_patient.begin(), e_patient.end());
    cache->gate = std::move(gate);
  }
  return out;
}

void calibrate_backward(const Matrix& embed_w, const CalibrateCache& cache,
                        std::span<const double> de, Matrix& dembed_w, std::span<double> dembed_b,
                        std::span<double> de_global, std::span<double> de_patient) {
  const std::size_t d = cache.e_global.size();
  check_len(de, d, "calibrate_backward de");
  Vec dpre(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (!de_global.empty()) de_global[j] += de[j] * cache.gate[j];
    const double dgate = de[j] * cache.e_global[j];
    dpre[j] = dgate * cache.gate[j] * (1.0 - cache.gate[j]);
  }
  linear_backward(embed_w, cache.e_patient, dpre, dembed_w, dembed_b, de_patient);
}

}  // namespace tcem
