#pragma once

// External memory bank: gated ring-buffer writes, similarity-weighted reads,
// and the elementwise calibration of a global read by a patient-level read.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcem/primitives.hpp"

namespace tcem {

enum class ScoreMode {
  additive,        // score_l = alpha_l + cos(key, m_l)
  multiplicative,  // score_l = exp(alpha_l) * cos(key, m_l)
};

// Slot state. Rows [0, occupied) hold written content until the ring wraps;
// unoccupied rows stay exactly zero.
struct MemoryBank {
  Matrix slots;
  std::size_t occupied = 0;
  std::size_t cursor = 0;

  MemoryBank() = default;
  MemoryBank(std::size_t slot_count, std::size_t width) : slots(slot_count, width) {}

  std::size_t slot_count() const { return slots.rows(); }
  std::size_t width() const { return slots.cols(); }
  bool is_occupied(std::size_t l) const;
};

// Learnable parameters of one bank. The query (reading) side and the writer
// (input) side may have different widths.
struct MemoryParams {
  ParamTensor key;        // d x query_width
  ParamTensor project;    // d x input_width; the write projection A
  ParamTensor gate_w;     // 2d x (input_width + d); rows [0,d) give r, [d,2d) give v
  ParamTensor gate_b;     // 2d x 1
  ParamTensor strengths;  // L x 1

  MemoryParams() = default;
  MemoryParams(const std::string& prefix, std::size_t slots, std::size_t width,
               std::size_t query_width, std::size_t input_width);

  std::size_t slot_count() const { return strengths.value.rows(); }
  std::size_t width() const { return key.value.rows(); }
  std::size_t query_width() const { return key.value.cols(); }
  std::size_t input_width() const { return project.value.cols(); }
  void init(std::mt19937_64& rng);
  MemoryBank empty_bank() const { return MemoryBank(slot_count(), width()); }
};

struct ReadResult {
  Vec e;
  Vec weights;  // length L, zero on unoccupied slots
};

struct ReadCache {
  Vec query;
  Vec key;
  std::vector<std::size_t> slots;  // occupied slot indices in read order
  Matrix contents;                 // copy of the occupied rows, same order
  Vec cosines;
  Vec weights;                     // over `slots`
};

struct WriteCache {
  std::size_t slot = 0;
  Vec input;
  Vec old_row;
  Vec projected;  // A * input
  Vec r, v;
};

ReadResult memory_read(const MemoryBank& bank, const MemoryParams& p,
                       std::span<const double> query, ScoreMode mode = ScoreMode::additive,
                       ReadCache* cache = nullptr);

// Backprop of e. dslots is dL/d(bank state at read time) and is accumulated.
void memory_read_backward(const MemoryParams& p, const ReadCache& cache, ScoreMode mode,
                          std::span<const double> de, Matrix& dslots, MemoryParams& grads,
                          std::span<double> dquery);

// Gates (r, v) = sigmoid(G [input ; current slot] + b).
void memory_write(MemoryBank& bank, const MemoryParams& p, std::span<const double> input,
                  WriteCache* cache = nullptr);

// New slot content = r .* old + v .* projected at the cursor; cursor advances.
void write_with_gates(MemoryBank& bank, std::span<const double> projected,
                      std::span<const double> r, std::span<const double> v);

// On entry dslots holds dL/d(bank after write); on exit dL/d(bank before write).
void memory_write_backward(const MemoryParams& p, const WriteCache& cache, Matrix& dslots,
                           MemoryParams& grads, std::span<double> dinput);

struct CalibrateCache {
  Vec e_global;
  Vec e_patient;
  Vec gate;  // sigmoid(embed(e_patient))
};

Vec calibrate(std::span<const double> e_global, std::span<const double> e_patient,
              const Matrix& embed_w, std::span<const double> embed_b,
              CalibrateCache* cache = nullptr);

void calibrate_backward(const Matrix& embed_w, const CalibrateCache& cache,
                        std::span<const double> de, Matrix& dembed_w, std::span<double> dembed_b,
                        std::span<double> de_global, std::span<double> de_patient);

}  // namespace tcem
