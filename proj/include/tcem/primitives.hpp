#pragma once

// Differentiable building blocks. Every forward op has a matching backward
// that accumulates (+=) into caller-owned gradient storage.

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "tcem/matrix.hpp"

namespace tcem {

struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

// Fills `t` uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void init_uniform(ParamTensor& t, std::size_t fan_in, std::mt19937_64& rng);

// --- linear -----------------------------------------------------------------

Vec linear_forward(const Matrix& w, std::span<const double> b, std::span<const double> x);
// dW += dy x^T, db += dy, dx += W^T dy. Pass empty spans to skip db / dx.
void linear_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                     Matrix& dw, std::span<double> db, std::span<double> dx);
// W^T y
Vec matvec_transposed(const Matrix& w, std::span<const double> y);

// --- pointwise ----------------------------------------------------------------

double sigmoid(double x);
Vec sigmoid(std::span<const double> x);

Vec softmax(std::span<const double> v);
// Given y = softmax(v) and dL/dy, returns dL/dv.
Vec softmax_backward(std::span<const double> y, std::span<const double> dy);
// dL/dlogits for L = -log softmax(logits)[label], expressed through the probabilities.
Vec softmax_cross_entropy_grad(std::span<const double> probs, std::size_t label);

// Cosine similarity with the zero-vector guard: 0 if either norm < 1e-12.
inline constexpr double kCosineNormFloor = 1e-12;
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// Accumulates dcos * d cos / d a into da and likewise for b.
void cosine_backward(std::span<const double> a, std::span<const double> b, double dcos,
                     std::span<double> da, std::span<double> db);

// --- LSTM cell ----------------------------------------------------------------

// Gate blocks are stacked row-wise in the order input, forget, output, candidate.
struct LstmCellParams {
  ParamTensor w_input;   // 4D x D_in
  ParamTensor w_hidden;  // 4D x D
  ParamTensor bias;      // 4D x 1

  LstmCellParams() = default;
  LstmCellParams(const std::string& prefix, std::size_t input_width, std::size_t hidden_width);

  std::size_t input_width() const { return w_input.value.cols(); }
  std::size_t hidden_width() const { return w_hidden.value.cols(); }
  void init(std::mt19937_64& rng, double forget_bias = 1.0);
};

struct LstmCache {
  Vec x, h_prev, c_prev;
  Vec i, f, o, g;
  Vec c, tanh_c, h;
};

struct LstmGradients {
  Vec dx, dh_prev, dc_prev;
};

// Returns (h, c) through the cache.
LstmCache lstm_cell(const LstmCellParams& p, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev);

LstmGradients lstm_cell_backward(const LstmCellParams& p, const LstmCache& cache,
                                 std::span<const double> dh, std::span<const double> dc,
                                 LstmCellParams& grads);

}  // namespace tcem
