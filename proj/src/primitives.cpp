#include "tcem/primitives.hpp"

#include <algorithm>
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

}  // namespace

void init_uniform(ParamTensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.value.flat()) v = dist(rng);
  t.zero_grad();
}

Vec linear_forward(const Matrix& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw DimensionError("linear: W " + w.shape_str() + " with b of length " +
                         std::to_string(b.size()) + " and x of length " +
                         std::to_string(x.size()));
  }
  Vec y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = w.row(r);
    double s = b[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

void linear_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                     Matrix& dw, std::span<double> db, std::span<double> dx) {
  if (w.cols() != x.size() || w.rows() != dy.size() || !w.same_shape(dw)) {
    throw DimensionError("linear_backward: W " + w.shape_str() + ", dW " + dw.shape_str() +
                         ", x " + std::to_string(x.size()) + ", dy " +
                         std::to_string(dy.size()));
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double d = dy[r];
    if (d == 0.0) continue;
    auto drow = dw.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) drow[c] += d * x[c];
  }
  if (!db.empty()) {
    check_len(db, dy.size(), "linear_backward db");
    for (std::size_t r = 0; r < dy.size(); ++r) db[r] += dy[r];
  }
  if (!dx.empty()) {
    check_len(dx, x.size(), "linear_backward dx");
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const double d = dy[r];
      if (d == 0.0) continue;
      auto row = w.row(r);
      for (std::size_t c = 0; c < x.size(); ++c) dx[c] += row[c] * d;
    }
  }
}

Vec matvec_transposed(const Matrix& w, std::span<const double> y) {
  check_len(y, w.rows(), "matvec_transposed");
  Vec out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += row[c] * y[r];
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec sigmoid(std::span<const double> x) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Vec softmax(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

Vec softmax_backward(std::span<const double> y, std::span<const double> dy) {
  check_len(dy, y.size(), "softmax_backward");
  double inner = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * dy[i];
  Vec dv(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dv[i] = y[i] * (dy[i] - inner);
  return dv;
}

Vec softmax_cross_entropy_grad(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw DataError("label " + std::to_string(label) + " out of range for " +
                    std::to_string(probs.size()) + " classes");
  }
  Vec g(probs.begin(), probs.end());
  g[label] -= 1.0;
  return g;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  check_len(b, a.size(), "cosine_similarity");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < kCosineNormFloor || nb < kCosineNormFloor) return 0.0;
  return dot(a, b) / (na * nb);
}

void cosine_backward(std::span<const double> a, std::span<const double> b, double dcos,
                     std::span<double> da, std::span<double> db) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < kCosineNormFloor || nb < kCosineNormFloor || dcos == 0.0) return;
  const double cos = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  if (!da.empty()) {
    for (std::size_t i = 0; i < a.size(); ++i)
      da[i] += dcos * (b[i] * inv - cos * a[i] / (na * na));
  }
  if (!db.empty()) {
    for (std::size_t i = 0; i < b.size(); ++i)
      db[i] += dcos * (a[i] * inv - cos * b[i] / (nb * nb));
  }
}

LstmCellParams::LstmCellParams(const std::string& prefix, std::size_t input_width,
                               std::size_t hidden_width)
    : w_input(prefix + ".w_input", 4 * hidden_width, input_width),
      w_hidden(prefix + ".w_hidden", 4 * hidden_width, hidden_width),
      bias(prefix + ".bias", 4 * hidden_width, 1) {}

void LstmCellParams::init(std::mt19937_64& rng, double forget_bias) {
  init_uniform(w_input, input_width(), rng);
  init_uniform(w_hidden, hidden_width(), rng);
  bias.value.fill(0.0);
  const std::size_t d = hidden_width();
  for (std::size_t k = d; k < 2 * d; ++k) bias.value[k] = forget_bias;
  bias.zero_grad();
}

LstmCache lstm_cell(const LstmCellParams& p, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev) {
  const std::size_t d = p.hidden_width();
  check_len(x, p.input_width(), "lstm_cell x");
  check_len(h_prev, d, "lstm_cell h_prev");
  check_len(c_prev, d, "lstm_cell c_prev");

  Vec pre = linear_forward(p.w_input.value, p.bias.value.flat(), x);
  const Matrix& wh = p.w_hidden.value;
  for (std::size_t r = 0; r < 4 * d; ++r) {
    auto row = wh.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += row[c] * h_prev[c];
    pre[r] += s;
  }

  LstmCache k;
  k.x.assign(x.begin(), x.end());
  k.h_prev.assign(h_prev.begin(), h_prev.end());
  k.c_prev.assign(c_prev.begin(), c_prev.end());
  k.i.resize(d);
  k.f.resize(d);
  k.o.resize(d);
  k.g.resize(d);
  k.c.resize(d);
  k.tanh_c.resize(d);
  k.h.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    k.i[j] = sigmoid(pre[j]);
    k.f[j] = sigmoid(pre[d + j]);
    k.o[j] = sigmoid(pre[2 * d + j]);
    k.g[j] = std::tanh(pre[3 * d + j]);
    k.c[j] = k.f[j] * c_prev[j] + k.i[j] * k.g[j];
    k.tanh_c[j] = std::tanh(k.c[j]);
    k.h[j] = k.o[j] * k.tanh_c[j];
  }
  return k;
}

LstmGradients lstm_cell_backward(const LstmCellParams& p, const LstmCache& k,
                                 std::span<const double> dh, std::span<const double> dc,
                                 LstmCellParams& grads) {
  const std::size_t d = p.hidden_width();
  check_len(dh, d, "lstm_cell_backward dh");
  check_len(dc, d, "lstm_cell_backward dc");

  Vec dpre(4 * d);
  LstmGradients out;
  out.dc_prev.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double dct = dc[j] + dh[j] * k.o[j] * (1.0 - k.tanh_c[j] * k.tanh_c[j]);
    const double di = dct * k.g[j];
    const double df = dct * k.c_prev[j];
    const double dout = dh[j] * k.tanh_c[j];
    const double dg = dct * k.i[j];
    dpre[j] = di * k.i[j] * (1.0 - k.i[j]);
    dpre[d + j] = df * k.f[j] * (1.0 - k.f[j]);
    dpre[2 * d + j] = dout * k.o[j] * (1.0 - k.o[j]);
    dpre[3 * d + j] = dg * (1.0 - k.g[j] * k.g[j]);
    out.dc_prev[j] = dct * k.f[j];
  }
  out.dx.assign(k.x.size(), 0.0);
  out.dh_prev.assign(d, 0.0);
  linear_backward(p.w_input.value, k.x, dpre, grads.w_input.grad, grads.bias.grad.flat(), out.dx);
  linear_backward(p.w_hidden.value, k.h_prev, dpre, grads.w_hidden.grad, {}, out.dh_prev);
  return out;
}

}  // namespace tcem
